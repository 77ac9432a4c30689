use crate::autodiff::{fft, Tensor};
use crate::error::{Error, Result};

use super::model::QgModel;
use super::params::PhysicalParams;

/// Thickness-weighted domain-mean kinetic energy `sum_i w_i <|grad psi_i|^2> / 2`, from grid gradients.
pub fn total_kinetic_energy(q: &Tensor, params: &PhysicalParams) -> Result<f64> {
    QgModel::new(params)?.kinetic_energy(q)
}

impl QgModel {
    /// Kinetic energy with the gradients evaluated on the grid.
    pub fn kinetic_energy(&self, q: &Tensor) -> Result<f64> {
        if !q.all_finite() {
            return Err(Error::NonFinite("kinetic energy of a non-finite state".into()));
        }
        let qh = fft::rfft2(q)?;
        let psih = self.invert(&qh)?;
        let (ikx, iky) = self.derivative_tables();
        let (ikx, iky) = (ikx.cx(), iky.cx());
        let m = ikx.len();
        let ph = psih.cx();
        let dx: Vec<_> = ph.iter().enumerate().map(|(i, &c)| c * ikx[i % m]).collect();
        let dy: Vec<_> = ph.iter().enumerate().map(|(i, &c)| c * iky[i % m]).collect();
        let shape = psih.shape().to_vec();
        let u = fft::irfft2(&Tensor::complex(&shape, dy)?, self.params().nx)?;
        let v = fft::irfft2(&Tensor::complex(&shape, dx)?, self.params().nx)?;
        let n = self.params().nx * self.params().ny;
        let w = self.params().layer_weights();
        let mut ke = 0.0;
        for l in 0..2 {
            let s: f64 = u.re()[l * n..(l + 1) * n]
                .iter()
                .zip(&v.re()[l * n..(l + 1) * n])
                .map(|(a, b)| a * a + b * b)
                .sum();
            ke += w[l] * s / n as f64 / 2.0;
        }
        Ok(ke)
    }

    /// Kinetic energy from the stream-function spectrum via Parseval.
    pub fn kinetic_energy_spectral(&self, q: &Tensor) -> Result<f64> {
        let qh = fft::rfft2(q)?;
        let psih = self.invert(&qh)?;
        let g = self.grid();
        let kx = g.kx_deriv();
        let ky = g.ky_deriv();
        let nh = g.nh();
        let n = (g.nx() * g.ny()) as f64;
        let w = self.params().layer_weights();
        let ph = psih.cx();
        let m = g.ny() * nh;
        let mut ke = 0.0;
        for l in 0..2 {
            let mut s = 0.0;
            for j in 0..g.ny() {
                for i in 0..nh {
                    let k2 = kx[i] * kx[i] + ky[j] * ky[j];
                    s += fft::column_weight(i, g.nx()) * k2 * ph[l * m + j * nh + i].norm_sqr();
                }
            }
            ke += w[l] * s / (n * n) / 2.0;
        }
        Ok(ke)
    }
}
