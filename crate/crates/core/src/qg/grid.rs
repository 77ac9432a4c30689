use std::f64::consts::PI;

use crate::autodiff::fft::half_width;

/// Wavenumbers of the half spectrum of a doubly periodic square domain.
///
/// `ky` follows the FFT ordering `0, 1, .., ny/2-1, -ny/2, .., -1` (times `2 pi / L`);
/// `kx` holds the non-negative half `0 ..= nx/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGrid {
    nx: usize,
    ny: usize,
    length: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
    kappa2: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(nx: usize, ny: usize, length: f64) -> Self {
        let nh = half_width(nx);
        let dk = 2.0 * PI / length;
        let kx: Vec<f64> = (0..nh).map(|i| i as f64 * dk).collect();
        let ky: Vec<f64> = (0..ny)
            .map(|j| {
                let j = j as i64;
                let f = if j < (ny as i64) / 2 { j } else { j - ny as i64 };
                f as f64 * dk
            })
            .collect();
        let mut kappa2 = Vec::with_capacity(ny * nh);
        for &l in &ky {
            for &k in &kx {
                kappa2.push(k * k + l * l);
            }
        }
        Self {
            nx,
            ny,
            length,
            kx,
            ky,
            kappa2,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nh(&self) -> usize {
        self.kx.len()
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// `kx` with the Nyquist column zeroed, for odd (first-derivative) operators.
    pub fn kx_deriv(&self) -> Vec<f64> {
        let mut k = self.kx.clone();
        if let Some(last) = k.last_mut() {
            *last = 0.0;
        }
        k
    }

    /// `ky` with the Nyquist row zeroed, for odd (first-derivative) operators.
    pub fn ky_deriv(&self) -> Vec<f64> {
        let mut l = self.ky.clone();
        l[self.ny / 2] = 0.0;
        l
    }

    /// `kx^2 + ky^2`, row-major `(ny, nh)`.
    pub fn kappa2(&self) -> &[f64] {
        &self.kappa2
    }

    pub fn kappa(&self, j: usize, i: usize) -> f64 {
        self.kappa2[j * self.nh() + i].sqrt()
    }

    pub fn nyquist(&self) -> f64 {
        PI / self.dx()
    }

    /// Spectral shape `(ny, nh)`.
    pub fn spec_shape(&self) -> [usize; 2] {
        [self.ny, self.nh()]
    }
}
