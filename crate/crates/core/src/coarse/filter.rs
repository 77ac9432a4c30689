use std::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::qg::SpectralGrid;

/// Exponential spectral low-pass: identity below `cutoff`, `exp(-a ((k - k_c) dx)^p)` above.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSpec {
    /// `k_c`, 1/m.
    pub cutoff: f64,
    /// Grid spacing that scales the roll-off, m.
    pub dx: f64,
    pub attenuation: f64,
    pub exponent: i32,
}

impl FilterSpec {
    pub const ATTENUATION: f64 = 23.6;
    pub const EXPONENT: i32 = 4;
    pub const CUTOFF_FRACTION: f64 = 0.65;

    /// Cutoff at `fraction` of the Nyquist wavenumber of a grid with spacing `dx`.
    pub fn for_spacing(dx: f64, fraction: f64) -> Result<Self> {
        let spec = Self {
            cutoff: fraction * PI / dx,
            dx,
            attenuation: Self::ATTENUATION,
            exponent: Self::EXPONENT,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The default filter for a grid of `n` points on a domain of length `l`.
    pub fn for_grid(l: f64, n: usize) -> Self {
        Self::for_spacing(l / n as f64, Self::CUTOFF_FRACTION).expect("positive spacing")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !(self.dx > 0.0) || !(self.attenuation >= 0.0) {
            return Err(Error::InvalidParam(format!("invalid filter spec {self:?}")));
        }
        Ok(())
    }

    pub fn transfer(&self, kappa: f64) -> f64 {
        if kappa < self.cutoff {
            1.0
        } else {
            (-self.attenuation * ((kappa - self.cutoff) * self.dx).powi(self.exponent)).exp()
        }
    }

    /// Transfer function sampled on the half spectrum of `grid`, shape `(ny, nx/2+1)`.
    pub fn table(&self, grid: &SpectralGrid) -> Tensor {
        let data = grid.kappa2().iter().map(|k2| self.transfer(k2.sqrt())).collect();
        Tensor::real(&[grid.ny(), grid.nh()], data).expect("grid shape")
    }
}

/// Multiplies every coefficient of a half spectrum `(.., ny, nh)` by the transfer function.
pub fn apply_filter(field_spec: &Tensor, spec: &FilterSpec, grid: &SpectralGrid) -> Result<Tensor> {
    let s = field_spec.shape();
    if s.len() < 2 || s[s.len() - 2] != grid.ny() || s[s.len() - 1] != grid.nh() {
        return Err(Error::shape(
            "apply_filter",
            format!("field {:?} on a {}x{} grid", s, grid.ny(), grid.nx()),
        ));
    }
    let data = field_spec
        .as_complex()
        .ok_or_else(|| Error::dtype("apply_filter", "expected a complex spectrum"))?;
    let m = grid.ny() * grid.nh();
    let kappa2 = grid.kappa2();
    let out = data
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let k = kappa2[i % m].sqrt();
            if k < spec.cutoff {
                c
            } else {
                c * spec.transfer(k)
            }
        })
        .collect();
    Tensor::complex(s, out)
}
