//! Spectral coarse-graining from the high-resolution grid to the low-resolution grid,
//! and the sub-grid tendency targets built from it.

mod filter;

pub use filter::{apply_filter, FilterSpec};

use num_complex::Complex64;

use crate::autodiff::{fft, Tensor};
use crate::error::{Error, Result};
use crate::qg::{PhysicalParams, QgModel, SpectralGrid};

/// A coarse state and its sub-grid tendency target, both `(2, ny_lo, nx_lo)`.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub q: Tensor,
    pub s: Tensor,
    /// Model time of the snapshot, s.
    pub time: f64,
}

/// Filter-then-truncate projection from one periodic grid onto a coarser one.
#[derive(Clone, Debug)]
pub struct Coarsener {
    hi: SpectralGrid,
    nx_lo: usize,
    ny_lo: usize,
    spec: FilterSpec,
    transfer: Vec<f64>,
    /// For each low-res half-spectrum slot, the high-res slot it copies, or `None` for a zeroed Nyquist mode.
    map: Vec<Option<usize>>,
}

impl Coarsener {
    pub fn new(nx_hi: usize, ny_hi: usize, nx_lo: usize, ny_lo: usize, length: f64, spec: FilterSpec) -> Result<Self> {
        if nx_lo > nx_hi || ny_lo > ny_hi {
            return Err(Error::InvalidParam(format!(
                "cannot coarsen {nx_hi}x{ny_hi} onto a finer {nx_lo}x{ny_lo} grid"
            )));
        }
        if nx_lo % 2 != 0 || ny_lo % 2 != 0 || nx_hi % 2 != 0 || ny_hi % 2 != 0 || nx_lo == 0 || ny_lo == 0 {
            return Err(Error::InvalidParam("grid sizes must be even and positive".into()));
        }
        spec.validate()?;
        let hi = SpectralGrid::new(nx_hi, ny_hi, length);
        let transfer = hi.kappa2().iter().map(|k2| spec.transfer(k2.sqrt())).collect();
        let nh_lo = fft::half_width(nx_lo);
        let nh_hi = hi.nh();
        let mut map = Vec::with_capacity(ny_lo * nh_lo);
        for j in 0..ny_lo {
            let f = if j < ny_lo / 2 { j as i64 } else { j as i64 - ny_lo as i64 };
            for i in 0..nh_lo {
                if j == ny_lo / 2 || i == nx_lo / 2 {
                    map.push(None);
                } else {
                    let jh = f.rem_euclid(ny_hi as i64) as usize;
                    map.push(Some(jh * nh_hi + i));
                }
            }
        }
        Ok(Self {
            hi,
            nx_lo,
            ny_lo,
            spec,
            transfer,
            map,
        })
    }

    /// The default projection between two square grids of the same physics.
    pub fn between(hi: &PhysicalParams, lo: &PhysicalParams) -> Result<Self> {
        Self::new(
            hi.nx,
            hi.ny,
            lo.nx,
            lo.ny,
            hi.domain_length,
            FilterSpec::for_grid(lo.domain_length, lo.nx),
        )
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn hi_grid(&self) -> &SpectralGrid {
        &self.hi
    }

    /// Low-res half spectrum (unscaled forward-FFT convention) of a high-res grid field.
    pub fn coarsen_spectrum(&self, field_hi: &Tensor) -> Result<Tensor> {
        let fs = field_hi.shape();
        if fs.len() < 2 || fs[fs.len() - 2] != self.hi.ny() || fs[fs.len() - 1] != self.hi.nx() {
            return Err(Error::shape(
                "coarsen",
                format!("field {:?} on a {}x{} grid", fs, self.hi.ny(), self.hi.nx()),
            ));
        }
        let spec_hi = fft::rfft2(field_hi)?;
        let data = spec_hi.cx();
        let m_hi = self.hi.ny() * self.hi.nh();
        let batch = data.len() / m_hi;
        let scale = (self.nx_lo * self.ny_lo) as f64 / (self.hi.nx() * self.hi.ny()) as f64;
        let mut out = Vec::with_capacity(batch * self.map.len());
        for b in 0..batch {
            let src = &data[b * m_hi..(b + 1) * m_hi];
            out.extend(self.map.iter().map(|slot| match *slot {
                Some(h) => src[h] * (self.transfer[h] * scale),
                None => Complex64::new(0.0, 0.0),
            }));
        }
        let mut shape = fs[..fs.len() - 2].to_vec();
        shape.extend([self.ny_lo, fft::half_width(self.nx_lo)]);
        Tensor::complex(&shape, out)
    }

    /// Filtered, truncated grid field on the low-res grid.
    pub fn coarsen(&self, field_hi: &Tensor) -> Result<Tensor> {
        fft::irfft2(&self.coarsen_spectrum(field_hi)?, self.nx_lo)
    }
}

/// Coarse-grains `field_hi` onto an `nx_lo x ny_lo` grid of the same domain.
pub fn coarsen(field_hi: &Tensor, nx_lo: usize, ny_lo: usize, spec: &FilterSpec, length: f64) -> Result<Tensor> {
    let s = field_hi.shape();
    if s.len() < 2 {
        return Err(Error::shape("coarsen", format!("need rank >= 2, got {s:?}")));
    }
    Coarsener::new(s[s.len() - 1], s[s.len() - 2], nx_lo, ny_lo, length, *spec)?.coarsen(field_hi)
}

/// High-res and low-res models plus the projection between them.
#[derive(Clone, Debug)]
pub struct SubgridOperator {
    pub hi: QgModel,
    pub lo: QgModel,
    pub coarsener: Coarsener,
}

impl SubgridOperator {
    pub fn new(params_hi: &PhysicalParams, params_lo: &PhysicalParams, spec: &FilterSpec) -> Result<Self> {
        let same = PhysicalParams {
            nx: params_lo.nx,
            ny: params_lo.ny,
            ..params_hi.clone()
        };
        if &same != params_lo {
            return Err(Error::InvalidParam(
                "high- and low-res parameters must differ only in grid size".into(),
            ));
        }
        Ok(Self {
            hi: QgModel::new(params_hi)?,
            lo: QgModel::new(params_lo)?,
            coarsener: Coarsener::new(
                params_hi.nx,
                params_hi.ny,
                params_lo.nx,
                params_lo.ny,
                params_hi.domain_length,
                *spec,
            )?,
        })
    }

    /// `coarsen(dq/dt|hi) - dq/dt|lo(coarsen(q))`, without any closure.
    pub fn pair(&self, q_hi: &Tensor, time: f64) -> Result<TrainingPair> {
        let dq_hi = self.hi.tendency(q_hi, None)?;
        let q = self.coarsener.coarsen(q_hi)?;
        let dq_lo = self.lo.tendency(&q, None)?;
        let s = self.coarsener.coarsen(&dq_hi)?.sub(&dq_lo);
        Ok(TrainingPair { q, s, time })
    }
}

/// Sub-grid total tendency of the high-res snapshot `q_hi`.
pub fn subgrid_tendency(
    q_hi: &Tensor,
    params_hi: &PhysicalParams,
    params_lo: &PhysicalParams,
    spec: &FilterSpec,
) -> Result<TrainingPair> {
    SubgridOperator::new(params_hi, params_lo, spec)?.pair(q_hi, 0.0)
}
