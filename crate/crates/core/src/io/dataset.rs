use std::path::Path;

use super::bytes::{Reader, Writer};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"DQGD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 48;

/// `N + 1` coarse observations spaced `k` solver steps apart.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Index of the truth simulation the window was cut from.
    pub sim: usize,
    /// Model time of the first observation, s.
    pub t0: f64,
    pub states: Vec<Tensor>,
    /// Sub-grid tendency at each observation, when stored.
    pub targets: Option<Vec<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub nx: usize,
    pub ny: usize,
    pub layers: usize,
    pub dt: f64,
    pub k: usize,
    pub n_obs: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn field_len(&self) -> usize {
        self.layers * self.ny * self.nx
    }

    pub fn has_targets(&self) -> bool {
        self.trajectories.first().is_some_and(|t| t.targets.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let shape = [self.layers, self.ny, self.nx];
        let with_targets = self.has_targets();
        for (i, t) in self.trajectories.iter().enumerate() {
            let ctx = |m: String| Error::InvalidParam(format!("trajectory {i}: {m}"));
            if t.states.len() != self.n_obs + 1 {
                return Err(ctx(format!("{} states, expected {}", t.states.len(), self.n_obs + 1)));
            }
            if t.targets.is_some() != with_targets {
                return Err(ctx("targets present on some trajectories only".into()));
            }
            let fields = t.states.iter().chain(t.targets.iter().flatten());
            for f in fields {
                if f.shape() != shape {
                    return Err(ctx(format!("field shape {:?}, expected {:?}", f.shape(), shape)));
                }
                if !f.all_finite() {
                    return Err(ctx("non-finite value".into()));
                }
            }
            if let Some(ts) = &t.targets {
                if ts.len() != t.states.len() {
                    return Err(ctx("target count differs from state count".into()));
                }
            }
        }
        Ok(())
    }

    /// Copy keeping the first `n_obs + 1` observations of every trajectory.
    pub fn truncated(&self, n_obs: usize) -> Result<Self> {
        if n_obs == 0 || n_obs > self.n_obs {
            return Err(Error::InvalidParam(format!("cannot truncate {} observations to {n_obs}", self.n_obs)));
        }
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| Trajectory {
                sim: t.sim,
                t0: t.t0,
                states: t.states[..=n_obs].to_vec(),
                targets: t.targets.as_ref().map(|v| v[..=n_obs].to_vec()),
            })
            .collect();
        Ok(Self {
            n_obs,
            trajectories,
            ..self.clone()
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let with_targets = self.has_targets();
        let mut w = Writer::default();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION as usize)?;
        w.u32(self.nx)?;
        w.u32(self.ny)?;
        w.u32(self.layers)?;
        w.u32(self.n_obs)?;
        w.u32(self.k)?;
        w.u32(self.trajectories.len())?;
        w.u32(with_targets as usize)?;
        w.u32(0)?;
        w.f64(self.dt);
        for t in &self.trajectories {
            w.u32(t.sim)?;
            w.u32(0)?;
            w.f64(t.t0);
            for s in &t.states {
                w.f64s(s.re());
            }
            for s in t.targets.iter().flatten() {
                w.f64s(s.re());
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(DATASET_MAGIC)?;
        r.version(DATASET_VERSION)?;
        let nx = r.u32()?;
        let ny = r.u32()?;
        let layers = r.u32()?;
        let n_obs = r.u32()?;
        let k = r.u32()?;
        let count = r.u32()?;
        let flags_at = r.pos();
        let flags = r.u32()?;
        if flags > 1 {
            return Err(Error::format(flags_at, format!("unknown flags {flags:#x}")));
        }
        let _reserved = r.u32()?;
        let dt = r.f64()?;
        debug_assert_eq!(r.pos(), HEADER_LEN);
        let with_targets = flags == 1;
        let fields_per_record = if with_targets { 2 } else { 1 };
        let payload = n_obs
            .checked_add(1)
            .and_then(|f| f.checked_mul(fields_per_record))
            .and_then(|f| f.checked_mul(layers))
            .and_then(|f| f.checked_mul(ny))
            .and_then(|f| f.checked_mul(nx))
            .and_then(|f| f.checked_mul(8))
            .and_then(|f| f.checked_add(16))
            .and_then(|f| f.checked_mul(count))
            .ok_or_else(|| Error::format(8, "header dimensions overflow"))?;
        r.expect_remaining(payload, &format!("{count} trajectories"))?;
        let mut ds = Self {
            nx,
            ny,
            layers,
            dt,
            k,
            n_obs,
            trajectories: Vec::with_capacity(count),
        };
        let shape = [layers, ny, nx];
        let read_fields = |r: &mut Reader| -> Result<Vec<Tensor>> {
            (0..=n_obs)
                .map(|_| Tensor::real(&shape, r.f64s(layers * ny * nx)?))
                .collect()
        };
        for _ in 0..count {
            let sim = r.u32()?;
            let _ = r.u32()?;
            let t0 = r.f64()?;
            let states = read_fields(&mut r)?;
            let targets = if with_targets { Some(read_fields(&mut r)?) } else { None };
            ds.trajectories.push(Trajectory {
                sim,
                t0,
                states,
                targets,
            });
        }
        r.finish()?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
