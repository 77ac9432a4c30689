use std::path::Path;

use super::bytes::{Reader, Writer};
use crate::autodiff::Tensor;
use crate::closures::{CnnArch, CnnParams, Normalization};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained closure weights together with the physical scalars fitted alongside them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub cnn: CnnParams,
    pub delta: f64,
    pub u1: f64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.cnn;
        p.arch.validate()?;
        p.norm.validate()?;
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION as usize)?;
        w.u32(p.arch.channels.len())?;
        w.u32(p.arch.in_channels)?;
        w.u32(p.arch.kernel)?;
        for &c in &p.arch.channels {
            w.u32(c)?;
        }
        for t in &p.weights {
            w.f64s(t.re());
        }
        for t in &p.biases {
            w.f64s(t.re());
        }
        for v in [&p.norm.in_mean, &p.norm.in_std, &p.norm.out_mean, &p.norm.out_std] {
            w.f64s(v);
        }
        w.f64(self.delta);
        w.f64(self.u1);
        Ok(w.buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let layers_at = r.pos();
        let n_layers = r.u32()?;
        let in_channels = r.u32()?;
        let kernel = r.u32()?;
        if n_layers == 0 || n_layers > 1024 {
            return Err(Error::format(layers_at, format!("implausible layer count {n_layers}")));
        }
        let channels = (0..n_layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let arch = CnnArch {
            in_channels,
            channels,
            kernel,
        };
        arch.validate().map_err(|e| Error::format(layers_at, e.to_string()))?;
        let c = in_channels;
        let payload = (arch.param_count() + 4 * c + 2) * 8;
        r.expect_remaining(payload, "checkpoint payload")?;
        let dims = arch.layer_dims();
        let mut weights = Vec::with_capacity(n_layers);
        for &(o, i) in &dims {
            weights.push(Tensor::real(&[o, i, kernel, kernel], r.f64s(o * i * kernel * kernel)?)?);
        }
        let mut biases = Vec::with_capacity(n_layers);
        for &(o, _) in &dims {
            biases.push(Tensor::real(&[o], r.f64s(o)?)?);
        }
        let norm = Normalization {
            in_mean: r.f64s(c)?,
            in_std: r.f64s(c)?,
            out_mean: r.f64s(c)?,
            out_std: r.f64s(c)?,
        };
        let delta = r.f64()?;
        let u1 = r.f64()?;
        r.finish()?;
        Ok(Self {
            cnn: CnnParams {
                arch,
                weights,
                biases,
                norm,
            },
            delta,
            u1,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
