use std::path::Path;

use super::bytes::{Reader, Writer};
use crate::error::{Error, Result};

pub const ENSEMBLE_MAGIC: &[u8; 4] = b"DPEN";
pub const ENSEMBLE_VERSION: u32 = 1;

/// Retained posterior samples, each a flat parameter vector of length `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub dim: usize,
    pub samples: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    /// Sampler iteration each sample was drawn at.
    pub iterations: Vec<u64>,
}

impl SampleSet {
    pub fn validate(&self) -> Result<()> {
        let n = self.samples.len();
        if self.log_posterior.len() != n || self.iterations.len() != n {
            return Err(Error::InvalidParam("sample set columns differ in length".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| s.len() != self.dim) {
            return Err(Error::InvalidParam(format!("sample {i} has length {}, expected {}", self.samples[i].len(), self.dim)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer::default();
        w.bytes(ENSEMBLE_MAGIC);
        w.u32(ENSEMBLE_VERSION as usize)?;
        w.u32(self.dim)?;
        w.u32(self.samples.len())?;
        for s in &self.samples {
            w.f64s(s);
        }
        w.f64s(&self.log_posterior);
        for &it in &self.iterations {
            w.u64(it);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(ENSEMBLE_MAGIC)?;
        r.version(ENSEMBLE_VERSION)?;
        let dim = r.u32()?;
        let count = r.u32()?;
        let payload = dim
            .checked_add(2)
            .and_then(|d| d.checked_mul(count))
            .and_then(|d| d.checked_mul(8))
            .ok_or_else(|| Error::format(8, "header dimensions overflow"))?;
        r.expect_remaining(payload, &format!("{count} samples of dimension {dim}"))?;
        let samples = (0..count).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
        let log_posterior = r.f64s(count)?;
        let iterations = (0..count).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            dim,
            samples,
            log_posterior,
            iterations,
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
