//! Binary run artefacts and the plain-text manifest.

mod bytes;
mod checkpoint;
mod dataset;
mod ensemble;

use std::path::Path;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{Trajectory, TrajectoryDataset, DATASET_MAGIC, DATASET_VERSION};
pub use ensemble::{SampleSet, ENSEMBLE_MAGIC, ENSEMBLE_VERSION};

use crate::error::Result;

/// Ordered `key=value` lines describing what a run directory contains.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Self { entries }
    }

    /// Merges into an existing manifest at `path`, creating it if absent.
    pub fn update(path: &Path, f: impl FnOnce(&mut Manifest)) -> Result<()> {
        let mut m = match std::fs::read_to_string(path) {
            Ok(t) => Self::parse(&t),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Self::default(),
            Err(e) => return Err(e.into()),
        };
        f(&mut m);
        std::fs::write(path, m.to_text())?;
        Ok(())
    }
}
