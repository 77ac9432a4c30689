//! Pseudo-spectral two-layer quasi-geostrophic dynamics on a doubly periodic domain.

mod energy;
mod grid;
mod model;
mod params;

pub use energy::total_kinetic_energy;
pub use grid::SpectralGrid;
pub use model::{
    invert, rollout, step_ab3, tendency, Closure, ConstantClosure, ModelState, NoClosure, PhysVars, QgModel,
    TapeClosure, TapeState,
};
pub use params::{PhysicalParams, PvGradient, Trainable};
