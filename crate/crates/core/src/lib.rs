//! Hybrid physics/ML two-layer quasi-geostrophic modelling.
//!
//! A differentiable pseudo-spectral solver whose physical parameters and neural
//! sub-grid closure are fitted jointly through trajectory rollouts, followed by
//! stochastic-gradient HMC over both and posterior-predictive forecast ensembles.

pub mod autodiff;
pub mod bayes;
pub mod closures;
pub mod coarse;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod hybrid;
pub mod io;
pub mod pipeline;
pub mod qg;
pub mod training;

pub use error::{Error, Result};
