//! Truth simulations at high resolution, coarse-grained into trajectory datasets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::coarse::{FilterSpec, SubgridOperator};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::{Trajectory, TrajectoryDataset};
use crate::qg::{ModelState, NoClosure, QgModel};

/// Train and test datasets from one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedData {
    pub train: TrajectoryDataset,
    pub test: TrajectoryDataset,
}

/// Layout of observation windows along one simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Windowing {
    /// Solver steps between observations.
    pub k: usize,
    /// Forecast targets per window; windows hold `n_obs + 1` observations.
    pub n_obs: usize,
    /// Skipped observation slots between windows.
    pub gap: usize,
    pub with_targets: bool,
}

impl Windowing {
    fn period(&self) -> usize {
        self.n_obs + 1 + self.gap
    }

    /// Number of complete windows in `steps` post-spin-up solver steps.
    pub fn count(&self, steps: usize) -> usize {
        let last_obs = steps / self.k;
        if last_obs < self.n_obs {
            0
        } else {
            (last_obs - self.n_obs) / self.period() + 1
        }
    }
}

fn sim_seed(seed: u64, sim: usize) -> u64 {
    seed ^ (sim as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Sum of random-amplitude, random-phase Fourier modes with `|kx|, |ky| <= kmax` in each layer.
pub fn initial_condition(n: usize, kmax: usize, amplitude: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = kmax as i64;
    let mut data = vec![0.0; 2 * n * n];
    for layer in 0..2 {
        let plane = &mut data[layer * n * n..(layer + 1) * n * n];
        for kx in -kmax..=kmax {
            for ky in 0..=kmax {
                if (kx, ky) == (0, 0) {
                    continue;
                }
                let a = amplitude * (rng.random::<f64>() - 0.5);
                let phase = 2.0 * PI * rng.random::<f64>();
                for y in 0..n {
                    for x in 0..n {
                        let arg = 2.0 * PI * (kx as f64 * x as f64 + ky as f64 * y as f64) / n as f64 + phase;
                        plane[y * n + x] += a * arg.cos();
                    }
                }
            }
        }
    }
    Tensor::real(&[2, n, n], data).expect("shape")
}

/// Runs truth simulation `sim` and cuts its post-spin-up observations into windows.
pub fn simulate(cfg: &ExperimentConfig, sim: usize, win: Windowing) -> Result<Vec<Trajectory>> {
    let hi_params = cfg.truth_params(cfg.nx_hi);
    let lo_params = cfg.truth_params(cfg.nx_lo);
    let spec = FilterSpec::for_spacing(lo_params.dx(), cfg.filter_cutoff)?;
    let op = SubgridOperator::new(&hi_params, &lo_params, &spec)?;
    let model: &QgModel = &op.hi;
    let spin = cfg.steps_for_days(cfg.spinup_days);
    let total = cfg.steps_for_days(cfg.duration_days);
    let steps_after = total.saturating_sub(spin);
    if win.count(steps_after) == 0 {
        return Err(Error::Config(format!(
            "simulation of {total} steps with {spin} spin-up steps is too short for one window of {} x {} steps",
            win.n_obs, win.k
        )));
    }

    let q0 = initial_condition(cfg.nx_hi, cfg.ic_kmax, cfg.ic_amplitude, sim_seed(cfg.seed, sim));
    let mut state = ModelState::new(q0);
    let mut out = Vec::new();
    let mut current: Option<Trajectory> = None;
    let last_obs_step = spin + steps_after / win.k * win.k;
    for step in 0..=last_obs_step {
        if step >= spin && (step - spin) % win.k == 0 {
            let m = (step - spin) / win.k;
            let pos = m % win.period();
            if pos <= win.n_obs {
                let t = step as f64 * cfg.dt;
                let (q, s) = if win.with_targets {
                    let pair = op.pair(&state.q, t)?;
                    (pair.q, Some(pair.s))
                } else {
                    (op.coarsener.coarsen(&state.q)?, None)
                };
                let traj = current.get_or_insert_with(|| Trajectory {
                    sim,
                    t0: t,
                    states: Vec::new(),
                    targets: win.with_targets.then(Vec::new),
                });
                traj.states.push(q);
                if let (Some(ts), Some(s)) = (traj.targets.as_mut(), s) {
                    ts.push(s);
                }
                if pos == win.n_obs {
                    out.push(current.take().unwrap());
                }
            }
        }
        if step < last_obs_step {
            state = model
                .step(&state, &NoClosure)
                .map_err(|e| e.context(format!("truth simulation {sim}")))?;
        }
    }
    Ok(out)
}

fn dataset(cfg: &ExperimentConfig, sims: std::ops::Range<usize>, win: Windowing) -> Result<TrajectoryDataset> {
    let per_sim: Vec<Result<Vec<Trajectory>>> = sims.into_par_iter().map(|s| simulate(cfg, s, win)).collect();
    let mut trajectories = Vec::new();
    for r in per_sim {
        trajectories.extend(r?);
    }
    let ds = TrajectoryDataset {
        nx: cfg.nx_lo,
        ny: cfg.nx_lo,
        layers: 2,
        dt: cfg.dt,
        k: win.k,
        n_obs: win.n_obs,
        trajectories,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn train_windowing(cfg: &ExperimentConfig) -> Windowing {
    let gap_steps = cfg.steps_for_days(cfg.window_gap_days);
    Windowing {
        k: cfg.obs_interval,
        n_obs: cfg.n_obs,
        gap: gap_steps.div_ceil(cfg.obs_interval),
        with_targets: true,
    }
}

pub fn test_windowing(cfg: &ExperimentConfig) -> Windowing {
    Windowing {
        k: cfg.eval_cadence,
        n_obs: cfg.eval_steps / cfg.eval_cadence,
        gap: 0,
        with_targets: false,
    }
}

/// Truth simulations `0..train_sims` feed the training set, the next `test_sims` the test set.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let train = dataset(cfg, 0..cfg.train_sims, train_windowing(cfg))?;
    let test = dataset(cfg, cfg.train_sims..cfg.train_sims + cfg.test_sims, test_windowing(cfg))?;
    Ok(GeneratedData { train, test })
}
