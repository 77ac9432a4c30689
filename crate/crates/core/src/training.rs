//! Joint fitting of the physical scalars and the CNN closure through trajectory rollouts.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::hybrid::{HybridModel, Misfit, N_PHYS};
use crate::io::{Trajectory, TrajectoryDataset};

/// Exponentially decaying learning rate with a floor, updated once per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub start: f64,
    pub floor: f64,
    pub decay: f64,
}

impl LrSchedule {
    pub const PHY: Self = Self {
        start: 0.01,
        floor: 0.001,
        decay: 0.9,
    };
    pub const NN: Self = Self {
        start: 5e-4,
        floor: 1e-4,
        decay: 0.95,
    };

    pub fn at(&self, epoch: usize) -> f64 {
        (self.start * self.decay.powi(epoch as i32)).max(self.floor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Phy,
    Nn,
}

/// Default schedule for a parameter group.
pub fn lr_schedule(group: Group, epoch: usize) -> f64 {
    match group {
        Group::Phy => LrSchedule::PHY.at(epoch),
        Group::Nn => LrSchedule::NN.at(epoch),
    }
}

/// AdaBelief moments for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaBelief {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdaBelief {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            s: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adabelief",
                format!("{} params, {} grads, state {}", params.len(), grads.len(), self.m.len()),
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("optimizer gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, s)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.s.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            let d = g - *m;
            *s = self.beta2 * *s + (1.0 - self.beta2) * d * d + self.eps;
            let m_hat = *m / bc1;
            let s_hat = *s / bc2;
            *p -= lr * m_hat / (s_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub phase_switch: usize,
    pub val_fraction: f64,
    pub phy: LrSchedule,
    pub nn: LrSchedule,
    pub train_delta: bool,
    pub train_u1: bool,
    pub seed: u64,
    /// Consecutive batches allowed to blow up before training aborts.
    pub max_blowups: usize,
}

impl TrainConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        Self {
            k: cfg.obs_interval,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            phase_switch: cfg.phase_switch,
            val_fraction: cfg.val_fraction,
            phy: LrSchedule {
                start: cfg.lr_phy_start,
                floor: cfg.lr_phy_floor,
                decay: cfg.lr_phy_decay,
            },
            nn: LrSchedule {
                start: cfg.lr_nn_start,
                floor: cfg.lr_nn_floor,
                decay: cfg.lr_nn_decay,
            },
            train_delta: cfg.train_delta,
            train_u1: cfg.train_u1,
            seed: cfg.train_seed,
            max_blowups: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.batch_size == 0 || self.phase_switch > self.epochs {
            return Err(Error::InvalidParam(
                "training needs k >= 1, batch size >= 1 and phase switch <= epochs".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub delta: Vec<f64>,
    pub u1: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,delta,U1\n");
        for e in 0..self.len() {
            writeln!(
                s,
                "{},{:e},{:e},{:e},{:e}",
                e + 1,
                self.train_loss[e],
                self.val_loss[e],
                self.delta[e],
                self.u1[e]
            )
            .unwrap();
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub theta: Vec<f64>,
    pub best_epoch: usize,
    pub history: TrainHistory,
    /// Indices of the trajectories held out for validation.
    pub validation: Vec<usize>,
}

fn misfits(hm: &HybridModel, theta: &[f64], batch: &[&Trajectory], k: usize, with_grad: bool) -> Result<Vec<Misfit>> {
    batch
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            hm.misfit(theta, t, k, with_grad)
                .map_err(|e| e.context(format!("trajectory {i} of batch")))
        })
        .collect()
}

/// Batch mean of per-trajectory MSE over observations `1..=N`.
pub fn trajectory_loss(hm: &HybridModel, theta: &[f64], batch: &[&Trajectory], k: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let ms = misfits(hm, theta, batch, k, false)?;
    Ok(ms.iter().map(Misfit::mse).sum::<f64>() / batch.len() as f64)
}

/// Loss together with its gradient with respect to `theta`.
pub fn trajectory_loss_grad(
    hm: &HybridModel,
    theta: &[f64],
    batch: &[&Trajectory],
    k: usize,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let ms = misfits(hm, theta, batch, k, true)?;
    let b = batch.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for m in &ms {
        let w = 1.0 / (m.points as f64 * b);
        loss += m.ssr * w;
        for (g, x) in grad.iter_mut().zip(&m.grad) {
            *g += w * x;
        }
    }
    Ok((loss, grad))
}

/// Deterministic held-out split by trajectory.
pub fn split_validation(count: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = if fraction > 0.0 && count >= 2 {
        ((count as f64 * fraction).round() as usize).clamp(1, count - 1)
    } else {
        0
    };
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn pooled_variance(ds: &TrajectoryDataset) -> f64 {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for t in &ds.trajectories {
        for q in &t.states {
            for &x in q.re() {
                n += 1.0;
                s += x;
                s2 += x * x;
            }
        }
    }
    let mean = s / n;
    (s2 / n - mean * mean).max(f64::MIN_POSITIVE)
}

/// Two-phase training. Phase 1 updates both groups; from `phase_switch` on only
/// the CNN moves. Gradients are taken of the loss divided by the pooled state
/// variance so that the optimizer epsilon stays negligible; reported losses are raw.
pub fn train(hm: &HybridModel, data: &TrajectoryDataset, theta0: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if theta0.len() != hm.dim() {
        return Err(Error::shape("theta", format!("length {}, expected {}", theta0.len(), hm.dim())));
    }
    if data.trajectories.is_empty() {
        return Err(Error::InvalidParam("empty training dataset".into()));
    }
    let (train_idx, val_idx) = split_validation(data.trajectories.len(), cfg.val_fraction, cfg.seed);
    let val: Vec<&Trajectory> = val_idx.iter().map(|&i| &data.trajectories[i]).collect();
    let scale = 1.0 / pooled_variance(data);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut theta = theta0.to_vec();
    let mut opt_phy = AdaBelief::new(N_PHYS);
    let mut opt_nn = AdaBelief::new(theta.len() - N_PHYS);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut order = train_idx.clone();
    let mut blowups = 0;
    for epoch in 0..cfg.epochs {
        let phase1 = epoch < cfg.phase_switch;
        let lr_phy = cfg.phy.at(epoch);
        let lr_nn = cfg.nn.at(epoch);
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &data.trajectories[i]).collect();
            let (loss, mut grad) = match trajectory_loss_grad(hm, &theta, &batch, cfg.k) {
                Ok(r) => r,
                Err(e) if e.is_blowup() => {
                    blowups += 1;
                    if blowups >= cfg.max_blowups {
                        return Err(e.context(format!("training aborted after {blowups} consecutive blowups in epoch {}", epoch + 1)));
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            blowups = 0;
            grad.iter_mut().for_each(|g| *g *= scale);
            sum += loss * batch.len() as f64;
            count += batch.len();
            if phase1 {
                let mut gp = grad[..N_PHYS].to_vec();
                if !cfg.train_delta {
                    gp[0] = 0.0;
                }
                if !cfg.train_u1 {
                    gp[1] = 0.0;
                }
                opt_phy.update(&mut theta[..N_PHYS], &gp, lr_phy)?;
                if !cfg.train_delta {
                    theta[0] = theta0[0];
                }
                if !cfg.train_u1 {
                    theta[1] = theta0[1];
                }
            }
            opt_nn.update(&mut theta[N_PHYS..], &grad[N_PHYS..], lr_nn)?;
        }
        let train_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            trajectory_loss(hm, &theta, &val, cfg.k).unwrap_or(f64::INFINITY)
        };
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.delta.push(theta[0]);
        history.u1.push(theta[1]);
        if val_loss.is_finite() && best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch + 1, theta.clone()));
        }
    }
    let (best_epoch, theta) = match best {
        Some((_, e, t)) => (e, t),
        None => (0, theta0.to_vec()),
    };
    Ok(TrainOutcome {
        theta,
        best_epoch,
        history,
        validation: val_idx,
    })
}
