//! Hierarchical posterior over `[theta, log lambda, log gamma]`, sampled with SG-HMC,
//! and posterior-predictive forecasts.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::autodiff::Tensor;
use crate::config::{ExperimentConfig, HyperpriorMode};
use crate::error::{Error, Result};
use crate::hybrid::{HybridModel, Misfit, DELTA, U1};
use crate::io::{SampleSet, TrajectoryDataset};

/// Gamma shapes and rates for `log lambda` (1) and `log gamma` (2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperpriors {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub mode: HyperpriorMode,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            beta1: 1.0,
            alpha2: 1.0,
            beta2: 1.0,
            mode: HyperpriorMode::Literal,
        }
    }
}

impl Hyperpriors {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        Self {
            alpha1: cfg.hyper_alpha1,
            beta1: cfg.hyper_beta1,
            alpha2: cfg.hyper_alpha2,
            beta2: cfg.hyper_beta2,
            mode: cfg.hyperprior_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha1, self.beta1, self.alpha2, self.beta2].iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParam("hyperprior shapes and rates must be > 0".into()))
        }
    }
}

/// `log Gamma(x | a, b)` with rate `b`; `-inf` outside `x > 0`.
pub fn gamma_log_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x
}

fn gamma_log_pdf_dx(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) / x - b
}

/// Laplace log density `sum_j log(lambda/2) - lambda |theta_j|`.
pub fn log_prior(theta: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParam(format!("Laplace rate must be > 0, got {lambda}")));
    }
    let l1: f64 = theta.iter().map(|t| t.abs()).sum();
    Ok(theta.len() as f64 * (lambda / 2.0).ln() - lambda * l1)
}

/// Hyperprior log density of the sampled coordinates `(log lambda, log gamma)`.
///
/// `Literal` places the Gamma densities on the log values themselves. `Reparameterized`
/// places them on `lambda` and `gamma` and adds the `log` Jacobian of the transform.
pub fn log_hyperprior(log_lambda: f64, log_gamma: f64, h: &Hyperpriors) -> f64 {
    match h.mode {
        HyperpriorMode::Literal => {
            gamma_log_pdf(log_lambda, h.alpha1, h.beta1) + gamma_log_pdf(log_gamma, h.alpha2, h.beta2)
        }
        HyperpriorMode::Reparameterized => {
            let (l, g) = (log_lambda.exp(), log_gamma.exp());
            gamma_log_pdf(l, h.alpha1, h.beta1) + gamma_log_pdf(g, h.alpha2, h.beta2) + log_lambda + log_gamma
        }
    }
}

fn log_hyperprior_grad(log_lambda: f64, log_gamma: f64, h: &Hyperpriors) -> [f64; 2] {
    match h.mode {
        HyperpriorMode::Literal => [
            gamma_log_pdf_dx(log_lambda, h.alpha1, h.beta1),
            gamma_log_pdf_dx(log_gamma, h.alpha2, h.beta2),
        ],
        HyperpriorMode::Reparameterized => {
            // d/du [a u - b e^u] for u = log x, Jacobian included
            [h.alpha1 - h.beta1 * log_lambda.exp(), h.alpha2 - h.beta2 * log_gamma.exp()]
        }
    }
}

/// Gaussian log likelihood of residuals with precision `gamma`, given per-trajectory
/// misfits, scaled by `scale` (dataset size over batch size).
pub fn gaussian_log_likelihood(misfits: &[Misfit], gamma: f64, scale: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParam(format!("precision must be > 0, got {gamma}")));
    }
    let ll: f64 = misfits
        .iter()
        .map(|m| 0.5 * m.points as f64 * (gamma / (2.0 * std::f64::consts::PI)).ln() - 0.5 * gamma * m.ssr)
        .sum();
    Ok(scale * ll)
}

/// Potential energy `U = -log posterior` over a flat position, evaluated on an
/// optional minibatch of data indices.
pub trait Potential: Sync {
    fn dim(&self) -> usize;
    /// Number of independent data items minibatches are drawn from; 0 if none.
    fn data_size(&self) -> usize;
    /// `(U, grad U)` with the likelihood on `batch` scaled to the full data size.
    fn energy(&self, z: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)>;
}

/// Posterior of the hybrid model on a trajectory dataset.
pub struct HybridPosterior<'a> {
    pub model: &'a HybridModel,
    pub data: &'a TrajectoryDataset,
    pub hyper: Hyperpriors,
}

impl HybridPosterior<'_> {
    pub fn theta_dim(&self) -> usize {
        self.model.dim()
    }

    /// Full-batch misfits at `theta`.
    pub fn misfits(&self, theta: &[f64], batch: &[usize], with_grad: bool) -> Result<Vec<Misfit>> {
        batch
            .par_iter()
            .map(|&i| {
                self.model
                    .misfit(theta, &self.data.trajectories[i], self.data.k, with_grad)
                    .map_err(|e| e.context(format!("trajectory {i}")))
            })
            .collect()
    }

    /// `[theta*, log lambda0, log gamma0]` with `lambda0 = d / sum|theta*|` and `gamma0 = 1 / MSE`.
    pub fn initial_position(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.data.trajectories.len()).collect();
        let ms = self.misfits(theta, &all, false)?;
        let ssr: f64 = ms.iter().map(|m| m.ssr).sum();
        let points: usize = ms.iter().map(|m| m.points).sum();
        let l1: f64 = theta.iter().map(|t| t.abs()).sum();
        let mut z = theta.to_vec();
        z.push((theta.len() as f64 / l1).ln());
        z.push((points as f64 / ssr).ln());
        Ok(z)
    }

    pub fn log_posterior(&self, z: &[f64]) -> Result<f64> {
        let all: Vec<usize> = (0..self.data.trajectories.len()).collect();
        let (u, _) = self.energy_impl(z, &all, false)?;
        Ok(-u)
    }

    fn energy_impl(&self, z: &[f64], batch: &[usize], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let d = self.theta_dim();
        if z.len() != d + 2 {
            return Err(Error::shape("hmc position", format!("length {}, expected {}", z.len(), d + 2)));
        }
        if batch.is_empty() {
            return Err(Error::InvalidParam("empty minibatch".into()));
        }
        let theta = &z[..d];
        let (log_lambda, log_gamma) = (z[d], z[d + 1]);
        let (lambda, gamma) = (log_lambda.exp(), log_gamma.exp());
        let scale = self.data.trajectories.len() as f64 / batch.len() as f64;
        let ms = self.misfits(theta, batch, with_grad)?;
        let lp = gaussian_log_likelihood(&ms, gamma, scale)? + log_prior(theta, lambda)? + log_hyperprior(log_lambda, log_gamma, &self.hyper);
        if !lp.is_finite() {
            return Err(Error::NonFinite("log posterior outside its support".into()));
        }
        let mut grad = Vec::new();
        if with_grad {
            grad = vec![0.0; d + 2];
            for m in &ms {
                for (g, x) in grad[..d].iter_mut().zip(&m.grad) {
                    *g += 0.5 * gamma * scale * x;
                }
            }
            let mut l1 = 0.0;
            for (g, t) in grad[..d].iter_mut().zip(theta) {
                *g += lambda * t.signum() * (*t != 0.0) as u8 as f64;
                l1 += t.abs();
            }
            let [hl, hg] = log_hyperprior_grad(log_lambda, log_gamma, &self.hyper);
            grad[d] = -(d as f64 - lambda * l1 + hl);
            let dll: f64 = ms.iter().map(|m| 0.5 * m.points as f64 - 0.5 * gamma * m.ssr).sum();
            grad[d + 1] = -(scale * dll + hg);
        }
        Ok((-lp, grad))
    }
}

impl Potential for HybridPosterior<'_> {
    fn dim(&self) -> usize {
        self.theta_dim() + 2
    }

    fn data_size(&self) -> usize {
        self.data.trajectories.len()
    }

    fn energy(&self, z: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.energy_impl(z, batch, true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMode {
    /// Friction, injected noise and minibatch gradients; no accept/reject.
    Production,
    /// Full-batch leapfrog with half-step momentum updates and a Metropolis check.
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub leapfrog: usize,
    pub friction: f64,
    pub minibatch: usize,
    pub burn_in: f64,
    pub thin: usize,
    pub mode: SamplerMode,
    /// Injected noise on/off (off only for diagnostics).
    pub noise: bool,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        Self {
            iterations: cfg.hmc_iterations,
            step_size: cfg.hmc_step_size,
            leapfrog: cfg.hmc_leapfrog,
            friction: cfg.hmc_friction_value(),
            minibatch: cfg.hmc_minibatch,
            burn_in: cfg.hmc_burn_in,
            thin: cfg.hmc_thin,
            mode: SamplerMode::Production,
            noise: true,
            seed: cfg.hmc_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0) || self.leapfrog == 0 || self.thin == 0 || self.minibatch == 0 {
            return Err(Error::InvalidParam("step size >= 0, leapfrog, thin and minibatch >= 1 required".into()));
        }
        if !(self.friction >= 0.0) || !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidParam("friction >= 0 and burn-in in [0, 1) required".into()));
        }
        Ok(())
    }

    pub fn burn_in_iterations(&self) -> usize {
        (self.iterations as f64 * self.burn_in).floor() as usize
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in_iterations()) / self.thin
    }
}

/// Sampler position, momentum and the energy/gradient cached at the position.
#[derive(Clone, Debug, PartialEq)]
pub struct HmcState {
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub u: f64,
    pub grad: Vec<f64>,
}

fn draw_batch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut b = sample_indices(rng, n, size.min(n)).into_vec();
    b.sort_unstable();
    b
}

fn full_batch(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Energy at `z` or `None` when it is non-finite, outside the support, or the rollout blew up.
fn try_energy(pot: &dyn Potential, z: &[f64], batch: &[usize]) -> Result<Option<(f64, Vec<f64>)>> {
    if !finite(z) {
        return Ok(None);
    }
    match pot.energy(z, batch) {
        Ok((u, g)) if u.is_finite() && finite(&g) => Ok(Some((u, g))),
        Ok(_) => Ok(None),
        Err(e) if e.is_blowup() => Ok(None),
        Err(e) => Err(e),
    }
}

/// One iteration of `L` substeps. Returns the new state and whether it was accepted;
/// a rejected iteration returns the input state unchanged.
pub fn sghmc_step(
    pot: &dyn Potential,
    state: &HmcState,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(HmcState, bool)> {
    let eps = cfg.step_size;
    let n = pot.data_size();
    let mut s = state.clone();
    match cfg.mode {
        SamplerMode::Production => {
            let decay = eps * cfg.friction;
            let sd = (2.0 * cfg.friction * eps).sqrt();
            for _ in 0..cfg.leapfrog {
                for (p, g) in s.p.iter_mut().zip(&s.grad) {
                    let xi: f64 = if cfg.noise { rng.sample(StandardNormal) } else { 0.0 };
                    *p += -eps * g - decay * *p + sd * xi;
                }
                for (z, p) in s.z.iter_mut().zip(&s.p) {
                    *z += eps * p;
                }
                let batch = draw_batch(rng, n, cfg.minibatch);
                match try_energy(pot, &s.z, &batch)? {
                    Some((u, g)) => {
                        s.u = u;
                        s.grad = g;
                    }
                    None => return Ok((state.clone(), false)),
                }
            }
            Ok((s, true))
        }
        SamplerMode::Test => {
            let batch = full_batch(n);
            let h0 = s.u + 0.5 * s.p.iter().map(|p| p * p).sum::<f64>();
            for _ in 0..cfg.leapfrog {
                for (p, g) in s.p.iter_mut().zip(&s.grad) {
                    *p -= 0.5 * eps * g;
                }
                for (z, p) in s.z.iter_mut().zip(&s.p) {
                    *z += eps * p;
                }
                match try_energy(pot, &s.z, &batch)? {
                    Some((u, g)) => {
                        s.u = u;
                        s.grad = g;
                    }
                    None => return Ok((state.clone(), false)),
                }
                for (p, g) in s.p.iter_mut().zip(&s.grad) {
                    *p -= 0.5 * eps * g;
                }
            }
            let h1 = s.u + 0.5 * s.p.iter().map(|p| p * p).sum::<f64>();
            let accept = rng.random::<f64>().ln() < h0 - h1;
            if accept {
                Ok((s, true))
            } else {
                Ok((state.clone(), false))
            }
        }
    }
}

/// Retained samples plus chain diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub ensemble: SampleSet,
    pub rejections: usize,
    pub iterations: usize,
}

/// Hamiltonian `U + |p|^2 / 2` of a state.
pub fn hamiltonian(s: &HmcState) -> f64 {
    s.u + 0.5 * s.p.iter().map(|p| p * p).sum::<f64>()
}

/// Runs the chain from `z0`, resampling momentum each iteration.
///
/// Recorded log posteriors are `-U` at the retained position, using the minibatch
/// estimate of its final substep in production mode.
pub fn sample_chain(pot: &dyn Potential, z0: &[f64], cfg: &SamplerConfig) -> Result<Chain> {
    cfg.validate()?;
    if z0.len() != pot.dim() {
        return Err(Error::shape("hmc position", format!("length {}, expected {}", z0.len(), pot.dim())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = pot.data_size();
    let batch = match cfg.mode {
        SamplerMode::Production => draw_batch(&mut rng, n, cfg.minibatch),
        SamplerMode::Test => full_batch(n),
    };
    let (u, grad) = try_energy(pot, z0, &batch)?
        .ok_or_else(|| Error::SamplerAbort("initial position has non-finite energy".into()))?;
    let mut state = HmcState {
        z: z0.to_vec(),
        p: vec![0.0; z0.len()],
        u,
        grad,
    };
    let burn = cfg.burn_in_iterations();
    let mut out = SampleSet {
        dim: z0.len(),
        samples: Vec::new(),
        log_posterior: Vec::new(),
        iterations: Vec::new(),
    };
    let mut rejections = 0;
    for it in 1..=cfg.iterations {
        for p in state.p.iter_mut() {
            *p = rng.sample(StandardNormal);
        }
        let (next, ok) = sghmc_step(pot, &state, cfg, &mut rng)?;
        state = next;
        if !ok {
            rejections += 1;
            if 2 * rejections > cfg.iterations {
                return Err(Error::SamplerAbort(format!(
                    "{rejections} of {} iterations rejected by iteration {it} (step size {}, leapfrog {})",
                    cfg.iterations, cfg.step_size, cfg.leapfrog
                )));
            }
        }
        if it > burn && (it - burn) % cfg.thin == 0 {
            out.samples.push(state.z.clone());
            out.log_posterior.push(-state.u);
            out.iterations.push(it as u64);
        }
    }
    Ok(Chain {
        ensemble: out,
        rejections,
        iterations: cfg.iterations,
    })
}

/// Index of the sample with the largest log posterior; ties go to the earliest.
pub fn map_estimate(ens: &SampleSet) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &lp) in ens.log_posterior.iter().enumerate() {
        if best.is_none_or(|b| lp > ens.log_posterior[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::InvalidParam("empty ensemble".into()))
}

/// Summary CSV: iteration, log posterior, delta, U1, log lambda, log gamma.
pub fn ensemble_csv(ens: &SampleSet) -> String {
    let mut s = String::from("iteration,log_posterior,delta,U1,log_lambda,log_gamma\n");
    let d = ens.dim;
    for ((z, lp), it) in ens.samples.iter().zip(&ens.log_posterior).zip(&ens.iterations) {
        writeln!(s, "{it},{lp:e},{:e},{:e},{:e},{:e}", z[DELTA], z[U1], z[d - 2], z[d - 1]).unwrap();
    }
    s
}

/// Forecast from `q0` over `steps` solver steps under sample `z`, plus
/// observation noise with the sample's precision.
pub fn predictive_draw(hm: &HybridModel, z: &[f64], q0: &Tensor, steps: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let d = hm.dim();
    if z.len() != d + 2 {
        return Err(Error::shape("sample", format!("length {}, expected {}", z.len(), d + 2)));
    }
    let mut x = if steps == 0 {
        q0.clone()
    } else {
        hm.forecast(&z[..d], q0, 1, steps)?.pop().expect("rollout output")
    };
    let sd = (-0.5 * z[d + 1]).exp();
    for v in x.re_mut() {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(x)
}

/// Per-time sample mean and population variance across forecast members.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<Tensor>,
    pub var: Vec<Tensor>,
}

impl Moments {
    /// `mean - 2 sigma` and `mean + 2 sigma` at time index `i`.
    pub fn band(&self, i: usize) -> (Tensor, Tensor) {
        let sd: Vec<f64> = self.var[i].re().iter().map(|v| 2.0 * v.sqrt()).collect();
        let m = self.mean[i].re();
        let lo = m.iter().zip(&sd).map(|(a, b)| a - b).collect();
        let hi = m.iter().zip(&sd).map(|(a, b)| a + b).collect();
        let shape = self.mean[i].shape();
        (Tensor::real(shape, lo).unwrap(), Tensor::real(shape, hi).unwrap())
    }
}

/// Monte Carlo moments of `members[s][t]` over `s`.
pub fn moments(members: &[Vec<Tensor>]) -> Result<Moments> {
    let first = members.first().ok_or_else(|| Error::InvalidParam("no valid ensemble members".into()))?;
    if members.iter().any(|m| m.len() != first.len()) {
        return Err(Error::InvalidParam("ensemble members differ in length".into()));
    }
    let ns = members.len() as f64;
    let mut mean = Vec::with_capacity(first.len());
    let mut var = Vec::with_capacity(first.len());
    for t in 0..first.len() {
        let shape = first[t].shape();
        let len = first[t].len();
        let mut mu = vec![0.0; len];
        for m in members {
            for (a, b) in mu.iter_mut().zip(m[t].re()) {
                *a += b;
            }
        }
        mu.iter_mut().for_each(|a| *a /= ns);
        let mut v = vec![0.0; len];
        for m in members {
            for ((a, b), c) in v.iter_mut().zip(m[t].re()).zip(&mu) {
                *a += (b - c) * (b - c);
            }
        }
        v.iter_mut().for_each(|a| *a /= ns);
        mean.push(Tensor::real(shape, mu)?);
        var.push(Tensor::real(shape, v)?);
    }
    Ok(Moments { mean, var })
}

/// Noise-free rollouts `[q0, .., M^{Nk}(q0)]` for each sample; blown-up members are dropped and counted.
pub fn ensemble_forecasts(
    hm: &HybridModel,
    samples: &[Vec<f64>],
    q0: &Tensor,
    n_obs: usize,
    k: usize,
) -> Result<(Vec<Vec<Tensor>>, usize)> {
    let d = hm.dim();
    let runs: Vec<Result<Vec<Tensor>>> = samples.par_iter().map(|z| hm.forecast(&z[..d], q0, n_obs, k)).collect();
    let mut ok = Vec::new();
    let mut invalid = 0;
    for r in runs {
        match r {
            Ok(v) => ok.push(v),
            Err(e) if e.is_blowup() => invalid += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((ok, invalid))
}

/// Posterior mean and variance of the forecast at each observation time.
pub fn posterior_moments(
    hm: &HybridModel,
    ens: &SampleSet,
    q0: &Tensor,
    n_obs: usize,
    k: usize,
) -> Result<(Moments, usize)> {
    let (members, invalid) = ensemble_forecasts(hm, &ens.samples, q0, n_obs, k)?;
    if members.is_empty() {
        return Err(Error::InvalidParam(format!("all {invalid} ensemble forecasts blew up")));
    }
    Ok((moments(&members)?, invalid))
}
