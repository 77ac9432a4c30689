mod common;

use hybrid_qg::autodiff::Tensor;
use hybrid_qg::bayes::{
    ensemble_forecasts, gaussian_log_likelihood, hamiltonian, log_hyperprior, map_estimate, moments, posterior_moments,
    predictive_draw, sample_chain, sghmc_step, HmcState, HybridPosterior, Hyperpriors, Potential, SamplerConfig,
    SamplerMode,
};
use hybrid_qg::config::HyperpriorMode;
use hybrid_qg::hybrid::Misfit;
use hybrid_qg::io::SampleSet;
use hybrid_qg::Error;
use proptest::prelude::*;

use common::K;

/// `U(z) = sum_j c_j z_j^2 / 2`.
struct Quadratic(Vec<f64>);

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn data_size(&self) -> usize {
        0
    }
    fn energy(&self, z: &[f64], _: &[usize]) -> hybrid_qg::Result<(f64, Vec<f64>)> {
        let u = z.iter().zip(&self.0).map(|(z, c)| 0.5 * c * z * z).sum();
        Ok((u, z.iter().zip(&self.0).map(|(z, c)| c * z).collect()))
    }
}

/// Laplace prior alone at a fixed rate: `U(z) = lambda sum |z_j|`.
struct LaplaceOnly {
    dim: usize,
    lambda: f64,
}

impl Potential for LaplaceOnly {
    fn dim(&self) -> usize {
        self.dim
    }
    fn data_size(&self) -> usize {
        0
    }
    fn energy(&self, z: &[f64], _: &[usize]) -> hybrid_qg::Result<(f64, Vec<f64>)> {
        let u = -hybrid_qg::bayes::log_prior(z, self.lambda)? + self.dim as f64 * (self.lambda / 2.0).ln();
        Ok((u, z.iter().map(|t| self.lambda * t.signum()).collect()))
    }
}

/// Zero potential, finite only inside `|z| < bound`.
struct Walled(f64);

impl Potential for Walled {
    fn dim(&self) -> usize {
        1
    }
    fn data_size(&self) -> usize {
        0
    }
    fn energy(&self, z: &[f64], _: &[usize]) -> hybrid_qg::Result<(f64, Vec<f64>)> {
        if z[0].abs() < self.0 {
            Ok((0.0, vec![0.0]))
        } else {
            Err(Error::NonFinite("outside the wall".into()))
        }
    }
}

fn production(iterations: usize, step_size: f64, leapfrog: usize, friction: f64) -> SamplerConfig {
    SamplerConfig {
        iterations,
        step_size,
        leapfrog,
        friction,
        minibatch: 1,
        burn_in: 0.0,
        thin: 1,
        mode: SamplerMode::Production,
        noise: true,
        seed: 17,
    }
}

fn state_at(pot: &dyn Potential, z: Vec<f64>, p: Vec<f64>) -> HmcState {
    let (u, grad) = pot.energy(&z, &[]).unwrap();
    HmcState { z, p, u, grad }
}

/// Mean and its standard error from non-overlapping batch means.
fn mean_and_se(x: &[f64], batches: usize) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let size = x.len() / batches;
    let bm: Vec<f64> = x.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let var = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (bm.len() - 1) as f64;
    (mean, (var / bm.len() as f64).sqrt())
}

#[test]
fn standard_gaussian_moments_are_recovered() {
    let pot = Quadratic(vec![1.0]);
    let chain = sample_chain(&pot, &[2.0], &production(5000, 0.05, 10, 1.0)).unwrap();
    assert_eq!(chain.rejections, 0);
    let x: Vec<f64> = chain.ensemble.samples.iter().map(|z| z[0]).collect();
    assert_eq!(x.len(), 5000);
    let (mean, se) = mean_and_se(&x, 50);
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    assert!((var - 1.0).abs() < 0.2, "variance {var}");
}

#[test]
fn leapfrog_conserves_the_hamiltonian_in_test_mode() {
    let pot = Quadratic(vec![1.0, 0.5, 0.1]);
    let cfg = SamplerConfig {
        mode: SamplerMode::Test,
        friction: 0.0,
        noise: false,
        ..production(1, 1e-3, 10, 0.0)
    };
    let mut rng = common::rng(3);
    for (z, p) in [([1.0, -2.0, 0.5], [0.3, 1.0, -1.5]), ([0.0, 0.0, 3.0], [2.0, -2.0, 0.0])] {
        let s = state_at(&pot, z.to_vec(), p.to_vec());
        let (next, ok) = sghmc_step(&pot, &s, &cfg, &mut rng).unwrap();
        assert!(ok);
        assert_ne!(next.z, s.z);
        let drift = (hamiltonian(&next) - hamiltonian(&s)).abs();
        assert!(drift < 1e-6, "drift {drift}");
    }
}

#[test]
fn friction_alone_decays_momentum_geometrically() {
    let pot = Walled(1e9);
    let (eps, c, l) = (0.01, 3.0, 7);
    let cfg = SamplerConfig {
        noise: false,
        ..production(1, eps, l, c)
    };
    let s = state_at(&pot, vec![0.2], vec![1.5]);
    let (next, ok) = sghmc_step(&pot, &s, &cfg, &mut common::rng(1)).unwrap();
    assert!(ok);
    let want = 1.5 * (1.0 - eps * c).powi(l as i32);
    assert!((next.p[0] - want).abs() < 1e-15, "{} vs {want}", next.p[0]);
}

#[test]
fn zero_step_size_leaves_the_state_unchanged() {
    let pot = Quadratic(vec![1.0, 2.0]);
    let cfg = production(1, 0.0, 10, 1.0);
    let s = state_at(&pot, vec![0.7, -0.4], vec![1.0, 2.0]);
    let (next, ok) = sghmc_step(&pot, &s, &cfg, &mut common::rng(2)).unwrap();
    assert!(ok);
    assert_eq!(next, s);
}

#[test]
fn non_finite_energy_rejects_and_aborts_past_half() {
    // An unbounded walk in a narrow box leaves it on most iterations.
    let pot = Walled(0.05);
    let mut rng = common::rng(4);
    let cfg = production(10, 0.1, 10, 0.1);
    let s = state_at(&pot, vec![0.0], vec![5.0]);
    let (next, ok) = sghmc_step(&pot, &s, &cfg, &mut rng).unwrap();
    assert!(!ok);
    assert_eq!(next, s);
    let err = sample_chain(&pot, &[0.0], &cfg).unwrap_err();
    assert!(matches!(err, Error::SamplerAbort(_)), "{err}");
    assert!(sample_chain(&pot, &[1.0], &cfg).is_err());
}

#[test]
fn laplace_prior_alone_has_its_mean_absolute_value() {
    let lambda = 4.0;
    let pot = LaplaceOnly { dim: 4, lambda };
    let cfg = SamplerConfig {
        burn_in: 0.1,
        ..production(6000, 0.02, 10, 1.0)
    };
    let chain = sample_chain(&pot, &[0.0; 4], &cfg).unwrap();
    let abs: Vec<f64> = chain.ensemble.samples.iter().flat_map(|z| z.iter().map(|t| t.abs())).collect();
    let mean = abs.iter().sum::<f64>() / abs.len() as f64;
    assert!((mean * lambda - 1.0).abs() < 0.1, "mean |theta| = {mean}, expected {}", 1.0 / lambda);
}

#[test]
fn chain_bookkeeping_and_determinism() {
    let pot = Quadratic(vec![1.0, 4.0]);
    let cfg = SamplerConfig {
        burn_in: 0.25,
        thin: 5,
        ..production(200, 0.05, 4, 1.0)
    };
    assert_eq!(cfg.retained(), 30);
    let a = sample_chain(&pot, &[0.5, 0.5], &cfg).unwrap();
    let b = sample_chain(&pot, &[0.5, 0.5], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.ensemble.samples.len(), 30);
    assert_eq!(a.ensemble.iterations[0], 55);
    assert_eq!(*a.ensemble.iterations.last().unwrap(), 200);
    for (z, lp) in a.ensemble.samples.iter().zip(&a.ensemble.log_posterior) {
        assert_eq!(*lp, -pot.energy(z, &[]).unwrap().0);
    }
    let c = sample_chain(&pot, &[0.5, 0.5], &SamplerConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(a.ensemble.samples, c.ensemble.samples);
}

#[test]
fn map_is_the_argmax() {
    let ens = SampleSet {
        dim: 1,
        samples: vec![vec![0.0], vec![1.0], vec![2.0]],
        log_posterior: vec![-5.0, -3.0, -9.0],
        iterations: vec![1, 2, 3],
    };
    let i = map_estimate(&ens).unwrap();
    assert_eq!(i, 1);
    assert!(ens.log_posterior.iter().all(|lp| *lp <= ens.log_posterior[i]));
    assert!(map_estimate(&SampleSet { dim: 1, samples: vec![], log_posterior: vec![], iterations: vec![] }).is_err());
}

#[test]
fn likelihood_normalization() {
    let zero = |points| Misfit {
        ssr: 0.0,
        points,
        grad: vec![],
    };
    let ms = [zero(128), zero(64)];
    let d = 192.0;
    let ll = gaussian_log_likelihood(&ms, 1.0, 3.0).unwrap();
    assert!((ll + 3.0 * 0.5 * d * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-10);
    let doubled = gaussian_log_likelihood(&ms, 2.0, 1.0).unwrap() - gaussian_log_likelihood(&ms, 1.0, 1.0).unwrap();
    assert!((doubled - 0.5 * d * std::f64::consts::LN_2).abs() < 1e-10);
    assert!(gaussian_log_likelihood(&ms, 0.0, 1.0).is_err());
}

#[test]
fn hyperprior_modes() {
    let lit = Hyperpriors::default();
    assert_eq!(log_hyperprior(-0.5, 1.0, &lit), f64::NEG_INFINITY);
    let re = Hyperpriors {
        mode: HyperpriorMode::Reparameterized,
        ..lit
    };
    // Exponential(1) on lambda, seen through u = log lambda: u - e^u.
    let (u, v) = (-0.5f64, 1.2f64);
    assert!((log_hyperprior(u, v, &re) - (u - u.exp() + v - v.exp())).abs() < 1e-14);
}

fn tiny_posterior() -> (hybrid_qg::hybrid::HybridModel, Vec<f64>, hybrid_qg::io::TrajectoryDataset) {
    let (hm, theta) = common::tiny_hybrid();
    let mut other = theta.clone();
    other[0] = 0.22;
    let data = common::perfect_data(&hm, &other, 4, 2);
    (hm, theta, data)
}

#[test]
fn energy_gradient_matches_finite_differences() {
    let (hm, theta, data) = tiny_posterior();
    for mode in [HyperpriorMode::Literal, HyperpriorMode::Reparameterized] {
        let post = HybridPosterior {
            model: &hm,
            data: &data,
            hyper: Hyperpriors { mode, ..Default::default() },
        };
        let mut z = post.initial_position(&theta).unwrap();
        let d = post.theta_dim();
        assert_eq!(z.len(), d + 2);
        // Keep log lambda inside the literal support. The reparameterized prior on gamma
        // itself is e^{-gamma}, evaluated at an O(1) precision to keep U well conditioned.
        z[d] = z[d].max(1.5);
        if mode == HyperpriorMode::Reparameterized {
            z[d + 1] = 3.0;
        }
        let batch = [1, 3];
        let (_, g) = post.energy(&z, &batch).unwrap();
        for j in [0, 1, 5, d - 1, d, d + 1] {
            // Energies carry ~1e-11 rounding noise from the FFTs, so the step stays coarse.
            let h = if z[j] == 0.0 { 1e-3 } else { 1e-3 * z[j].abs() };
            let at = |x: f64| {
                let mut zz = z.clone();
                zz[j] += x;
                post.energy(&zz, &batch).unwrap().0
            };
            // Fourth-order central difference.
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0), "{mode:?} coordinate {j}: {fd} vs {}", g[j]);
        }
    }
}

#[test]
fn minibatch_gradient_is_unbiased() {
    let (hm, theta, data) = tiny_posterior();
    let post = HybridPosterior {
        model: &hm,
        data: &data,
        hyper: Hyperpriors::default(),
    };
    let mut z = post.initial_position(&theta).unwrap();
    let d = post.theta_dim();
    z[d] = 2.0;
    let (u_full, g_full) = post.energy(&z, &[0, 1, 2, 3]).unwrap();
    for batches in [vec![vec![0], vec![1], vec![2], vec![3]], vec![vec![0, 2], vec![1, 3]]] {
        let m = batches.len() as f64;
        let mut u = 0.0;
        let mut g = vec![0.0; d + 2];
        for b in &batches {
            let (ub, gb) = post.energy(&z, b).unwrap();
            u += ub / m;
            g.iter_mut().zip(&gb).for_each(|(a, x)| *a += x / m);
        }
        assert!((u - u_full).abs() <= 1e-10 * u_full.abs());
        for (a, b) in g.iter().zip(&g_full) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn start_at_trained_point_beats_random_start() {
    let (hm, theta) = common::tiny_hybrid();
    let data = common::perfect_data(&hm, &theta, 4, 2);
    let post = HybridPosterior {
        model: &hm,
        data: &data,
        hyper: Hyperpriors::default(),
    };
    let arch = hybrid_qg::closures::CnnArch::narrow(&[4]);
    let random = hm.pack(0.45, 0.005, &hybrid_qg::closures::init_cnn_with(&arch, 9).unwrap());
    let cfg = SamplerConfig {
        minibatch: 4,
        ..production(3, 1e-4, 2, 0.1)
    };
    // Both chains share hyperparameters; the precision matches a 1% residual on 2e-6 states.
    let start = |t: &[f64]| {
        let mut z = t.to_vec();
        z.extend([1.5, 2.5e15f64.ln()]);
        z
    };
    let a = sample_chain(&post, &start(&theta), &cfg).unwrap();
    let b = sample_chain(&post, &start(&random), &cfg).unwrap();
    assert!(
        a.ensemble.log_posterior[0] >= b.ensemble.log_posterior[0],
        "{} vs {}",
        a.ensemble.log_posterior[0],
        b.ensemble.log_posterior[0]
    );
}

#[test]
fn predictive_noise_has_the_sampled_precision() {
    let (hm, theta) = common::tiny_hybrid();
    let q0 = common::smooth(2, 8, 3, 2e-6, 1);
    let log_gamma = 2.0 * (1e6f64).ln();
    let mut z = theta.clone();
    z.extend([0.0, log_gamma]);
    let mut rng = common::rng(5);

    // l = 0 with a vanishing noise scale returns the initial state.
    let mut sharp = z.clone();
    sharp[theta.len() + 1] = 1500.0;
    assert_eq!(predictive_draw(&hm, &sharp, &q0, 0, &mut rng).unwrap(), q0);

    let det = hm.forecast(&theta, &q0, 1, K).unwrap().pop().unwrap();
    let a = predictive_draw(&hm, &z, &q0, K, &mut rng).unwrap();
    let b = predictive_draw(&hm, &z, &q0, K, &mut rng).unwrap();
    assert_ne!(a, b);
    // Each draw is the deterministic forecast plus noise of scale 1e-6.
    for x in [&a, &b] {
        assert!(x.sub(&det).max_abs() < 6e-6);
    }

    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for _ in 0..10_000 {
        let x = predictive_draw(&hm, &z, &q0, 0, &mut rng).unwrap();
        sum_sq += x.sub(&q0).norm_sq();
        count += x.len();
    }
    let sd = (sum_sq / count as f64).sqrt();
    assert!((sd / 1e-6 - 1.0).abs() < 0.05, "noise sd {sd}");
}

#[test]
fn moments_closed_forms() {
    let s = |v: f64| vec![Tensor::scalar(v)];
    let m = moments(&[s(2.0), s(4.0)]).unwrap();
    assert_eq!(m.mean[0].re(), &[3.0]);
    assert_eq!(m.var[0].re(), &[1.0]);
    let (lo, hi) = m.band(0);
    assert_eq!((lo.re()[0], hi.re()[0]), (1.0, 5.0));
    let m = moments(&[s(7.5)]).unwrap();
    assert_eq!(m.var[0].re(), &[0.0]);
    assert!(moments(&[]).is_err());
}

fn ensemble(theta: &[f64], count: usize) -> SampleSet {
    let mut r = common::rng(7);
    use rand::Rng;
    let samples = (0..count)
        .map(|_| {
            let mut z = theta.to_vec();
            z[0] *= 1.0 + 0.2 * (r.random::<f64>() - 0.5);
            z[1] *= 1.0 + 0.2 * (r.random::<f64>() - 0.5);
            z.extend([1.0, 25.0]);
            z
        })
        .collect();
    SampleSet {
        dim: theta.len() + 2,
        samples,
        log_posterior: vec![-1.0; count],
        iterations: (1..=count as u64).collect(),
    }
}

#[test]
fn posterior_moments_match_straight_line_recomputation() {
    let (hm, theta) = common::tiny_hybrid();
    let ens = ensemble(&theta, 6);
    let q0 = common::smooth(2, 8, 3, 2e-6, 2);
    let (m, invalid) = posterior_moments(&hm, &ens, &q0, 3, K).unwrap();
    assert_eq!(invalid, 0);
    assert_eq!(m.mean.len(), 4);
    let runs: Vec<Vec<Tensor>> = ens.samples.iter().map(|z| hm.forecast(&z[..theta.len()], &q0, 3, K).unwrap()).collect();
    for t in 0..4 {
        for p in 0..q0.len() {
            let xs: Vec<f64> = runs.iter().map(|r| r[t].re()[p]).collect();
            let mu = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!((m.mean[t].re()[p] - mu).abs() <= 1e-12 * mu.abs().max(1e-300));
            assert!((m.var[t].re()[p] - var).abs() <= 1e-12 * var.max(1e-300) + 1e-300);
        }
    }
    // The initial time has no spread beyond rounding.
    assert!(m.var[0].max_abs() < 1e-20 * m.var[3].max_abs());
}

#[test]
fn blown_up_members_are_counted_and_dropped() {
    let (hm, theta) = common::tiny_hybrid();
    let mut ens = ensemble(&theta, 3);
    ens.samples[1][1] = 1e200;
    let q0 = common::smooth(2, 8, 3, 2e-6, 3);
    let (members, invalid) = ensemble_forecasts(&hm, &ens.samples, &q0, 2, K).unwrap();
    assert_eq!((members.len(), invalid), (2, 1));
    for z in ens.samples.iter_mut() {
        z[1] = 1e200;
    }
    assert!(posterior_moments(&hm, &ens, &q0, 2, K).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn moments_are_permutation_invariant(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(), seed in 0u64..1000) {
        let members: Vec<Vec<Tensor>> = (0..6)
            .map(|i| vec![common::noise(&[2, 4, 4], 1e-5, seed + i), common::noise(&[2, 4, 4], 1.0, seed + 10 + i)])
            .collect();
        let shuffled: Vec<Vec<Tensor>> = perm.iter().map(|&i| members[i].clone()).collect();
        let a = moments(&members).unwrap();
        let b = moments(&shuffled).unwrap();
        for t in 0..2 {
            prop_assert!(a.mean[t].max_abs_diff(&b.mean[t]) <= 1e-14 * a.mean[t].max_abs());
            prop_assert!(a.var[t].max_abs_diff(&b.var[t]) <= 1e-13 * a.var[t].max_abs());
        }
    }
}
