#![allow(dead_code)]

use std::f64::consts::PI;

use hybrid_qg::autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform noise in `[-amp, amp]`.
pub fn noise(shape: &[usize], amp: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::real(shape, (0..n).map(|_| amp * (2.0 * r.random::<f64>() - 1.0)).collect()).unwrap()
}

/// Sum of random Fourier modes with wavenumber index `|k|, |l| <= kmax` on an `n x n` grid.
pub fn smooth(layers: usize, n: usize, kmax: i32, amp: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let mut data = vec![0.0; layers * n * n];
    for layer in 0..layers {
        for k in -kmax..=kmax {
            for l in 0..=kmax {
                if k == 0 && l == 0 {
                    continue;
                }
                let a = amp * (2.0 * r.random::<f64>() - 1.0);
                let ph = 2.0 * PI * r.random::<f64>();
                for y in 0..n {
                    for x in 0..n {
                        let arg = 2.0 * PI * (k as f64 * x as f64 + l as f64 * y as f64) / n as f64 + ph;
                        data[layer * n * n + y * n + x] += a * arg.cos();
                    }
                }
            }
        }
    }
    Tensor::real(&[layers, n, n], data).unwrap()
}

pub fn rel_l2(a: &Tensor, b: &Tensor) -> f64 {
    let d = a.sub(b).norm_sq().sqrt();
    d / b.norm_sq().sqrt().max(1e-300)
}

pub const K: usize = 3;

/// 8x8 hybrid model with a one-hidden-layer closure, and its parameters at the truth physics.
pub fn tiny_hybrid() -> (hybrid_qg::hybrid::HybridModel, Vec<f64>) {
    use hybrid_qg::closures::{init_cnn_with, CnnArch};
    let mut cnn = init_cnn_with(&CnnArch::narrow(&[4]), 2).unwrap();
    cnn.norm.in_std = vec![2e-6, 1e-6];
    cnn.norm.out_std = vec![1e-12, 2e-13];
    let hm = hybrid_qg::hybrid::HybridModel::new(&hybrid_qg::qg::PhysicalParams::truth(8), cnn.clone()).unwrap();
    let theta = hm.pack(0.25, 0.025, &cnn);
    (hm, theta)
}

/// Trajectories produced by the hybrid model itself at `theta`.
pub fn perfect_data(
    hm: &hybrid_qg::hybrid::HybridModel,
    theta: &[f64],
    count: usize,
    n_obs: usize,
) -> hybrid_qg::io::TrajectoryDataset {
    let trajectories = (0..count)
        .map(|i| hybrid_qg::io::Trajectory {
            sim: 0,
            t0: i as f64,
            states: hm.forecast(theta, &smooth(2, 8, 3, 2e-6, 40 + i as u64), n_obs, K).unwrap(),
            targets: None,
        })
        .collect();
    hybrid_qg::io::TrajectoryDataset {
        nx: 8,
        ny: 8,
        layers: 2,
        dt: 3600.0,
        k: K,
        n_obs,
        trajectories,
    }
}
