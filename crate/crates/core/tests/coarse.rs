mod common;

use std::f64::consts::PI;

use hybrid_qg::autodiff::{fft, Tensor};
use hybrid_qg::coarse::{apply_filter, coarsen, subgrid_tendency, Coarsener, FilterSpec, SubgridOperator};
use hybrid_qg::qg::{tendency, PhysicalParams, SpectralGrid};
use num_complex::Complex64;
use proptest::prelude::*;

const L: f64 = 1.0e6;

/// Straight-line DFT coefficient of one `n x n` layer at integer wavenumbers `(kx, ky)`.
fn dft(field: &[f64], n: usize, kx: i64, ky: i64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for y in 0..n {
        for x in 0..n {
            let arg = -2.0 * PI * (kx * x as i64 + ky * y as i64) as f64 / n as f64;
            acc += field[y * n + x] * Complex64::from_polar(1.0, arg);
        }
    }
    acc
}

fn transfer(kx: i64, ky: i64, n_lo: usize) -> f64 {
    let dx = L / n_lo as f64;
    let kappa = 2.0 * PI / L * ((kx * kx + ky * ky) as f64).sqrt();
    let kc = 0.65 * PI / dx;
    if kappa < kc {
        1.0
    } else {
        (-23.6 * ((kappa - kc) * dx).powi(4)).exp()
    }
}

#[test]
fn coarse_spectrum_is_filtered_truncated_hi_spectrum() {
    let (n_hi, n_lo) = (64, 16);
    let hi = common::noise(&[2, n_hi, n_hi], 1.0, 3);
    let lo = coarsen(&hi, n_lo, n_lo, &FilterSpec::for_grid(L, n_lo), L).unwrap();
    assert_eq!(lo.shape(), &[2, n_lo, n_lo]);
    let scale = (n_lo * n_lo) as f64 / (n_hi * n_hi) as f64;
    let half = n_lo as i64 / 2;
    for layer in 0..2 {
        let fh = &hi.re()[layer * n_hi * n_hi..(layer + 1) * n_hi * n_hi];
        let fl = &lo.re()[layer * n_lo * n_lo..(layer + 1) * n_lo * n_lo];
        let peak = (0..4).map(|k| dft(fh, n_hi, k, 1).norm()).fold(0.0, f64::max) * scale;
        for ky in -half + 1..half {
            for kx in 0..half {
                let want = dft(fh, n_hi, kx, ky) * (scale * transfer(kx, ky, n_lo));
                let got = dft(fl, n_lo, kx, ky);
                assert!((got - want).norm() < 1e-12 * peak, "layer {layer} mode ({kx},{ky}): {got} vs {want}");
            }
        }
        // Nyquist modes are dropped.
        assert!(dft(fl, n_lo, half, 0).norm() < 1e-12 * peak);
        assert!(dft(fl, n_lo, 0, half).norm() < 1e-12 * peak);
    }
}

#[test]
fn constant_field_stays_constant() {
    let hi = Tensor::filled(&[2, 32, 32], 3.25);
    let lo = coarsen(&hi, 8, 8, &FilterSpec::for_grid(L, 8), L).unwrap();
    assert!(lo.re().iter().all(|v| (v - 3.25).abs() < 1e-14));
}

#[test]
fn band_limited_field_is_sampled_exactly() {
    // Modes up to 3 sit inside the pass band of a 16-point grid (cutoff at 5.2).
    let hi = common::smooth(2, 64, 3, 1.0, 8);
    let lo = coarsen(&hi, 16, 16, &FilterSpec::for_grid(L, 16), L).unwrap();
    let mut sampled = Vec::new();
    for layer in 0..2 {
        for y in 0..16 {
            for x in 0..16 {
                sampled.push(hi.re()[layer * 4096 + 4 * y * 64 + 4 * x]);
            }
        }
    }
    let sampled = Tensor::real(&[2, 16, 16], sampled).unwrap();
    assert!(lo.max_abs_diff(&sampled) < 1e-12 * sampled.max_abs());
}

#[test]
fn finer_target_grid_is_rejected() {
    let spec = FilterSpec::for_grid(L, 16);
    assert!(coarsen(&Tensor::zeros(&[2, 16, 16]), 32, 32, &spec, L).is_err());
    assert!(Coarsener::new(16, 16, 7, 8, L, spec).is_err());
    let c = Coarsener::new(32, 32, 16, 16, L, spec).unwrap();
    assert!(c.coarsen(&Tensor::zeros(&[2, 16, 16])).is_err());
}

#[test]
fn filter_scalar_value_one_spacing_past_cutoff() {
    let spec = FilterSpec::for_grid(L, 16);
    let t = spec.transfer(spec.cutoff + 1.0 / spec.dx);
    assert!((t / (-23.6f64).exp() - 1.0).abs() < 1e-12);
    assert!((t - 5.6e-11).abs() < 0.1e-11);
    assert_eq!(spec.transfer(0.5 * spec.cutoff), 1.0);
}

fn random_spectrum(grid: &SpectralGrid, seed: u64) -> Tensor {
    let noise = common::noise(&[2, grid.ny(), grid.nx()], 1.0, seed);
    fft::rfft2(&noise).unwrap()
}

#[test]
fn filter_never_adds_energy() {
    let grid = SpectralGrid::new(32, 32, L);
    let spec = FilterSpec::for_grid(L, 32);
    let x = random_spectrum(&grid, 4);
    let y = apply_filter(&x, &spec, &grid).unwrap();
    assert!(y.norm_sq() < x.norm_sq());

    // Pass-band content only: energy is unchanged.
    let lo = common::smooth(2, 32, 4, 1.0, 5);
    let x = fft::rfft2(&lo).unwrap();
    let y = apply_filter(&x, &spec, &grid).unwrap();
    assert_eq!(y.norm_sq(), x.norm_sq());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pass_band_coefficients_are_bit_identical(seed in 0u64..1_000_000, n in prop::sample::select(vec![8usize, 16, 32])) {
        let grid = SpectralGrid::new(n, n, L);
        let spec = FilterSpec::for_grid(L, n);
        let x = random_spectrum(&grid, seed);
        let y = apply_filter(&x, &spec, &grid).unwrap();
        let m = grid.ny() * grid.nh();
        for (idx, (a, b)) in x.cx().iter().zip(y.cx()).enumerate() {
            let k = grid.kappa2()[idx % m].sqrt();
            if k < spec.cutoff {
                prop_assert_eq!(a, b);
            } else {
                prop_assert!(b.norm() <= a.norm());
            }
        }
    }

    #[test]
    fn coarsen_is_linear(seed in 0u64..1_000_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = FilterSpec::for_grid(L, 8);
        let x = common::noise(&[2, 32, 32], 1.0, seed);
        let y = common::noise(&[2, 32, 32], 1.0, seed + 1);
        let mut z = x.scale(a);
        z.axpy(b, &y);
        let lhs = coarsen(&z, 8, 8, &spec, L).unwrap();
        let mut rhs = coarsen(&x, 8, 8, &spec, L).unwrap().scale(a);
        rhs.axpy(b, &coarsen(&y, 8, 8, &spec, L).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn linear_dynamics_have_no_subgrid_tendency(seed in 0u64..1_000_000) {
        let hi = PhysicalParams { advection: false, ..PhysicalParams::truth(32) };
        let lo = hi.with_grid(8);
        let q = common::noise(&[2, 32, 32], 1e-5, seed);
        let pair = subgrid_tendency(&q, &hi, &lo, &FilterSpec::for_grid(L, 8)).unwrap();
        let scale = tendency(&pair.q, &lo, None).unwrap().max_abs();
        prop_assert!(pair.s.max_abs() <= 1e-12 * scale, "{} vs {}", pair.s.max_abs(), scale);
    }
}

#[test]
fn zero_state_has_zero_target() {
    let hi = PhysicalParams::truth(32);
    let pair = subgrid_tendency(&Tensor::zeros(&[2, 32, 32]), &hi, &hi.with_grid(8), &FilterSpec::for_grid(L, 8)).unwrap();
    assert_eq!(pair.q.max_abs(), 0.0);
    assert_eq!(pair.s.max_abs(), 0.0);
}

#[test]
fn target_matches_composition_of_public_ops() {
    let hi = PhysicalParams::truth(64);
    let lo = hi.with_grid(16);
    let spec = FilterSpec::for_grid(L, 16);
    let q = common::smooth(2, 64, 24, 1e-6, 12);
    let pair = subgrid_tendency(&q, &hi, &lo, &spec).unwrap();

    let q_lo = coarsen(&q, 16, 16, &spec, L).unwrap();
    let filtered = coarsen(&tendency(&q, &hi, None).unwrap(), 16, 16, &spec, L).unwrap();
    let s = filtered.sub(&tendency(&q_lo, &lo, None).unwrap());

    assert!(pair.q.max_abs_diff(&q_lo) <= 1e-12 * q_lo.max_abs());
    assert!(pair.s.max_abs_diff(&s) <= 1e-12 * s.max_abs());
    // Scale interaction leaves a genuine residual.
    assert!(s.max_abs() > 1e-3 * filtered.max_abs());
}

#[test]
fn subgrid_operator_requires_matching_physics() {
    let hi = PhysicalParams::truth(32);
    let lo = hi.with_grid(8).with_theta(0.3, 0.02);
    assert!(SubgridOperator::new(&hi, &lo, &FilterSpec::for_grid(L, 8)).is_err());
}
