mod common;

use hybrid_qg::autodiff::{grad_check_components, Tape, Tensor, Var};
use hybrid_qg::closures::{
    cnn_forward, init_cnn, init_cnn_with, smagorinsky, smagorinsky_with_velocity, CnnArch, CnnParams,
    Normalization, SmagorinskyParams,
};
use hybrid_qg::qg::{PhysicalParams, QgModel};
use hybrid_qg::Result;
use proptest::prelude::*;

fn small_net(seed: u64) -> CnnParams {
    let mut p = init_cnn_with(&CnnArch::narrow(&[4, 3, 3, 3, 3]), seed).unwrap();
    p.norm = Normalization {
        in_mean: vec![1e-6, -2e-6],
        in_std: vec![3e-6, 1e-6],
        out_mean: vec![1e-13, 0.0],
        out_std: vec![2e-12, 5e-13],
    };
    p
}

#[test]
fn table2_parameter_count_and_shapes() {
    let arch = CnnArch::table2();
    assert_eq!(arch.param_count(), 113_762);
    let direct: usize = [(2, 128), (128, 64), (64, 32), (32, 32), (32, 32), (32, 2)]
        .iter()
        .map(|&(i, o)| i * o * 9 + o)
        .sum();
    assert_eq!(direct, 113_762);
    let p = init_cnn(0);
    assert_eq!(p.weights[0].shape(), &[128, 2, 3, 3]);
    assert_eq!(p.weights[5].shape(), &[2, 32, 3, 3]);
    assert_eq!(p.flatten().len(), 113_762);
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    assert_eq!(init_cnn(7), init_cnn(7));
    assert_ne!(init_cnn(7).flatten(), init_cnn(8).flatten());
    let p = init_cnn(3);
    assert!(p.biases.iter().all(|b| b.max_abs() == 0.0));
    let bound = (6.0f64 / 18.0).sqrt();
    assert!(p.weights[0].max_abs() <= bound);
}

#[test]
fn zero_weights_give_output_mean() {
    let p = small_net(1);
    let p = p.with_flat(&vec![0.0; p.num_params()]).unwrap();
    let y = cnn_forward(&common::noise(&[2, 16, 16], 1e-5, 2), &p).unwrap();
    assert_eq!(y.shape(), &[2, 16, 16]);
    assert!(y.re()[..256].iter().all(|&v| v == 1e-13));
    assert!(y.re()[256..].iter().all(|&v| v == 0.0));
}

#[test]
fn forward_preserves_shape_and_rejects_bad_input() {
    let p = init_cnn(0);
    assert_eq!(cnn_forward(&Tensor::zeros(&[2, 16, 16]), &p).unwrap().shape(), &[2, 16, 16]);
    assert!(cnn_forward(&Tensor::zeros(&[3, 16, 16]), &p).is_err());
    assert!(cnn_forward(&Tensor::zeros(&[2, 2, 2]), &p).is_err());
}

#[test]
fn flatten_roundtrip() {
    let p = small_net(4);
    let flat = p.flatten();
    assert_eq!(p.with_flat(&flat).unwrap(), p);
    assert!(p.with_flat(&flat[1..]).is_err());
}

fn roll(t: &Tensor, dy: usize, dx: usize) -> Tensor {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; t.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[ch * h * w + ((y + dy) % h) * w + (x + dx) % w] = t.re()[ch * h * w + y * w + x];
            }
        }
    }
    Tensor::real(s, out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cnn_is_translation_equivariant(seed in 0u64..10_000, dy in 0usize..8, dx in 0usize..8) {
        let p = small_net(seed);
        let q = common::noise(&[2, 8, 8], 1e-5, seed + 1);
        let a = roll(&cnn_forward(&q, &p).unwrap(), dy, dx);
        let b = cnn_forward(&roll(&q, dy, dx), &p).unwrap();
        prop_assert_eq!(a.re(), b.re());
    }

    #[test]
    fn smagorinsky_ignores_mean_offsets(seed in 0u64..10_000, c in -1e-5f64..1e-5) {
        // The kappa = 0 mode carries the stream-function gauge; a uniform PV offset leaves the velocities alone.
        let params = PhysicalParams::truth(16);
        let model = QgModel::new(&params).unwrap();
        let sp = SmagorinskyParams::for_grid(&params, 0.1);
        let q = common::smooth(2, 16, 4, 1e-5, seed);
        let a = smagorinsky(&q, &model, &sp).unwrap();
        let b = smagorinsky(&q.add(&Tensor::filled(&[2, 16, 16], c)), &model, &sp).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-9 * a.max_abs());
    }
}

fn weight_loss(p: &CnnParams, q: &Tensor, layer: usize) -> impl Fn(&mut Tape, Var) -> Result<Var> {
    let p = p.clone();
    let q = q.clone();
    move |tape: &mut Tape, w: Var| {
        let mut vars = p.register(tape, false);
        vars.layers[layer].0 = w;
        let x = tape.constant(q.clone());
        let y = vars.forward(tape, x)?;
        let y = tape.scale(y, 1e12)?;
        let s = tape.square(y)?;
        tape.sum(s)
    }
}

#[test]
fn cnn_weight_gradients_match_finite_differences() {
    let p = small_net(5);
    let q = common::noise(&[2, 8, 8], 3e-6, 6);
    for layer in 0..p.weights.len() {
        let w = &p.weights[layer];
        let comps: Vec<usize> = (0..w.len()).step_by((w.len() / 7).max(1)).collect();
        let err = grad_check_components(weight_loss(&p, &q, layer), w, 1e-6, &comps).unwrap();
        assert!(err < 1e-5, "layer {layer}: {err}");
    }
}

#[test]
fn table2_cnn_gradient_matches_finite_differences() {
    let mut p = init_cnn(9);
    p.norm = small_net(0).norm;
    let q = common::noise(&[2, 8, 8], 3e-6, 10);
    for layer in [0, 5] {
        let w = &p.weights[layer];
        let comps: Vec<usize> = (0..w.len()).step_by(w.len() / 5).collect();
        let err = grad_check_components(weight_loss(&p, &q, layer), w, 1e-6, &comps).unwrap();
        assert!(err < 1e-5, "layer {layer}: {err}");
    }
}

#[test]
fn smagorinsky_zero_cases() {
    let params = PhysicalParams::truth(16);
    let model = QgModel::new(&params).unwrap();
    let q = common::smooth(2, 16, 4, 1e-5, 1);
    let off = SmagorinskyParams::for_grid(&params, 0.0);
    assert_eq!(smagorinsky(&q, &model, &off).unwrap().max_abs(), 0.0);

    let sp = SmagorinskyParams::for_grid(&params, 0.1);
    let u = Tensor::filled(&[2, 16, 16], 0.2);
    let v = Tensor::filled(&[2, 16, 16], -0.1);
    assert!(smagorinsky_with_velocity(&q, &u, &v, &model, &sp).unwrap().max_abs() < 1e-30);
    assert!(SmagorinskyParams { c_s: -1.0, delta: 1.0 }.validate().is_err());
}

#[test]
fn smagorinsky_dissipates_enstrophy() {
    let params = PhysicalParams::truth(16);
    let model = QgModel::new(&params).unwrap();
    let sp = SmagorinskyParams::for_grid(&params, 0.1);
    for seed in 0..5 {
        let q = if seed == 0 {
            let mut t = Tensor::zeros(&[2, 16, 16]);
            for y in 0..16 {
                for x in 0..16 {
                    t.re_mut()[y * 16 + x] = 1e-5 * (2.0 * std::f64::consts::PI * (2 * x + y) as f64 / 16.0).sin();
                }
            }
            t
        } else {
            common::smooth(2, 16, 5, 1e-5, seed)
        };
        let s = smagorinsky(&q, &model, &sp).unwrap();
        let rate: f64 = q.re().iter().zip(s.re()).map(|(a, b)| a * b).sum::<f64>() / q.len() as f64;
        assert!(rate <= 0.0, "seed {seed}: {rate}");
        assert!(s.max_abs() > 0.0);
    }
}

#[test]
fn normalization_fit_recovers_channel_moments() {
    let a = Tensor::real(&[2, 1, 2], vec![1.0, 3.0, 10.0, 10.0]).unwrap();
    let b = Tensor::real(&[2, 1, 2], vec![1.0, 3.0, 14.0, 6.0]).unwrap();
    let n = Normalization::fit(&[&a, &b], &[&a, &b]).unwrap();
    assert_eq!(n.in_mean, vec![2.0, 10.0]);
    assert_eq!(n.in_std[0], 1.0);
    assert!((n.in_std[1] - 8f64.sqrt()).abs() < 1e-12);
    let flat = Tensor::zeros(&[2, 1, 2]);
    assert!(Normalization::fit(&[&flat], &[&flat]).is_err());
}
