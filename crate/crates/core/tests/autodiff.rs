mod common;

use std::sync::Arc;

use hybrid_qg::autodiff::{grad_check, tape_gradient, DType, OpKind, Tape, Tensor, Var};
use hybrid_qg::closures::{init_cnn_with, CnnArch};
use hybrid_qg::qg::{ModelState, NoClosure, PhysicalParams, QgModel};
use hybrid_qg::{Error, Result};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn real(shape: &[usize], seed: u64) -> Tensor {
    common::noise(shape, 1.0, seed)
}

fn complex(shape: &[usize], seed: u64) -> Tensor {
    let mut r = common::rng(seed);
    let n = shape.iter().product();
    Tensor::complex(
        shape,
        (0..n)
            .map(|_| Complex64::new(2.0 * r.random::<f64>() - 1.0, 2.0 * r.random::<f64>() - 1.0))
            .collect(),
    )
    .unwrap()
}

/// Samples a cotangent with the dtype and shape of `like`.
fn cotangent(like: &Tensor, seed: u64) -> Tensor {
    match like.dtype() {
        DType::Real => real(like.shape(), seed),
        DType::Complex => complex(like.shape(), seed),
    }
}

/// `(<J v, y>, <v, J* y>)` for the op built by `f` at `x`. For a linear op `J v = f(v)`;
/// otherwise `J v` comes from central differences.
fn adjoint_pair<F>(f: F, x: &Tensor, v: &Tensor, seed: u64, linear: bool) -> Result<(f64, f64)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let y = cotangent(tape.value(out), seed);
    let jt_y = tape.backward(out, y.clone())?.get_or_zeros(xv, x);

    let eval = |t: &Tensor| -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(t.clone());
        let out = f(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    };
    if linear {
        return Ok((eval(v)?.dot(&y), v.dot(&jt_y)));
    }
    let h = 1e-6;
    let mut xp = x.clone();
    xp.axpy(h, v);
    let mut xm = x.clone();
    xm.axpy(-h, v);
    let jv = eval(&xp)?.sub(&eval(&xm)?).scale(0.5 / h);
    Ok((jv.dot(&y), v.dot(&jt_y)))
}

fn assert_adjoint<F>(name: &str, f: F, x: &Tensor, seed: u64, tol: f64) -> std::result::Result<(), TestCaseError>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let v = cotangent(x, seed + 1);
    let (lhs, rhs) = adjoint_pair(f, x, &v, seed + 2, tol < 1e-8).unwrap();
    prop_assert!(
        (lhs - rhs).abs() <= tol * lhs.abs().max(rhs.abs()).max(1e-3),
        "{name}: <Jv,y> = {lhs}, <v,J*y> = {rhs}"
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_ops_satisfy_adjoint_identity(seed in 0u64..1_000_000) {
        let shp = [2, 8, 8];
        let x = real(&shp, seed);
        let xc = complex(&[2, 8, 5], seed);
        let tol = 1e-10;
        assert_adjoint("scale", |t: &mut Tape, a| t.scale(a, -1.7), &x, seed, tol)?;
        assert_adjoint("fft2", |t: &mut Tape, a| t.fft2(a), &x, seed, tol)?;
        assert_adjoint("ifft2", |t: &mut Tape, a| t.ifft2(a, 8), &xc, seed, tol)?;
        assert_adjoint("pad-periodic", |t: &mut Tape, a| t.pad_periodic(a, 2), &x, seed, tol)?;
        assert_adjoint("sum", |t: &mut Tape, a| t.sum(a), &x, seed, tol)?;
        assert_adjoint("mean", |t: &mut Tape, a| t.mean(a), &x, seed, tol)?;
        assert_adjoint("take-layer", |t: &mut Tape, a| t.take_layer(a, 1), &x, seed, tol)?;
        assert_adjoint("add", |t: &mut Tape, a| { let b = t.scale(a, 2.0)?; t.add(a, b) }, &x, seed, tol)?;
        assert_adjoint("sub", |t: &mut Tape, a| { let b = t.scale(a, 3.0)?; t.sub(a, b) }, &x, seed, tol)?;
        assert_adjoint("concat", |t: &mut Tape, a| { let b = t.take_layer(a, 0)?; let b = t.stack(&[b])?; t.concat(&[a, b]) }, &x, seed, tol)?;
        assert_adjoint("stack", |t: &mut Tape, a| { let b = t.scale(a, 0.5)?; t.stack(&[a, b]) }, &x, seed, tol)?;
        let index: Arc<[usize]> = (0..40).map(|i| (i * 7 + 3) % 128).collect::<Vec<_>>().into();
        assert_adjoint("select-modes", |t: &mut Tape, a| t.select_modes(a, index.clone(), &[5, 8]), &x, seed, tol)?;
        let index_c: Arc<[usize]> = (0..40).map(|i| (i * 11 + 1) % 80).collect::<Vec<_>>().into();
        assert_adjoint("select-modes complex", |t: &mut Tape, a| t.select_modes(a, index_c.clone(), &[40]), &xc, seed, tol)?;
        let m_real = Arc::new(real(&[8, 5], seed + 9));
        let m_cx = Arc::new(complex(&[8, 5], seed + 9));
        assert_adjoint("diag-mul real", |t: &mut Tape, a| t.diag_mul(a, m_real.clone()), &xc, seed, tol)?;
        assert_adjoint("diag-mul complex", |t: &mut Tape, a| t.diag_mul(a, m_cx.clone()), &xc, seed, tol)?;
        let w = real(&[3, 2, 3, 3], seed + 5);
        let b = real(&[3], seed + 6);
        assert_adjoint("conv2-periodic in x", |t: &mut Tape, a| {
            let wv = t.constant(w.clone());
            let bv = t.constant(Tensor::zeros(&[3]));
            t.conv2_periodic(a, wv, bv)
        }, &x, seed, tol)?;
        let xin = x.clone();
        assert_adjoint("conv2-periodic in w", |t: &mut Tape, wv| {
            let xv = t.constant(xin.clone());
            let bv = t.constant(Tensor::zeros(&[3]));
            t.conv2_periodic(xv, wv, bv)
        }, &w, seed, tol)?;
        assert_adjoint("conv2-periodic in b", |t: &mut Tape, bv| {
            let xv = t.constant(Tensor::zeros(&shp));
            let wv = t.constant(w.clone());
            t.conv2_periodic(xv, wv, bv)
        }, &b, seed, tol)?;
    }

    #[test]
    fn nonlinear_op_jacobians_satisfy_adjoint_identity(seed in 0u64..1_000_000) {
        let x = real(&[2, 6, 6], seed);
        let xc = complex(&[2, 6, 4], seed);
        let other = real(&[2, 6, 6], seed + 10);
        let other_c = complex(&[2, 6, 4], seed + 10);
        let tol = 1e-7;
        assert_adjoint("square", |t: &mut Tape, a| t.square(a), &x, seed, tol)?;
        assert_adjoint("mul", |t: &mut Tape, a| { let b = t.constant(other.clone()); t.mul(a, b) }, &x, seed, tol)?;
        assert_adjoint("mul complex", |t: &mut Tape, a| { let b = t.constant(other_c.clone()); t.mul(a, b) }, &xc, seed, tol)?;
        assert_adjoint("mul self", |t: &mut Tape, a| t.mul(a, a), &xc, seed, tol)?;
        // Shift away from zero so neither relu kinks nor poles sit inside the difference stencil.
        let shifted = Tensor::real(x.shape(), x.re().iter().map(|v| v + v.signum() * 0.1).collect()).unwrap();
        assert_adjoint("relu", |t: &mut Tape, a| t.relu(a), &shifted, seed, tol)?;
        let far = Tensor::real(x.shape(), x.re().iter().map(|v| v + 2.0 * v.signum()).collect()).unwrap();
        assert_adjoint("recip", |t: &mut Tape, a| t.recip(a), &far, seed, tol)?;
    }

    #[test]
    fn replay_is_bit_identical(seed in 0u64..1_000_000) {
        let x = common::smooth(2, 8, 2, 1e-5, seed);
        let params = PhysicalParams::truth(8);
        let model = QgModel::new(&params).unwrap();
        let run = || {
            let mut t = Tape::new();
            let q = t.leaf(x.clone());
            let pv = model.phys_vars(&mut t, hybrid_qg::qg::Trainable::BOTH).unwrap();
            let traj = model.rollout_on_tape(&mut t, q, 2, 3, &pv, &NoClosure).unwrap();
            let last = *traj.last().unwrap();
            let s = t.square(last).unwrap();
            let s = t.sum(s).unwrap();
            let g = t.grad(s).unwrap();
            (t.value(s).item().to_bits(), g.get(q).unwrap().re().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn elementwise_examples() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::real(&[2], vec![1.0, 2.0]).unwrap());
    let b = t.leaf(Tensor::real(&[2], vec![3.0, 4.0]).unwrap());
    let s = t.add(a, b).unwrap();
    assert_eq!(t.value(s).re(), &[4.0, 6.0]);
    let c = t.constant(Tensor::real(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = t.relu(c).unwrap();
    assert_eq!(t.value(r).re(), &[0.0, 0.0, 2.0]);
    assert_eq!(t.kind(r), OpKind::Relu);
}

#[test]
fn scalar_broadcast_and_mismatch() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::real(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let c = t.add_scalar(a, 0.5).unwrap();
    assert_eq!(t.value(c).re(), &[1.5, 2.5, 3.5]);
    let b = t.leaf(Tensor::zeros(&[2]));
    let err = t.mul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("mul") && msg.contains("[3]") && msg.contains("[2]"), "{msg}");
}

#[test]
fn backward_examples() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::real(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let s = t.square(x).unwrap();
    let s = t.sum(s).unwrap();
    assert_eq!(t.grad(s).unwrap().get(x).unwrap().re(), &[2.0, 4.0, 6.0]);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::real(&[4], vec![5.0, -1.0, 0.0, 2.0]).unwrap());
    let m = t.mean(x).unwrap();
    assert_eq!(t.grad(m).unwrap().get(x).unwrap().re(), &[0.25; 4]);

    let mut other = Tape::new();
    let v = other.leaf(Tensor::scalar(1.0));
    assert!(matches!(Tape::new().backward(v, Tensor::scalar(1.0)), Err(Error::EmptyTape)));
}

#[test]
fn fft_roundtrip_residual_has_zero_gradient() {
    let x0 = real(&[2, 8, 8], 17);
    let f = |t: &mut Tape, x: Var| {
        let h = t.fft2(x)?;
        let back = t.ifft2(h, 8)?;
        let d = t.sub(back, x)?;
        let d = t.square(d)?;
        t.sum(d)
    };
    let g = tape_gradient(&f, &x0).unwrap();
    assert!(g.max_abs() < 1e-12, "{}", g.max_abs());
}

#[test]
fn seed_must_match_output() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros(&[3]));
    let y = t.square(x).unwrap();
    assert!(t.backward(y, Tensor::zeros(&[2])).is_err());
    assert!(t.grad(y).is_err());
}

#[test]
fn grad_check_on_sum_of_squares() {
    let x = real(&[8], 21);
    let err = grad_check(
        |t: &mut Tape, x: Var| {
            let s = t.square(x)?;
            t.sum(s)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn grad_check_rejects_bad_input() {
    let f = |t: &mut Tape, x: Var| t.sum(x);
    assert!(grad_check(f, &Tensor::zeros(&[2]), 0.0).is_err());
    let f = |t: &mut Tape, x: Var| {
        let r = t.recip(x)?;
        t.sum(r)
    };
    assert!(matches!(grad_check(f, &Tensor::zeros(&[2]), 1e-6), Err(Error::NonFinite(_))));
}

#[test]
fn single_qg_step_gradient() {
    let params = PhysicalParams::truth(8);
    let model = QgModel::new(&params).unwrap();
    let q0 = common::smooth(2, 8, 3, 1e-5, 4);
    let pv_model = &model;
    let f = move |t: &mut Tape, q: Var| {
        let pv = pv_model.phys_vars(t, hybrid_qg::qg::Trainable::NONE)?;
        let traj = pv_model.rollout_on_tape(t, q, 1, 1, &pv, &NoClosure)?;
        let s = t.square(traj[1])?;
        let s = t.sum(s)?;
        t.scale(s, 1e10)
    };
    let err = grad_check(f, &q0, 1e-11).unwrap();
    assert!(err < 1e-5, "{err}");
    // The value path and the tape path take the same step.
    let value = model.step(&ModelState::new(q0.clone()), &NoClosure).unwrap();
    let mut t = Tape::new();
    let q = t.constant(q0);
    let pv = model.phys_vars(&mut t, hybrid_qg::qg::Trainable::NONE).unwrap();
    let traj = model.rollout_on_tape(&mut t, q, 1, 1, &pv, &NoClosure).unwrap();
    assert!(t.value(traj[1]).max_abs_diff(&value.q) <= 1e-15 * value.q.max_abs());
}

#[test]
fn cnn_forward_gradient() {
    let mut p = init_cnn_with(&CnnArch::narrow(&[6, 4]), 5).unwrap();
    p.norm.in_std = vec![1e-5, 1e-5];
    let q = common::smooth(2, 8, 3, 1e-5, 6);
    let probe = real(&[2, 8, 8], 7);
    let f = move |t: &mut Tape, x: Var| {
        let net = p.register(t, false);
        let y = net.forward(t, x)?;
        let w = t.constant(probe.clone());
        let y = t.mul(y, w)?;
        let y = t.sum(y)?;
        t.scale(y, 1e5)
    };
    let err = grad_check(f, &q, 1e-10).unwrap();
    assert!(err < 1e-5, "{err}");
}
