//! Adjoint-versus-finite-difference checks of the three gradients training relies on.

use crate::autodiff::{grad_check, grad_check_components, Tape, Tensor, Var};
use crate::closures::{init_cnn_with, CnnArch, CnnParams};
use crate::data::initial_condition;
use crate::error::Result;
use crate::hybrid::HybridModel;
use crate::io::Trajectory;
use crate::qg::{NoClosure, PhysicalParams, QgModel};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn squared_norm_sum(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &v in vars {
        let s = tape.square(v)?;
        let s = tape.sum(s)?;
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    Ok(total.expect("nonempty"))
}

fn small_cnn(seed: u64) -> Result<CnnParams> {
    let mut p = init_cnn_with(&CnnArch::narrow(&[6, 4]), seed)?;
    p.norm.in_std = vec![3e-6, 1e-6];
    p.norm.out_std = vec![3e-12, 2e-13];
    // break the zero-bias symmetry so every ReLU region is exercised
    for (i, b) in p.biases.iter_mut().enumerate() {
        for (j, v) in b.re_mut().iter_mut().enumerate() {
            *v = 0.05 * ((i + 2 * j) % 3) as f64 - 0.05;
        }
    }
    Ok(p)
}

/// `|| rollout(q0) ||^2` on an 8x8 grid, N = 2, k = 4, as a function of delta and of U1.
pub fn solver_check() -> Result<f64> {
    let params = PhysicalParams::truth(8);
    let model = QgModel::new(&params)?;
    let q0 = initial_condition(8, 2, 2e-5, 5);
    let f = |which: usize| {
        let model = &model;
        let q0 = q0.clone();
        move |tape: &mut Tape, x: Var| {
            let p = model.params();
            let (d, u) = if which == 0 {
                (x, tape.constant(Tensor::scalar(p.u1)))
            } else {
                (tape.constant(Tensor::scalar(p.delta)), x)
            };
            let pv = model.phys_vars_from(tape, d, u)?;
            let q = tape.constant(q0.clone());
            let traj = model.rollout_on_tape(tape, q, 2, 4, &pv, &NoClosure)?;
            squared_norm_sum(tape, &traj)
        }
    };
    let e_delta = grad_check(f(0), &Tensor::scalar(params.delta), 1e-6)?;
    let e_u1 = grad_check(f(1), &Tensor::scalar(params.u1), 1e-7)?;
    Ok(e_delta.max(e_u1))
}

/// Weighted sum of CNN outputs, differentiated with respect to the input and every layer's weights.
pub fn cnn_check() -> Result<f64> {
    let p = small_cnn(3)?;
    let q = initial_condition(8, 3, 6e-6, 9);
    let probe = Tensor::real(&[2, 8, 8], (0..128).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect())?;
    let mut worst = 0.0_f64;
    {
        let p = p.clone();
        let probe = probe.clone();
        let f = move |tape: &mut Tape, x: Var| {
            let net = p.register(tape, false);
            let y = net.forward(tape, x)?;
            let y = tape.scale(y, 1e12)?;
            let w = tape.constant(probe.clone());
            let s = tape.mul(y, w)?;
            tape.sum(s)
        };
        let comps: Vec<usize> = (0..q.len()).step_by(5).collect();
        worst = worst.max(grad_check_components(f, &q, 1e-12, &comps)?);
    }
    for layer in 0..p.weights.len() {
        let p2 = p.clone();
        let q2 = q.clone();
        let probe = probe.clone();
        let f = move |tape: &mut Tape, w: Var| {
            let mut net = p2.register(tape, false);
            net.layers[layer].0 = w;
            let x = tape.constant(q2.clone());
            let y = net.forward(tape, x)?;
            let y = tape.scale(y, 1e12)?;
            let pr = tape.constant(probe.clone());
            let s = tape.mul(y, pr)?;
            tape.sum(s)
        };
        let w = &p.weights[layer];
        let comps: Vec<usize> = (0..w.len()).step_by((w.len() / 9).max(1)).collect();
        worst = worst.max(grad_check_components(f, w, 1e-6, &comps)?);
    }
    Ok(worst)
}

/// Full hybrid trajectory misfit, with respect to delta, U1 and a spread of CNN weights.
pub fn loss_check() -> Result<f64> {
    let truth_params = PhysicalParams::truth(8);
    let cnn = small_cnn(4)?;
    let hm = HybridModel::new(&truth_params, cnn.clone())?;
    let q0 = initial_condition(8, 2, 2e-5, 6);
    let states = QgModel::new(&truth_params)?.rollout(&q0, 2, 4, &NoClosure)?;
    let traj = Trajectory {
        sim: 0,
        t0: 0.0,
        states,
        targets: None,
    };
    let theta = hm.pack(0.2, 0.02, &cnn);
    let scale = 1e10;
    let m = hm.misfit(&theta, &traj, 4, true)?;
    let n = theta.len();
    let mut comps = vec![0, 1];
    comps.extend((2..n).step_by((n / 12).max(1)));
    let mut worst = 0.0_f64;
    for i in comps {
        let eps = match i {
            0 => 1e-6,
            1 => 1e-7,
            _ => 1e-6,
        };
        let mut tp = theta.clone();
        tp[i] += eps;
        let mut tm = theta.clone();
        tm[i] -= eps;
        let fd = scale * (hm.misfit(&tp, &traj, 4, false)?.ssr - hm.misfit(&tm, &traj, 4, false)?.ssr) / (2.0 * eps);
        let ad = scale * m.grad[i];
        if fd.abs() < 1e-9 && ad.abs() < 1e-9 {
            continue;
        }
        worst = worst.max((ad - fd).abs() / fd.abs().max(1e-12));
    }
    Ok(worst)
}

pub fn gradient_checks() -> Result<Vec<GradCheck>> {
    Ok(vec![
        GradCheck {
            name: "solver",
            max_rel_err: solver_check()?,
        },
        GradCheck {
            name: "closure",
            max_rel_err: cnn_check()?,
        },
        GradCheck {
            name: "loss",
            max_rel_err: loss_check()?,
        },
    ])
}
