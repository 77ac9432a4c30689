//! The coarse solver with a CNN closure, parameterized by one flat vector
//! `theta = [delta, U1, cnn weights..]`.

use crate::autodiff::{Tape, Tensor};
use crate::closures::CnnParams;
use crate::error::{Error, Result};
use crate::io::Trajectory;
use crate::qg::{PhysicalParams, QgModel};

/// Offsets of the physical scalars inside `theta`.
pub const DELTA: usize = 0;
pub const U1: usize = 1;
pub const N_PHYS: usize = 2;

/// Sum of squared forecast residuals over observations `1..=N` of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Misfit {
    pub ssr: f64,
    /// Number of residual scalars.
    pub points: usize,
    /// `d ssr / d theta`, empty when not requested.
    pub grad: Vec<f64>,
}

impl Misfit {
    pub fn mse(&self) -> f64 {
        self.ssr / self.points as f64
    }
}

#[derive(Clone, Debug)]
pub struct HybridModel {
    model: QgModel,
    template: CnnParams,
}

impl HybridModel {
    /// `base` fixes everything except `delta` and `U1`; `template` fixes the CNN
    /// architecture and normalization.
    pub fn new(base: &PhysicalParams, template: CnnParams) -> Result<Self> {
        template.arch.validate()?;
        template.norm.validate()?;
        Ok(Self {
            model: QgModel::new(base)?,
            template,
        })
    }

    pub fn dim(&self) -> usize {
        N_PHYS + self.template.num_params()
    }

    pub fn model(&self) -> &QgModel {
        &self.model
    }

    pub fn template(&self) -> &CnnParams {
        &self.template
    }

    pub fn pack(&self, delta: f64, u1: f64, cnn: &CnnParams) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        theta.push(delta);
        theta.push(u1);
        theta.extend(cnn.flatten());
        theta
    }

    pub fn unpack(&self, theta: &[f64]) -> Result<(f64, f64, CnnParams)> {
        if theta.len() != self.dim() {
            return Err(Error::shape("theta", format!("length {}, expected {}", theta.len(), self.dim())));
        }
        Ok((theta[DELTA], theta[U1], self.template.with_flat(&theta[N_PHYS..])?))
    }

    /// Value-level forecast `[q0, M^k(q0), .., M^{Nk}(q0)]` under `theta`.
    pub fn forecast(&self, theta: &[f64], q0: &Tensor, n_obs: usize, k: usize) -> Result<Vec<Tensor>> {
        let (delta, u1, cnn) = self.unpack(theta)?;
        let model = QgModel::new(&self.model.params().with_theta(delta, u1))?;
        model.rollout(q0, n_obs, k, &cnn)
    }

    /// Misfit of the forecast from `traj.states[0]` against the remaining states.
    pub fn misfit(&self, theta: &[f64], traj: &Trajectory, k: usize, with_grad: bool) -> Result<Misfit> {
        let (delta, u1, cnn) = self.unpack(theta)?;
        let n_obs = traj
            .states
            .len()
            .checked_sub(1)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidParam("trajectory needs at least two states".into()))?;
        let mut tape = Tape::new();
        let put = |tape: &mut Tape, v: f64| {
            if with_grad {
                tape.leaf(Tensor::scalar(v))
            } else {
                tape.constant(Tensor::scalar(v))
            }
        };
        let dv = put(&mut tape, delta);
        let uv = put(&mut tape, u1);
        let pv = self.model.phys_vars_from(&mut tape, dv, uv)?;
        let net = cnn.register(&mut tape, with_grad);
        let q0 = tape.constant(traj.states[0].clone());
        let pred = self.model.rollout_on_tape(&mut tape, q0, n_obs, k, &pv, &net)?;
        let mut total = None;
        for (p, truth) in pred.iter().zip(&traj.states).skip(1) {
            let t = tape.constant(truth.clone());
            let r = tape.sub(*p, t)?;
            let sq = tape.square(r)?;
            let s = tape.sum(sq)?;
            total = Some(match total {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        let total = total.expect("n_obs >= 1");
        let ssr = tape.value(total).item();
        let points = n_obs * traj.states[0].len();
        if !ssr.is_finite() {
            return Err(Error::NonFinite("trajectory misfit".into()));
        }
        let mut grad = Vec::new();
        if with_grad {
            let g = tape.grad(total)?;
            grad.reserve(self.dim());
            for v in [dv, uv] {
                grad.push(g.get(v).map_or(0.0, |t| t.item()));
            }
            for (v, p) in net.vars().into_iter().zip(cnn.weights.iter().zip(&cnn.biases).flat_map(|(w, b)| [w, b])) {
                match g.get(v) {
                    Some(t) => grad.extend_from_slice(t.re()),
                    None => grad.extend(std::iter::repeat_n(0.0, p.len())),
                }
            }
            if grad.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("trajectory misfit gradient".into()));
            }
        }
        Ok(Misfit { ssr, points, grad })
    }
}
