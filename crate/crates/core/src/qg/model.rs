use std::sync::Arc;

use num_complex::Complex64;

use super::grid::SpectralGrid;
use super::params::{PhysicalParams, PvGradient, Trainable};
use crate::autodiff::{fft, Tape, Tensor, Var};
use crate::coarse::FilterSpec;
use crate::error::{Error, Result};

const AB2: [f64; 2] = [1.5, -0.5];
const AB3: [f64; 3] = [23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0];

/// A sub-grid closure whose parameters are already registered on a tape.
pub trait TapeClosure {
    /// Grid-space forcing `(2, ny, nx)` for the grid-space state `q`, or `None` for no forcing.
    fn apply(&self, tape: &mut Tape, model: &QgModel, q: Var) -> Result<Option<Var>>;
}

/// A closure usable from the value-level API: bound onto a fresh tape as constants.
pub trait Closure {
    fn bind<'a>(&'a self, tape: &mut Tape) -> Result<Box<dyn TapeClosure + 'a>>;
}

/// The uncorrected physics model.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClosure;

impl TapeClosure for NoClosure {
    fn apply(&self, _: &mut Tape, _: &QgModel, _: Var) -> Result<Option<Var>> {
        Ok(None)
    }
}

impl Closure for NoClosure {
    fn bind<'a>(&'a self, _: &mut Tape) -> Result<Box<dyn TapeClosure + 'a>> {
        Ok(Box::new(NoClosure))
    }
}

/// A fixed forcing field, independent of the state.
#[derive(Clone, Debug)]
pub struct ConstantClosure(pub Tensor);

impl TapeClosure for ConstantClosure {
    fn apply(&self, tape: &mut Tape, _: &QgModel, _: Var) -> Result<Option<Var>> {
        Ok(Some(tape.constant(self.0.clone())))
    }
}

impl Closure for ConstantClosure {
    fn bind<'a>(&'a self, _: &mut Tape) -> Result<Box<dyn TapeClosure + 'a>> {
        Ok(Box::new(self.clone()))
    }
}

/// Physical scalars on a tape, with the couplings and PV gradients derived from them.
#[derive(Clone, Copy, Debug)]
pub struct PhysVars {
    pub delta: Var,
    pub u1: Var,
    pub u2: Var,
    pub f1: Var,
    pub f2: Var,
    pub qy: [Var; 2],
}

/// Solver state: grid-space PV plus up to two previous spectral tendencies (newest first).
#[derive(Clone, Debug)]
pub struct ModelState {
    pub q: Tensor,
    pub history: Vec<Tensor>,
    pub step: usize,
}

impl ModelState {
    pub fn new(q: Tensor) -> Self {
        Self {
            q,
            history: Vec::new(),
            step: 0,
        }
    }
}

/// [`ModelState`] with its fields living on a tape.
#[derive(Clone, Debug)]
pub struct TapeState {
    pub q: Var,
    pub history: Vec<Var>,
    pub step: usize,
}

impl TapeState {
    pub fn new(q: Var) -> Self {
        Self {
            q,
            history: Vec::new(),
            step: 0,
        }
    }
}

/// Pseudo-spectral two-layer QG operators for one parameter set and grid.
///
/// Grid fields are `(2, ny, nx)` real tensors; spectra are `(2, ny, nx/2+1)` complex.
/// The trainable scalars `delta` and `U1` enter only through [`PhysVars`], so one
/// model can be reused for any value of them.
#[derive(Clone, Debug)]
pub struct QgModel {
    params: PhysicalParams,
    grid: SpectralGrid,
    filter: FilterSpec,
    ikx: Arc<Tensor>,
    iky: Arc<Tensor>,
    neg_ikx: Arc<Tensor>,
    neg_iky: Arc<Tensor>,
    kappa2: Arc<Tensor>,
    green: Arc<Tensor>,
    drag: Arc<Tensor>,
    filter_table: Arc<Tensor>,
}

/// Complex table `f(kx, ky, kappa^2)`, with first-derivative wavenumbers (Nyquist zeroed).
fn spectral_table(grid: &SpectralGrid, f: impl Fn(f64, f64, f64) -> Complex64) -> Tensor {
    let mut data = Vec::with_capacity(grid.ny() * grid.nh());
    let kx = grid.kx_deriv();
    for (j, &l) in grid.ky_deriv().iter().enumerate() {
        for (i, &k) in kx.iter().enumerate() {
            data.push(f(k, l, grid.kappa2()[j * grid.nh() + i]));
        }
    }
    Tensor::complex(&grid.spec_shape(), data).expect("grid shape")
}

fn real_table(grid: &SpectralGrid, f: impl Fn(f64) -> f64) -> Tensor {
    let data = grid.kappa2().iter().map(|&k2| f(k2)).collect();
    Tensor::real(&grid.spec_shape(), data).expect("grid shape")
}

impl QgModel {
    pub fn new(params: &PhysicalParams) -> Result<Self> {
        params.validate()?;
        let grid = SpectralGrid::new(params.nx, params.ny, params.domain_length);
        let filter = FilterSpec::for_spacing(grid.dx(), FilterSpec::CUTOFF_FRACTION)?;
        let inv_rd2 = 1.0 / (params.r_d * params.r_d);
        let i = Complex64::i();
        let green = real_table(&grid, |k2| if k2 == 0.0 { 0.0 } else { -1.0 / (k2 * (k2 + inv_rd2)) });
        let kappa2 = real_table(&grid, |k2| k2);
        let drag = Tensor::concat0(&[
            &Tensor::zeros(&grid.spec_shape()).reshape(&[1, grid.ny(), grid.nh()])?,
            &kappa2.scale(params.r_ek).reshape(&[1, grid.ny(), grid.nh()])?,
        ])?;
        Ok(Self {
            ikx: Arc::new(spectral_table(&grid, |k, _, _| i * k)),
            iky: Arc::new(spectral_table(&grid, |_, l, _| i * l)),
            neg_ikx: Arc::new(spectral_table(&grid, |k, _, _| -i * k)),
            neg_iky: Arc::new(spectral_table(&grid, |_, l, _| -i * l)),
            filter_table: Arc::new(filter.table(&grid)),
            kappa2: Arc::new(kappa2),
            green: Arc::new(green),
            drag: Arc::new(drag),
            params: params.clone(),
            grid,
            filter,
        })
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn filter(&self) -> &FilterSpec {
        &self.filter
    }

    pub fn field_shape(&self) -> [usize; 3] {
        [2, self.params.ny, self.params.nx]
    }

    pub fn spec_shape(&self) -> [usize; 3] {
        [2, self.grid.ny(), self.grid.nh()]
    }

    /// Multipliers `i kx` and `i ky` on the half spectrum.
    pub fn derivative_tables(&self) -> (&Arc<Tensor>, &Arc<Tensor>) {
        (&self.ikx, &self.iky)
    }

    pub fn kappa2_table(&self) -> &Arc<Tensor> {
        &self.kappa2
    }

    /// Registers `delta` and `U1` from the stored parameters, as leaves where `trainable` says so.
    pub fn phys_vars(&self, tape: &mut Tape, trainable: Trainable) -> Result<PhysVars> {
        let mk = |tape: &mut Tape, v: f64, leaf: bool| {
            if leaf {
                tape.leaf(Tensor::scalar(v))
            } else {
                tape.constant(Tensor::scalar(v))
            }
        };
        let delta = mk(tape, self.params.delta, trainable.delta);
        let u1 = mk(tape, self.params.u1, trainable.u1);
        self.phys_vars_from(tape, delta, u1)
    }

    /// Derives the couplings and PV gradients from scalar `delta` and `U1` already on the tape.
    pub fn phys_vars_from(&self, tape: &mut Tape, delta: Var, u1: Var) -> Result<PhysVars> {
        let p = &self.params;
        let inv_rd2 = 1.0 / (p.r_d * p.r_d);
        let one_plus = tape.add_scalar(delta, 1.0)?;
        let r = tape.recip(one_plus)?;
        let f1 = tape.scale(r, inv_rd2)?;
        let f2 = tape.mul(f1, delta)?;
        let u2 = tape.constant(Tensor::scalar(p.u2));
        let qy = match p.pv_gradient {
            PvGradient::Effective => {
                let shear = tape.add_scalar(u1, -p.u2)?;
                let a = tape.mul(f1, shear)?;
                let b = tape.mul(f2, shear)?;
                let b = tape.scale(b, -1.0)?;
                [tape.add_scalar(a, p.beta)?, tape.add_scalar(b, p.beta)?]
            }
            PvGradient::Literal => {
                let b = tape.constant(Tensor::scalar(p.beta));
                [b, b]
            }
        };
        Ok(PhysVars {
            delta,
            u1,
            u2,
            f1,
            f2,
            qy,
        })
    }

    /// Stream-function spectrum from the PV spectrum `qh (2, ny, nh)`.
    pub fn invert_on_tape(&self, tape: &mut Tape, qh: Var, pv: &PhysVars) -> Result<Var> {
        let q1 = tape.take_layer(qh, 0)?;
        let q2 = tape.take_layer(qh, 1)?;
        let a1 = tape.mul(pv.f2, q1)?;
        let a2 = tape.mul(pv.f1, q2)?;
        let a = tape.add(a1, a2)?;
        let mut out = [q1, q2];
        for layer in out.iter_mut() {
            let k = tape.diag_mul(*layer, self.kappa2.clone())?;
            let s = tape.add(k, a)?;
            *layer = tape.diag_mul(s, self.green.clone())?;
        }
        tape.stack(&out)
    }

    /// PV spectrum from a stream-function spectrum (the forward map of the inversion).
    pub fn pv_from_psi_on_tape(&self, tape: &mut Tape, psih: Var, pv: &PhysVars) -> Result<Var> {
        let p1 = tape.take_layer(psih, 0)?;
        let p2 = tape.take_layer(psih, 1)?;
        let d21 = tape.sub(p2, p1)?;
        let d12 = tape.scale(d21, -1.0)?;
        let mut out = [p1, p2];
        for (layer, (f, d)) in out.iter_mut().zip([(pv.f1, d21), (pv.f2, d12)]) {
            let lap = tape.diag_mul(*layer, self.kappa2.clone())?;
            let lap = tape.scale(lap, -1.0)?;
            let c = tape.mul(f, d)?;
            *layer = tape.add(lap, c)?;
        }
        tape.stack(&out)
    }

    fn tendency_parts(
        &self,
        tape: &mut Tape,
        q: Var,
        pv: &PhysVars,
        closure: Option<Var>,
    ) -> Result<(Var, Var)> {
        let qh = tape.fft2(q)?;
        let psih = self.invert_on_tape(tape, qh, pv)?;

        let mut parts = [tape.take_layer(qh, 0)?, tape.take_layer(qh, 1)?];
        let us = [pv.u1, pv.u2];
        for (l, part) in parts.iter_mut().enumerate() {
            let ps = tape.take_layer(psih, l)?;
            let a = tape.mul(us[l], *part)?;
            let b = tape.mul(pv.qy[l], ps)?;
            *part = tape.add(a, b)?;
        }
        let lin = tape.stack(&parts)?;
        let mut dq = tape.diag_mul(lin, self.neg_ikx.clone())?;

        if self.params.advection {
            let uh = tape.diag_mul(psih, self.neg_iky.clone())?;
            let vh = tape.diag_mul(psih, self.ikx.clone())?;
            let u = tape.ifft2(uh, self.params.nx)?;
            let v = tape.ifft2(vh, self.params.nx)?;
            let uq = tape.mul(u, q)?;
            let vq = tape.mul(v, q)?;
            let uqh = tape.fft2(uq)?;
            let vqh = tape.fft2(vq)?;
            let jx = tape.diag_mul(uqh, self.ikx.clone())?;
            let jy = tape.diag_mul(vqh, self.iky.clone())?;
            let j = tape.add(jx, jy)?;
            dq = tape.sub(dq, j)?;
        }

        let drag = tape.diag_mul(psih, self.drag.clone())?;
        dq = tape.add(dq, drag)?;

        if let Some(s) = closure {
            if tape.value(s).shape() != tape.value(q).shape() {
                return Err(Error::shape(
                    "tendency",
                    format!(
                        "closure output {:?} vs state {:?}",
                        tape.value(s).shape(),
                        tape.value(q).shape()
                    ),
                ));
            }
            let sh = tape.fft2(s)?;
            dq = tape.add(dq, sh)?;
        }
        Ok((dq, qh))
    }

    fn check_state(&self, tape: &Tape, q: Var) -> Result<()> {
        if tape.value(q).shape() != self.field_shape() {
            return Err(Error::shape(
                "qg-state",
                format!("expected {:?}, got {:?}", self.field_shape(), tape.value(q).shape()),
            ));
        }
        Ok(())
    }

    /// Spectral tendency `dq^/dt` of the grid state `q`, with optional grid-space forcing.
    pub fn tendency_on_tape(&self, tape: &mut Tape, q: Var, pv: &PhysVars, closure: Option<Var>) -> Result<Var> {
        self.check_state(tape, q)?;
        Ok(self.tendency_parts(tape, q, pv, closure)?.0)
    }

    /// One Euler/AB2/AB3 step followed by the stabilization filter.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        state: &TapeState,
        pv: &PhysVars,
        closure: &dyn TapeClosure,
    ) -> Result<TapeState> {
        self.check_state(tape, state.q)?;
        if state.history.len() > 2 {
            return Err(Error::InvalidParam(format!("history length {} > 2", state.history.len())));
        }
        let forcing = closure.apply(tape, self, state.q)?;
        let (dq, qh) = self.tendency_parts(tape, state.q, pv, forcing)?;
        let dt = self.params.dt;
        let coeffs: &[f64] = match state.history.len() {
            0 => &[1.0],
            1 => &AB2,
            _ => &AB3,
        };
        let mut incr = tape.scale(dq, dt * coeffs[0])?;
        for (c, &h) in coeffs[1..].iter().zip(&state.history) {
            let t = tape.scale(h, dt * c)?;
            incr = tape.add(incr, t)?;
        }
        let qh_new = tape.add(qh, incr)?;
        let qh_new = tape.diag_mul(qh_new, self.filter_table.clone())?;
        let q_new = tape.ifft2(qh_new, self.params.nx)?;
        if !tape.value(q_new).all_finite() {
            return Err(Error::Blowup {
                obs: 0,
                step: state.step,
                detail: "non-finite PV after step".into(),
            });
        }
        let mut history = vec![dq];
        history.extend(state.history.iter().take(1).copied());
        Ok(TapeState {
            q: q_new,
            history,
            step: state.step + 1,
        })
    }

    /// `[q0, M^k(q0), .., M^{Nk}(q0)]`, differentiable end to end.
    pub fn rollout_on_tape(
        &self,
        tape: &mut Tape,
        q0: Var,
        n_obs: usize,
        k: usize,
        pv: &PhysVars,
        closure: &dyn TapeClosure,
    ) -> Result<Vec<Var>> {
        if k == 0 {
            return Err(Error::InvalidParam("steps per observation must be >= 1".into()));
        }
        let mut state = TapeState::new(q0);
        let mut out = Vec::with_capacity(n_obs + 1);
        out.push(q0);
        for i in 1..=n_obs {
            for _ in 0..k {
                state = self.step_on_tape(tape, &state, pv, closure).map_err(|e| locate(e, i))?;
            }
            out.push(state.q);
        }
        Ok(out)
    }

    fn const_phys(&self, tape: &mut Tape) -> Result<PhysVars> {
        self.phys_vars(tape, Trainable::NONE)
    }

    pub fn invert(&self, q_spec: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = self.const_phys(&mut tape)?;
        let qh = tape.constant(q_spec.clone());
        if q_spec.shape() != self.spec_shape() {
            return Err(Error::shape("invert", format!("expected {:?}, got {:?}", self.spec_shape(), q_spec.shape())));
        }
        let psi = self.invert_on_tape(&mut tape, qh, &pv)?;
        Ok(tape.value(psi).clone())
    }

    pub fn pv_from_psi(&self, psi_spec: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = self.const_phys(&mut tape)?;
        if psi_spec.shape() != self.spec_shape() {
            return Err(Error::shape(
                "pv_from_psi",
                format!("expected {:?}, got {:?}", self.spec_shape(), psi_spec.shape()),
            ));
        }
        let p = tape.constant(psi_spec.clone());
        let q = self.pv_from_psi_on_tape(&mut tape, p, &pv)?;
        Ok(tape.value(q).clone())
    }

    /// Grid-space stream function of the grid-space PV `q`.
    pub fn stream_function(&self, q: &Tensor) -> Result<Tensor> {
        let qh = fft::rfft2(q)?;
        fft::irfft2(&self.invert(&qh)?, self.params.nx)
    }

    /// Grid-space `dq/dt`.
    pub fn tendency(&self, q: &Tensor, closure_output: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = self.const_phys(&mut tape)?;
        let qv = tape.constant(q.clone());
        let s = closure_output.map(|s| tape.constant(s.clone()));
        let dq = self.tendency_on_tape(&mut tape, qv, &pv, s)?;
        let out = fft::irfft2(tape.value(dq), self.params.nx)?;
        if !out.all_finite() {
            return Err(Error::NonFinite("tendency produced non-finite values".into()));
        }
        Ok(out)
    }

    pub fn step(&self, state: &ModelState, closure: &dyn Closure) -> Result<ModelState> {
        let mut tape = Tape::new();
        let pv = self.const_phys(&mut tape)?;
        let bound = closure.bind(&mut tape)?;
        let ts = TapeState {
            q: tape.constant(state.q.clone()),
            history: state.history.iter().map(|h| tape.constant(h.clone())).collect(),
            step: state.step,
        };
        let next = self.step_on_tape(&mut tape, &ts, &pv, bound.as_ref())?;
        Ok(ModelState {
            q: tape.value(next.q).clone(),
            history: next.history.iter().map(|&h| tape.value(h).clone()).collect(),
            step: next.step,
        })
    }

    /// Value-level rollout; each step runs on its own short-lived tape.
    pub fn rollout(&self, q0: &Tensor, n_obs: usize, k: usize, closure: &dyn Closure) -> Result<Vec<Tensor>> {
        if k == 0 {
            return Err(Error::InvalidParam("steps per observation must be >= 1".into()));
        }
        let mut state = ModelState::new(q0.clone());
        let mut out = Vec::with_capacity(n_obs + 1);
        out.push(q0.clone());
        for i in 1..=n_obs {
            for _ in 0..k {
                state = self.step(&state, closure).map_err(|e| locate(e, i))?;
            }
            out.push(state.q.clone());
        }
        Ok(out)
    }
}

fn locate(e: Error, obs: usize) -> Error {
    match e {
        Error::Blowup { step, detail, .. } => Error::Blowup { obs, step, detail },
        other => other,
    }
}

pub fn invert(q_spec: &Tensor, params: &PhysicalParams) -> Result<Tensor> {
    QgModel::new(params)?.invert(q_spec)
}

pub fn tendency(q: &Tensor, params: &PhysicalParams, closure_output: Option<&Tensor>) -> Result<Tensor> {
    QgModel::new(params)?.tendency(q, closure_output)
}

pub fn step_ab3(state: &ModelState, params: &PhysicalParams, closure: &dyn Closure) -> Result<ModelState> {
    QgModel::new(params)?.step(state, closure)
}

pub fn rollout(
    q0: &Tensor,
    n_obs: usize,
    k: usize,
    params: &PhysicalParams,
    closure: &dyn Closure,
) -> Result<Vec<Tensor>> {
    QgModel::new(params)?.rollout(q0, n_obs, k, closure)
}
