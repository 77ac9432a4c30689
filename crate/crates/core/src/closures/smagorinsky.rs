use num_complex::Complex64;

use crate::autodiff::{fft, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::qg::{Closure, PhysicalParams, QgModel, TapeClosure};

/// Smagorinsky eddy-viscosity constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmagorinskyParams {
    pub c_s: f64,
    /// Filter width, m (the grid spacing).
    pub delta: f64,
}

impl SmagorinskyParams {
    pub const DEFAULT_CS: f64 = 0.1;

    pub fn for_grid(params: &PhysicalParams, c_s: f64) -> Self {
        Self {
            c_s,
            delta: params.dx(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_s >= 0.0) || !(self.delta > 0.0) {
            return Err(Error::InvalidParam(format!("invalid Smagorinsky constants {self:?}")));
        }
        Ok(())
    }
}

fn apply_table(spec: &Tensor, table: &Tensor) -> Tensor {
    let t = table.cx();
    let m = t.len();
    let data: Vec<Complex64> = spec.cx().iter().enumerate().map(|(i, &c)| c * t[i % m]).collect();
    Tensor::complex(spec.shape(), data).expect("same shape")
}

/// `div(nu grad q)` with `nu = (c_s delta)^2 sqrt(4 u_x^2 + (v_x + u_y)^2)` for given grid velocities.
pub fn smagorinsky_with_velocity(
    q: &Tensor,
    u: &Tensor,
    v: &Tensor,
    model: &QgModel,
    sp: &SmagorinskyParams,
) -> Result<Tensor> {
    sp.validate()?;
    if u.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape("smagorinsky", format!("{:?}, {:?} vs {:?}", u.shape(), v.shape(), q.shape())));
    }
    let nx = model.params().nx;
    let (ikx, iky) = model.derivative_tables();
    let d = |f: &Tensor, t: &Tensor| -> Result<Tensor> { fft::irfft2(&apply_table(&fft::rfft2(f)?, t), nx) };
    let ux = d(u, ikx)?;
    let uy = d(u, iky)?;
    let vx = d(v, ikx)?;
    let qx = d(q, ikx)?;
    let qy = d(q, iky)?;
    let c = (sp.c_s * sp.delta).powi(2);
    let nu: Vec<f64> = ux
        .re()
        .iter()
        .zip(uy.re())
        .zip(vx.re())
        .map(|((a, b), e)| c * (4.0 * a * a + (e + b) * (e + b)).sqrt())
        .collect();
    let fx: Vec<f64> = nu.iter().zip(qx.re()).map(|(n, g)| n * g).collect();
    let fy: Vec<f64> = nu.iter().zip(qy.re()).map(|(n, g)| n * g).collect();
    let fx = Tensor::real(q.shape(), fx)?;
    let fy = Tensor::real(q.shape(), fy)?;
    Ok(d(&fx, ikx)?.add(&d(&fy, iky)?))
}

/// Smagorinsky closure tendency for the grid-space PV `q`, with velocities from its stream function.
pub fn smagorinsky(q: &Tensor, model: &QgModel, sp: &SmagorinskyParams) -> Result<Tensor> {
    let qh = fft::rfft2(q)?;
    let psih = model.invert(&qh)?;
    let (ikx, iky) = model.derivative_tables();
    let nx = model.params().nx;
    let u = fft::irfft2(&apply_table(&psih, iky), nx)?.scale(-1.0);
    let v = fft::irfft2(&apply_table(&psih, ikx), nx)?;
    smagorinsky_with_velocity(q, &u, &v, model, sp)
}

impl TapeClosure for SmagorinskyParams {
    /// Recorded as a constant forcing: the baseline is evaluated, never differentiated.
    fn apply(&self, tape: &mut Tape, model: &QgModel, q: Var) -> Result<Option<Var>> {
        let s = smagorinsky(tape.value(q), model, self)?;
        Ok(Some(tape.constant(s)))
    }
}

impl Closure for SmagorinskyParams {
    fn bind<'a>(&'a self, _: &mut Tape) -> Result<Box<dyn TapeClosure + 'a>> {
        Ok(Box::new(*self))
    }
}
