//! Central finite-difference checks of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-6;

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", format!("f must be scalar, got {:?}", v.shape())));
    }
    let y = v.item();
    if !y.is_finite() {
        return Err(Error::NonFinite("grad_check: f(x) is not finite".into()));
    }
    Ok(y)
}

/// Tape gradient of a scalar function `f` at `x`.
pub fn tape_gradient<F>(f: &F, x: &Tensor) -> Result<Tensor>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let g = tape.grad(out)?.get_or_zeros(xv, x);
    if !g.all_finite() {
        return Err(Error::NonFinite("grad_check: adjoint gradient is not finite".into()));
    }
    Ok(g)
}

/// Max over `components` of `|adjoint - fd| / (|fd| + 1e-12)`, with central differences.
pub fn grad_check_components<F>(f: F, x: &Tensor, eps: f64, components: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidParam(format!("grad_check eps must be > 0, got {eps}")));
    }
    if x.as_real().is_none() {
        return Err(Error::dtype("grad_check", "x must be real"));
    }
    let adjoint = tape_gradient(&f, x)?;
    let mut worst = 0.0_f64;
    for &i in components {
        let mut xp = x.clone();
        xp.re_mut()[i] += eps;
        let mut xm = x.clone();
        xm.re_mut()[i] -= eps;
        let fd = (eval(&f, &xp)? - eval(&f, &xm)?) / (2.0 * eps);
        let rel = (adjoint.re()[i] - fd).abs() / (fd.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// [`grad_check_components`] over every component of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_components(f, x, eps, &all)
}
