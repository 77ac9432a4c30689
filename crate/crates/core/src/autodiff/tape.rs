//! Recording tape and reverse sweep.
//!
//! Every operation appends one node holding its forward value. `backward` walks the
//! nodes in reverse recording order and accumulates adjoints additively, so a value
//! that feeds several nodes receives the sum of their contributions. Nodes that do
//! not depend on any leaf are skipped.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use super::conv;
use super::fft;
use super::tensor::{Buffer, DType, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation kinds with a registered adjoint rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Scale,
    Recip,
    Fft2,
    Ifft2,
    Conv2Periodic,
    Relu,
    PadPeriodic,
    Sum,
    Mean,
    Square,
    SelectModes,
    SpectralDiagonalMultiply,
    TakeLayer,
    Concat,
    Stack,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Constant => "constant",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Recip => "recip",
            OpKind::Fft2 => "fft2",
            OpKind::Ifft2 => "ifft2",
            OpKind::Conv2Periodic => "conv2-periodic",
            OpKind::Relu => "relu",
            OpKind::PadPeriodic => "pad-periodic",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Square => "square",
            OpKind::SelectModes => "select-modes",
            OpKind::SpectralDiagonalMultiply => "spectral-diagonal-multiply",
            OpKind::TakeLayer => "take-layer",
            OpKind::Concat => "concat",
            OpKind::Stack => "stack",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Recip(Var),
    Fft2(Var),
    Ifft2(Var),
    Conv2(Var, Var, Var),
    Relu(Var),
    Pad(Var, usize),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Select(Var, Arc<[usize]>),
    DiagMul(Var, Arc<Tensor>),
    TakeLayer(Var, usize),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Recip(..) => OpKind::Recip,
            Op::Fft2(..) => OpKind::Fft2,
            Op::Ifft2(..) => OpKind::Ifft2,
            Op::Conv2(..) => OpKind::Conv2Periodic,
            Op::Relu(..) => OpKind::Relu,
            Op::Pad(..) => OpKind::PadPeriodic,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Square(..) => OpKind::Square,
            Op::Select(..) => OpKind::SelectModes,
            Op::DiagMul(..) => OpKind::SpectralDiagonalMultiply,
            Op::TakeLayer(..) => OpKind::TakeLayer,
            Op::Concat(..) => OpKind::Concat,
            Op::Stack(..) => OpKind::Stack,
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients of one output with respect to the leaves of a tape.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    grads: HashMap<Var, Tensor>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    /// Gradient for `v`, or zeros shaped like `like` when the leaf received none.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.grads.get(&v).cloned().unwrap_or_else(|| like.zeros_like())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_or_scalar(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else {
        Err(Error::shape(
            op,
            format!("{:?} vs {:?} (only identical shapes or scalar-vs-array)", a.shape(), b.shape()),
        ))
    }
}

fn cval(t: &Tensor, i: usize) -> Complex64 {
    match t.buffer() {
        Buffer::Real(v) => Complex64::new(v[if v.len() == 1 { 0 } else { i }], 0.0),
        Buffer::Complex(v) => v[if v.len() == 1 { 0 } else { i }],
    }
}

fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    fr: impl Fn(f64, f64) -> f64,
    fc: impl Fn(Complex64, Complex64) -> Complex64,
) -> Result<Tensor> {
    let shape = same_or_scalar(op, a, b)?;
    let n: usize = shape.iter().product();
    match (a.buffer(), b.buffer()) {
        (Buffer::Real(x), Buffer::Real(y)) => {
            let out = if x.len() == y.len() {
                x.iter().zip(y).map(|(p, q)| fr(*p, *q)).collect()
            } else if x.len() == 1 {
                y.iter().map(|q| fr(x[0], *q)).collect()
            } else {
                x.iter().map(|p| fr(*p, y[0])).collect()
            };
            Ok(Tensor::from_real_unchecked(shape, out))
        }
        _ => Ok(Tensor::from_complex_unchecked(
            shape,
            (0..n).map(|i| fc(cval(a, i), cval(b, i))).collect(),
        )),
    }
}

/// Reduces an upstream gradient to the dtype and shape of an input.
fn reduce_to(g: Tensor, target: &Tensor) -> Tensor {
    let g = match target.dtype() {
        DType::Real => g.real_part(),
        DType::Complex => g.to_complex(),
    };
    if g.shape() == target.shape() {
        return g;
    }
    // scalar broadcast: sum everything
    match g.buffer() {
        Buffer::Real(v) => Tensor::from_real_unchecked(target.shape().to_vec(), vec![v.iter().sum()]),
        Buffer::Complex(v) => Tensor::from_complex_unchecked(
            target.shape().to_vec(),
            vec![v.iter().sum()],
        ),
    }
}

fn require_real(op: &'static str, t: &Tensor) -> Result<()> {
    if t.dtype() != DType::Real {
        return Err(Error::dtype(op, "input must be real"));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary("add", self.value(a), self.value(b), |x, y| x + y, |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary("sub", self.value(a), self.value(b), |x, y| x - y, |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary("mul", self.value(a), self.value(b), |x, y| x * y, |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, ng))
    }

    /// Multiplication by a constant real factor.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).scale(s);
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Scale(a, s), v, ng))
    }

    /// Adds a constant real offset (recorded as `a + constant`).
    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let c = self.constant(Tensor::scalar(s));
        self.add(a, c)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        require_real("recip", x)?;
        let v = Tensor::from_real_unchecked(x.shape().to_vec(), x.re().iter().map(|x| 1.0 / x).collect());
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Recip(a), v, ng))
    }

    /// Unscaled real-to-half-spectrum FFT over the trailing two axes.
    pub fn fft2(&mut self, a: Var) -> Result<Var> {
        let v = fft::rfft2(self.value(a))?;
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Fft2(a), v, ng))
    }

    /// Half-spectrum-to-real inverse FFT (scaled by `1/N`) onto an `nx`-wide grid.
    pub fn ifft2(&mut self, a: Var, nx: usize) -> Result<Var> {
        let v = fft::irfft2(self.value(a), nx)?;
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Ifft2(a), v, ng))
    }

    /// Periodic "same" convolution: `x (c_in,h,w)`, `weight (c_out,c_in,k,k)`, `bias (c_out)`.
    pub fn conv2_periodic(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let v = conv::conv2_forward(self.value(x), self.value(weight), self.value(bias))?;
        let ng = self.needs(&[x, weight, bias]);
        Ok(self.push(Op::Conv2(x, weight, bias), v, ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        require_real("relu", x)?;
        let v = Tensor::from_real_unchecked(
            x.shape().to_vec(),
            x.re().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        );
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Relu(a), v, ng))
    }

    pub fn pad_periodic(&mut self, a: Var, pad: usize) -> Result<Var> {
        let v = conv::pad_periodic(self.value(a), pad)?;
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Pad(a, pad), v, ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        require_real("sum", x)?;
        let v = Tensor::scalar(x.sum_real());
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Sum(a), v, ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        require_real("mean", x)?;
        if x.is_empty() {
            return Err(Error::shape("mean", "empty input"));
        }
        let v = Tensor::scalar(x.sum_real() / x.len() as f64);
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Mean(a), v, ng))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        require_real("square", x)?;
        let v = Tensor::from_real_unchecked(x.shape().to_vec(), x.re().iter().map(|x| x * x).collect());
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Square(a), v, ng))
    }

    /// Gathers `out[i] = a[index[i]]` (flat indices) into a tensor of `shape`.
    pub fn select_modes(&mut self, a: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let n: usize = shape.iter().product();
        if index.len() != n || index.iter().any(|&i| i >= x.len()) {
            return Err(Error::shape(
                "select-modes",
                format!("{} indices into {:?} for output {:?}", index.len(), x.shape(), shape),
            ));
        }
        let v = match x.buffer() {
            Buffer::Real(d) => Tensor::from_real_unchecked(shape.to_vec(), index.iter().map(|&i| d[i]).collect()),
            Buffer::Complex(d) => {
                Tensor::from_complex_unchecked(shape.to_vec(), index.iter().map(|&i| d[i]).collect())
            }
        };
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Select(a, index), v, ng))
    }

    /// Elementwise product with a fixed multiplier broadcast over leading axes.
    ///
    /// The multiplier's shape must equal the trailing dims of `a`.
    pub fn diag_mul(&mut self, a: Var, multiplier: Arc<Tensor>) -> Result<Var> {
        let x = self.value(a);
        let ms = multiplier.shape();
        let xs = x.shape();
        if ms.len() > xs.len() || &xs[xs.len() - ms.len()..] != ms {
            return Err(Error::shape(
                "spectral-diagonal-multiply",
                format!("multiplier {:?} vs input {:?}", ms, xs),
            ));
        }
        let v = diag_apply(x, &multiplier, false);
        let ng = self.needs(&[a]);
        Ok(self.push(Op::DiagMul(a, multiplier), v, ng))
    }

    /// Slice `i` of the leading axis.
    pub fn take_layer(&mut self, a: Var, i: usize) -> Result<Var> {
        let x = self.value(a);
        if x.shape().is_empty() || i >= x.shape()[0] {
            return Err(Error::shape("take-layer", format!("index {i} of {:?}", x.shape())));
        }
        let v = x.index_axis0(i);
        let ng = self.needs(&[a]);
        Ok(self.push(Op::TakeLayer(a, i), v, ng))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat0(&vals)?;
        let ng = self.needs(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), v, ng))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .map(|&p| self.value(p).shape().to_vec())
            .ok_or_else(|| Error::shape("stack", "no inputs"))?;
        let mut lifted = Vec::with_capacity(parts.len());
        for &p in parts {
            let x = self.value(p);
            if x.shape() != first.as_slice() {
                return Err(Error::shape("stack", format!("{:?} vs {:?}", x.shape(), first)));
            }
            let mut shape = vec![1];
            shape.extend_from_slice(x.shape());
            lifted.push(x.clone().reshape(&shape)?);
        }
        let refs: Vec<&Tensor> = lifted.iter().collect();
        let v = Tensor::concat0(&refs)?;
        let ng = self.needs(parts);
        Ok(self.push(Op::Stack(parts.to_vec()), v, ng))
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape and dtype as the output).
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<GradientMap> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let out = self.value(output);
        if seed.shape() != out.shape() || seed.dtype() != out.dtype() {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} does not match output {:?}", seed.shape(), out.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed);
        let mut result = GradientMap::default();

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    result.grads.insert(Var(id), g);
                }
                Op::Constant => {}
                op => self.propagate(op, &node.value, g, &mut grads)?,
            }
        }
        Ok(result)
    }

    /// Gradient of a real scalar output (seed 1).
    pub fn grad(&self, output: Var) -> Result<GradientMap> {
        let out = self.value(output);
        if out.len() != 1 || out.dtype() != DType::Real {
            return Err(Error::shape(
                "backward",
                format!("loss must be a real scalar, got {:?}", out.shape()),
            ));
        }
        let seed = Tensor::filled(out.shape(), 1.0);
        self.backward(output, seed)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(1.0, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, value: &Tensor, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, reduce_to(g.clone(), self.value(*a)));
                }
                self.accumulate(grads, *b, reduce_to(g, self.value(*b)));
            }
            Op::Sub(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, reduce_to(g.clone(), self.value(*a)));
                }
                self.accumulate(grads, *b, reduce_to(g.scale(-1.0), self.value(*b)));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let ga = binary("mul", &g, &bv.conj(), |x, y| x * y, |x, y| x * y)?;
                    self.accumulate(grads, *a, reduce_to(ga, av));
                }
                if self.nodes[b.0].needs_grad {
                    let gb = binary("mul", &g, &av.conj(), |x, y| x * y, |x, y| x * y)?;
                    self.accumulate(grads, *b, reduce_to(gb, bv));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Recip(a) => {
                // d(1/x) = -1/x^2 = -y^2
                let gv: Vec<f64> = g.re().iter().zip(value.re()).map(|(g, y)| -g * y * y).collect();
                self.accumulate(grads, *a, Tensor::from_real_unchecked(value.shape().to_vec(), gv));
            }
            Op::Fft2(a) => {
                let nx = *self.value(*a).shape().last().unwrap();
                self.accumulate(grads, *a, fft::rfft2_adjoint(&g, nx)?);
            }
            Op::Ifft2(a) => self.accumulate(grads, *a, fft::irfft2_adjoint(&g)?),
            Op::Conv2(x, w, b) => {
                let need_x = self.nodes[x.0].needs_grad;
                let need_p = self.nodes[w.0].needs_grad || self.nodes[b.0].needs_grad;
                let (dx, dw, db) = conv::conv2_backward(
                    self.value(*x),
                    self.value(*w),
                    self.value(*b),
                    &g,
                    need_x,
                    need_p,
                )?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let Some(db) = db {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Relu(a) => {
                let gv: Vec<f64> = g
                    .re()
                    .iter()
                    .zip(value.re())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_real_unchecked(value.shape().to_vec(), gv));
            }
            Op::Pad(a, p) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, conv::pad_periodic_adjoint(&g, &shape, *p));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(shape, g.item()));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(x.shape(), g.item() / x.len() as f64));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let gv: Vec<f64> = g.re().iter().zip(x.re()).map(|(g, x)| 2.0 * g * x).collect();
                self.accumulate(grads, *a, Tensor::from_real_unchecked(x.shape().to_vec(), gv));
            }
            Op::Select(a, index) => {
                let x = self.value(*a);
                let mut acc = x.zeros_like();
                let mismatch = || Error::dtype("select-modes", "gradient dtype mismatch");
                match g.buffer() {
                    Buffer::Real(gv) => {
                        let dst = acc.as_real_mut().ok_or_else(mismatch)?;
                        for (k, &i) in index.iter().enumerate() {
                            dst[i] += gv[k];
                        }
                    }
                    Buffer::Complex(gv) => {
                        let dst = acc.as_complex_mut().ok_or_else(mismatch)?;
                        for (k, &i) in index.iter().enumerate() {
                            dst[i] += gv[k];
                        }
                    }
                }
                self.accumulate(grads, *a, acc);
            }
            Op::DiagMul(a, m) => {
                let ga = diag_apply(&g, m, true);
                self.accumulate(grads, *a, reduce_to(ga, self.value(*a)));
            }
            Op::TakeLayer(a, i) => {
                let x = self.value(*a);
                let inner = g.len();
                let mut acc = x.zeros_like();
                match g.buffer() {
                    Buffer::Real(gv) => acc.re_mut()[i * inner..(i + 1) * inner].copy_from_slice(gv),
                    Buffer::Complex(gv) => {
                        acc.as_complex_mut().unwrap()[i * inner..(i + 1) * inner].copy_from_slice(gv)
                    }
                }
                self.accumulate(grads, *a, acc);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n0 = self.value(*p).shape()[0];
                    if self.nodes[p.0].needs_grad {
                        let slices: Vec<Tensor> = (offset..offset + n0).map(|i| g.index_axis0(i)).collect();
                        let refs: Vec<&Tensor> = slices.iter().collect();
                        let part = Tensor::concat0(&refs)?.reshape(self.value(*p).shape())?;
                        self.accumulate(grads, *p, part);
                    }
                    offset += n0;
                }
            }
            Op::Stack(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if self.nodes[p.0].needs_grad {
                        self.accumulate(grads, *p, g.index_axis0(i));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `x * m` broadcast over leading axes; `conj_m` applies `conj(m)` (the adjoint).
fn diag_apply(x: &Tensor, m: &Tensor, conj_m: bool) -> Tensor {
    let inner = m.len();
    let shape = x.shape().to_vec();
    match (x.buffer(), m.buffer()) {
        (Buffer::Real(xv), Buffer::Real(mv)) => Tensor::from_real_unchecked(
            shape,
            xv.iter().enumerate().map(|(i, x)| x * mv[i % inner]).collect(),
        ),
        _ => {
            let n = x.len();
            Tensor::from_complex_unchecked(
                shape,
                (0..n)
                    .map(|i| {
                        let mm = cval(m, i % inner);
                        cval(x, i) * if conj_m { mm.conj() } else { mm }
                    })
                    .collect(),
            )
        }
    }
}
