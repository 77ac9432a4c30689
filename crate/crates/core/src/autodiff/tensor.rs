//! Dense real/complex arrays used as tape values.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Real,
    Complex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Buffer {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// Row-major dense tensor. A rank-0 shape (`[]`) holds a single scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    buf: Buffer,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn real(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            buf: Buffer::Real(data),
        })
    }

    pub fn complex(shape: &[usize], data: Vec<Complex64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            buf: Buffer::Complex(data),
        })
    }

    pub(crate) fn from_real_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            buf: Buffer::Real(data),
        }
    }

    pub(crate) fn from_complex_unchecked(shape: Vec<usize>, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            buf: Buffer::Complex(data),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            buf: Buffer::Real(vec![value]),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_real_unchecked(shape.to_vec(), vec![0.0; numel(shape)])
    }

    pub fn zeros_complex(shape: &[usize]) -> Self {
        Self::from_complex_unchecked(shape.to_vec(), vec![Complex64::new(0.0, 0.0); numel(shape)])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self::from_real_unchecked(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn zeros_like(&self) -> Self {
        match self.dtype() {
            DType::Real => Self::zeros(&self.shape),
            DType::Complex => Self::zeros_complex(&self.shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True for tensors holding exactly one value with rank 0.
    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn dtype(&self) -> DType {
        match self.buf {
            Buffer::Real(_) => DType::Real,
            Buffer::Complex(_) => DType::Complex,
        }
    }

    pub fn buffer(&self) -> &Buffer {
        &self.buf
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.buf {
            Buffer::Real(v) => Some(v),
            Buffer::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&[Complex64]> {
        match &self.buf {
            Buffer::Complex(v) => Some(v),
            Buffer::Real(_) => None,
        }
    }

    pub fn as_real_mut(&mut self) -> Option<&mut [f64]> {
        match &mut self.buf {
            Buffer::Real(v) => Some(v),
            Buffer::Complex(_) => None,
        }
    }

    pub fn as_complex_mut(&mut self) -> Option<&mut [Complex64]> {
        match &mut self.buf {
            Buffer::Complex(v) => Some(v),
            Buffer::Real(_) => None,
        }
    }

    /// Real data; panics on complex tensors. Use where the dtype is an invariant.
    pub fn re(&self) -> &[f64] {
        self.as_real().expect("expected a real tensor")
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        self.as_real_mut().expect("expected a real tensor")
    }

    pub fn cx(&self) -> &[Complex64] {
        self.as_complex().expect("expected a complex tensor")
    }

    pub fn into_real_vec(self) -> Vec<f64> {
        match self.buf {
            Buffer::Real(v) => v,
            Buffer::Complex(_) => panic!("expected a real tensor"),
        }
    }

    pub fn into_complex_vec(self) -> Vec<Complex64> {
        match self.buf {
            Buffer::Complex(v) => v,
            Buffer::Real(v) => v.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
        }
    }

    /// The single value of a one-element real tensor.
    pub fn item(&self) -> f64 {
        let v = self.re();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.shape);
        v[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn to_complex(&self) -> Tensor {
        match &self.buf {
            Buffer::Complex(_) => self.clone(),
            Buffer::Real(v) => Self::from_complex_unchecked(
                self.shape.clone(),
                v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            ),
        }
    }

    /// Real part for complex tensors; identity for real ones.
    pub fn real_part(&self) -> Tensor {
        match &self.buf {
            Buffer::Real(_) => self.clone(),
            Buffer::Complex(v) => {
                Self::from_real_unchecked(self.shape.clone(), v.iter().map(|z| z.re).collect())
            }
        }
    }

    pub fn conj(&self) -> Tensor {
        match &self.buf {
            Buffer::Real(_) => self.clone(),
            Buffer::Complex(v) => {
                Self::from_complex_unchecked(self.shape.clone(), v.iter().map(|z| z.conj()).collect())
            }
        }
    }

    /// Real inner product; complex tensors are treated as interleaved (re, im) pairs.
    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "dot of mismatched shapes");
        match (&self.buf, &other.buf) {
            (Buffer::Real(a), Buffer::Real(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            (Buffer::Complex(a), Buffer::Complex(b)) => {
                a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
            }
            (Buffer::Real(a), Buffer::Complex(b)) | (Buffer::Complex(b), Buffer::Real(a)) => {
                a.iter().zip(b).map(|(x, y)| x * y.re).sum()
            }
        }
    }

    pub fn sum_real(&self) -> f64 {
        self.re().iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        match &self.buf {
            Buffer::Real(v) => v.iter().map(|x| x * x).sum(),
            Buffer::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum(),
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.buf {
            Buffer::Real(v) => v.iter().all(|x| x.is_finite()),
            Buffer::Complex(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match &self.buf {
            Buffer::Real(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Buffer::Complex(v) => v.iter().fold(0.0, |m, z| m.max(z.norm())),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff of mismatched shapes");
        match (&self.buf, &other.buf) {
            (Buffer::Real(a), Buffer::Real(b)) => {
                a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
            }
            _ => {
                let a = self.to_complex();
                let b = other.to_complex();
                a.cx().iter().zip(b.cx()).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
            }
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        match &self.buf {
            Buffer::Real(v) => Self::from_real_unchecked(self.shape.clone(), v.iter().map(|x| x * s).collect()),
            Buffer::Complex(v) => {
                Self::from_complex_unchecked(self.shape.clone(), v.iter().map(|x| x * s).collect())
            }
        }
    }

    /// Elementwise `self - other` for same-shape, same-dtype tensors.
    pub fn sub(&self, other: &Tensor) -> Tensor {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// `self += alpha * other`. A real `other` may be added into a complex `self`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "axpy of mismatched shapes");
        match (&mut self.buf, &other.buf) {
            (Buffer::Real(a), Buffer::Real(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += alpha * y;
                }
            }
            (Buffer::Complex(a), Buffer::Complex(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y * alpha;
                }
            }
            (Buffer::Complex(a), Buffer::Real(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    x.re += alpha * y;
                }
            }
            (Buffer::Real(_), Buffer::Complex(_)) => panic!("axpy: complex into real tensor"),
        }
    }

    /// View of the `i`-th slice along the leading axis, copied out.
    pub fn index_axis0(&self, i: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let shape = self.shape[1..].to_vec();
        match &self.buf {
            Buffer::Real(v) => Self::from_real_unchecked(shape, v[i * inner..(i + 1) * inner].to_vec()),
            Buffer::Complex(v) => {
                Self::from_complex_unchecked(shape, v[i * inner..(i + 1) * inner].to_vec())
            }
        }
    }

    /// Concatenates tensors along the leading axis; trailing dims and dtype must agree.
    pub fn concat0(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let inner = &first.shape[1..];
        let mut lead = 0;
        for p in parts {
            if p.shape.is_empty() || &p.shape[1..] != inner || p.dtype() != first.dtype() {
                return Err(Error::shape(
                    "concat",
                    format!("incompatible part {:?} vs {:?}", p.shape, first.shape),
                ));
            }
            lead += p.shape[0];
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(inner);
        Ok(match first.dtype() {
            DType::Real => Self::from_real_unchecked(
                shape,
                parts.iter().flat_map(|p| p.re().iter().copied()).collect(),
            ),
            DType::Complex => Self::from_complex_unchecked(
                shape,
                parts.iter().flat_map(|p| p.cx().iter().copied()).collect(),
            ),
        })
    }
}
