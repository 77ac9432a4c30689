//! Periodic 2-D convolution kernels (im2col + GEMM) and their adjoints.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn check(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Self> {
        let xs = x.shape();
        let ws = weight.shape();
        if xs.len() != 3 || ws.len() != 4 || bias.shape().len() != 1 {
            return Err(Error::shape(
                "conv2-periodic",
                format!("x {:?}, weight {:?}, bias {:?}", xs, ws, bias.shape()),
            ));
        }
        let (c_out, c_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c_in != xs[0] || kh != kw || kh % 2 == 0 || bias.shape()[0] != c_out {
            return Err(Error::shape(
                "conv2-periodic",
                format!("x {:?}, weight {:?}, bias {:?}", xs, ws, bias.shape()),
            ));
        }
        if x.as_real().is_none() || weight.as_real().is_none() || bias.as_real().is_none() {
            return Err(Error::dtype("conv2-periodic", "all inputs must be real"));
        }
        Ok(Self {
            c_in,
            c_out,
            h: xs[1],
            w: xs[2],
            k: kh,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h * self.w
    }
}

/// Source index of output position 0 for kernel offset `offset`: `(offset - r) mod n`.
fn shift(offset: usize, r: usize, n: usize) -> usize {
    (offset + n - r % n) % n
}

/// `dst[x] = src[(x + s) mod n]` as two contiguous copies.
fn copy_cyclic(dst: &mut [f64], src: &[f64], s: usize) {
    let n = src.len();
    dst[..n - s].copy_from_slice(&src[s..]);
    dst[n - s..].copy_from_slice(&src[..s]);
}

/// `dst[(x + s) mod n] += src[x]` as two contiguous passes.
fn add_cyclic(dst: &mut [f64], src: &[f64], s: usize) {
    let n = src.len();
    for (d, v) in dst[s..].iter_mut().zip(&src[..n - s]) {
        *d += v;
    }
    for (d, v) in dst[..s].iter_mut().zip(&src[n - s..]) {
        *d += v;
    }
}

fn im2col(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let r = d.k / 2;
    let n = d.cols();
    let mut cols = vec![0.0; d.rows() * n];
    for c in 0..d.c_in {
        let plane = &x[c * n..(c + 1) * n];
        for dy in 0..d.k {
            let sy0 = shift(dy, r, d.h);
            for dx in 0..d.k {
                let sx = shift(dx, r, d.w);
                let row = (c * d.k + dy) * d.k + dx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for y in 0..d.h {
                    let sy = (y + sy0) % d.h;
                    copy_cyclic(&mut dst[y * d.w..(y + 1) * d.w], &plane[sy * d.w..(sy + 1) * d.w], sx);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], d: &ConvDims) -> Vec<f64> {
    let r = d.k / 2;
    let n = d.cols();
    let mut x = vec![0.0; d.c_in * n];
    for c in 0..d.c_in {
        let plane = &mut x[c * n..(c + 1) * n];
        for dy in 0..d.k {
            let sy0 = shift(dy, r, d.h);
            for dx in 0..d.k {
                let sx = shift(dx, r, d.w);
                let row = (c * d.k + dy) * d.k + dx;
                let src = &cols[row * n..(row + 1) * n];
                for y in 0..d.h {
                    let sy = (y + sy0) % d.h;
                    add_cyclic(&mut plane[sy * d.w..(sy + 1) * d.w], &src[y * d.w..(y + 1) * d.w], sx);
                }
            }
        }
    }
    x
}

/// `c = alpha * a(m×k) * b(k×n) + beta * c`, row-major with optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents given the dims above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward periodic ("same") cross-correlation with bias. Output `(c_out, h, w)`.
pub(crate) fn conv2_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = ConvDims::check(x, weight, bias)?;
    let cols = im2col(x.re(), &d);
    let n = d.cols();
    let mut out = vec![0.0; d.c_out * n];
    for (o, b) in bias.re().iter().enumerate() {
        out[o * n..(o + 1) * n].fill(*b);
    }
    gemm(d.c_out, d.rows(), n, weight.re(), false, &cols, false, 1.0, &mut out);
    Ok(Tensor::from_real_unchecked(vec![d.c_out, d.h, d.w], out))
}

/// Gradients `(dx, dweight, dbias)` for the upstream gradient `dy`.
pub(crate) fn conv2_backward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    dy: &Tensor,
    need_x: bool,
    need_params: bool,
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let d = ConvDims::check(x, weight, bias)?;
    let n = d.cols();
    let g = dy.re();
    let (dw, db) = if need_params {
        let cols = im2col(x.re(), &d);
        let mut dw = vec![0.0; d.c_out * d.rows()];
        gemm(d.c_out, n, d.rows(), g, false, &cols, true, 0.0, &mut dw);
        let db: Vec<f64> = (0..d.c_out).map(|o| g[o * n..(o + 1) * n].iter().sum()).collect();
        (
            Some(Tensor::from_real_unchecked(weight.shape().to_vec(), dw)),
            Some(Tensor::from_real_unchecked(vec![d.c_out], db)),
        )
    } else {
        (None, None)
    };
    let dx = if need_x {
        let mut dcols = vec![0.0; d.rows() * n];
        gemm(d.rows(), d.c_out, n, weight.re(), true, g, false, 0.0, &mut dcols);
        Some(Tensor::from_real_unchecked(x.shape().to_vec(), col2im(&dcols, &d)))
    } else {
        None
    };
    Ok((dx, dw, db))
}

/// Periodic padding of the trailing two axes of a `(c, h, w)` tensor by `p` cells.
pub(crate) fn pad_periodic(x: &Tensor, p: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || x.as_real().is_none() || p > s[1] || p > s[2] {
        return Err(Error::shape("pad-periodic", format!("{:?} with pad {p}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let src = x.re();
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for y in 0..hp {
            let sy = (y + h - p) % h;
            for xx in 0..wp {
                let sx = (xx + w - p) % w;
                out[(ch * hp + y) * wp + xx] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    Ok(Tensor::from_real_unchecked(vec![c, hp, wp], out))
}

pub(crate) fn pad_periodic_adjoint(g: &Tensor, input_shape: &[usize], p: usize) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let src = g.re();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..hp {
            let sy = (y + h - p) % h;
            for xx in 0..wp {
                let sx = (xx + w - p) % w;
                out[(ch * h + sy) * w + sx] += src[(ch * hp + y) * wp + xx];
            }
        }
    }
    Tensor::from_real_unchecked(input_shape.to_vec(), out)
}
