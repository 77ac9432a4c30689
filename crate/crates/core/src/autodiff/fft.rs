//! Batched 2-D real FFTs over the trailing two axes.
//!
//! Forward transforms are unscaled; inverse transforms carry the `1/N` factor.
//! The half spectrum of an `(ny, nx)` field has shape `(ny, nx/2 + 1)`, with the
//! `ky` axis in standard FFT order. Columns `kx = 0` and `kx = nx/2` (the edge
//! columns) appear once in the full spectrum; every other column stands for a
//! conjugate pair, which is why the adjoints below carry the weight `w = 1 | 2`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::tensor::Tensor;
use crate::error::{Error, Result};

struct Plan2 {
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl Plan2 {
    fn scratch_len(&self) -> usize {
        [&self.fwd_x, &self.inv_x, &self.fwd_y, &self.inv_y]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0)
    }
}

fn plan(ny: usize, nx: usize) -> Arc<Plan2> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Plan2>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((ny, nx))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plan2 {
                fwd_x: planner.plan_fft_forward(nx),
                inv_x: planner.plan_fft_inverse(nx),
                fwd_y: planner.plan_fft_forward(ny),
                inv_y: planner.plan_fft_inverse(ny),
            })
        })
        .clone()
}

/// Number of half-spectrum columns for `nx` grid columns.
pub fn half_width(nx: usize) -> usize {
    nx / 2 + 1
}

/// Per-column weight of the half spectrum: 1 on the edge columns, 2 elsewhere.
pub fn column_weight(kx: usize, nx: usize) -> f64 {
    if kx == 0 || (nx % 2 == 0 && kx == nx / 2) {
        1.0
    } else {
        2.0
    }
}

fn split_shape(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, format!("need rank >= 2, got {:?}", shape)));
    }
    let ny = shape[shape.len() - 2];
    let n = shape[shape.len() - 1];
    let batch = shape[..shape.len() - 2].iter().product();
    Ok((batch, ny, n))
}

/// Unscaled real-to-half-spectrum transform of every trailing `(ny, nx)` slice.
pub fn rfft2(x: &Tensor) -> Result<Tensor> {
    let data = x
        .as_real()
        .ok_or_else(|| Error::dtype("fft2", "input must be real"))?;
    let (batch, ny, nx) = split_shape("fft2", x.shape())?;
    if nx % 2 != 0 {
        return Err(Error::shape("fft2", format!("nx must be even, got {nx}")));
    }
    let nh = half_width(nx);
    let p = plan(ny, nx);
    let mut out = vec![Complex64::new(0.0, 0.0); batch * ny * nh];
    let mut row = vec![Complex64::new(0.0, 0.0); nx];
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    let mut scratch = vec![Complex64::new(0.0, 0.0); p.scratch_len()];
    for b in 0..batch {
        let src = &data[b * ny * nx..(b + 1) * ny * nx];
        let dst = &mut out[b * ny * nh..(b + 1) * ny * nh];
        for j in 0..ny {
            for i in 0..nx {
                row[i] = Complex64::new(src[j * nx + i], 0.0);
            }
            p.fwd_x.process_with_scratch(&mut row, &mut scratch[..p.fwd_x.get_inplace_scratch_len()]);
            dst[j * nh..(j + 1) * nh].copy_from_slice(&row[..nh]);
        }
        for i in 0..nh {
            for j in 0..ny {
                col[j] = dst[j * nh + i];
            }
            p.fwd_y.process_with_scratch(&mut col, &mut scratch[..p.fwd_y.get_inplace_scratch_len()]);
            for j in 0..ny {
                dst[j * nh + i] = col[j];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = nh;
    Ok(Tensor::from_complex_unchecked(shape, out))
}

/// Inverse of [`rfft2`], including the `1/(nx*ny)` factor.
///
/// Interior columns are mirrored as conjugates; edge columns are used as given and
/// the real part of the result is returned. This makes the map real-linear for any
/// half spectrum, Hermitian or not.
pub fn irfft2(y: &Tensor, nx: usize) -> Result<Tensor> {
    let data = y
        .as_complex()
        .ok_or_else(|| Error::dtype("ifft2", "input must be complex"))?;
    let (batch, ny, nh) = split_shape("ifft2", y.shape())?;
    if nx % 2 != 0 || half_width(nx) != nh {
        return Err(Error::shape(
            "ifft2",
            format!("half width {nh} incompatible with nx = {nx}"),
        ));
    }
    let p = plan(ny, nx);
    let norm = 1.0 / (nx * ny) as f64;
    let mut out = vec![0.0; batch * ny * nx];
    let mut work = vec![Complex64::new(0.0, 0.0); ny * nh];
    let mut row = vec![Complex64::new(0.0, 0.0); nx];
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    let mut scratch = vec![Complex64::new(0.0, 0.0); p.scratch_len()];
    for b in 0..batch {
        let src = &data[b * ny * nh..(b + 1) * ny * nh];
        for i in 0..nh {
            for j in 0..ny {
                col[j] = src[j * nh + i];
            }
            p.inv_y.process_with_scratch(&mut col, &mut scratch[..p.inv_y.get_inplace_scratch_len()]);
            for j in 0..ny {
                work[j * nh + i] = col[j];
            }
        }
        let dst = &mut out[b * ny * nx..(b + 1) * ny * nx];
        for j in 0..ny {
            let w = &work[j * nh..(j + 1) * nh];
            row[..nh].copy_from_slice(w);
            for i in nh..nx {
                row[i] = w[nx - i].conj();
            }
            p.inv_x.process_with_scratch(&mut row, &mut scratch[..p.inv_x.get_inplace_scratch_len()]);
            for i in 0..nx {
                dst[j * nx + i] = row[i].re * norm;
            }
        }
    }
    let mut shape = y.shape().to_vec();
    *shape.last_mut().unwrap() = nx;
    Ok(Tensor::from_real_unchecked(shape, out))
}

fn weight_columns(y: &Tensor, nx: usize, invert: bool) -> Tensor {
    let nh = half_width(nx);
    let mut out = y.clone();
    let data = out.as_complex_mut().expect("half spectrum is complex");
    for (idx, z) in data.iter_mut().enumerate() {
        let w = column_weight(idx % nh, nx);
        if invert {
            *z /= w;
        } else {
            *z *= w;
        }
    }
    out
}

/// Adjoint of [`rfft2`] under the real inner product: `N * irfft2(y / w)`.
pub fn rfft2_adjoint(y: &Tensor, nx: usize) -> Result<Tensor> {
    let ny = y.shape()[y.shape().len() - 2];
    let n = (nx * ny) as f64;
    Ok(irfft2(&weight_columns(y, nx, true), nx)?.scale(n))
}

/// Adjoint of [`irfft2`] under the real inner product: `(w / N) * rfft2(x)`.
pub fn irfft2_adjoint(x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    let nx = shape[shape.len() - 1];
    let ny = shape[shape.len() - 2];
    let n = (nx * ny) as f64;
    Ok(weight_columns(&rfft2(x)?, nx, false).scale(1.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::real(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_complex(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::complex(
            shape,
            (0..n)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_recovers_real_field() {
        let x = random_real(&[2, 8, 6], 1);
        let back = irfft2(&rfft2(&x).unwrap(), 6).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-13);
    }

    #[test]
    fn single_mode_lands_in_expected_bin() {
        let (ny, nx) = (4, 8);
        let data: Vec<f64> = (0..ny * nx)
            .map(|i| {
                let x = (i % nx) as f64;
                (2.0 * std::f64::consts::PI * 2.0 * x / nx as f64).cos()
            })
            .collect();
        let spec = rfft2(&Tensor::real(&[ny, nx], data).unwrap()).unwrap();
        let nh = half_width(nx);
        let c = spec.cx();
        assert!((c[2].re - (nx * ny) as f64 / 2.0).abs() < 1e-12);
        for (i, z) in c.iter().enumerate() {
            if i != 2 {
                assert!(z.norm() < 1e-12, "bin {i} ({}, {}) = {z}", i / nh, i % nh);
            }
        }
    }

    #[test]
    fn adjoint_identities_hold() {
        let x = random_real(&[2, 8, 8], 3);
        let y = random_complex(&[2, 8, 5], 4);
        let lhs = rfft2(&x).unwrap().dot(&y);
        let rhs = x.dot(&rfft2_adjoint(&y, 8).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));

        let lhs = irfft2(&y, 8).unwrap().dot(&x);
        let rhs = y.dot(&irfft2_adjoint(&x).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}
