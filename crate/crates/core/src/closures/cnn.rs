use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::qg::{Closure, QgModel, TapeClosure};

/// Layer widths of a stack of periodic `k x k` convolutions with ReLU between layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CnnArch {
    pub in_channels: usize,
    /// Output channels per layer; the last entry must equal `in_channels`.
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl CnnArch {
    /// Six 3x3 layers with 128, 64, 32, 32, 32 and 2 output channels.
    pub fn table2() -> Self {
        Self {
            in_channels: 2,
            channels: vec![128, 64, 32, 32, 32, 2],
            kernel: 3,
        }
    }

    /// Same depth and kernel with narrower hidden layers.
    pub fn narrow(hidden: &[usize]) -> Self {
        let mut channels = hidden.to_vec();
        channels.push(2);
        Self {
            in_channels: 2,
            channels,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::InvalidParam(format!("degenerate architecture {self:?}")));
        }
        if *self.channels.last().unwrap() != self.in_channels {
            return Err(Error::InvalidParam("last layer must output one channel per layer".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidParam(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// `(c_out, c_in)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut c_in = self.in_channels;
        self.channels
            .iter()
            .map(|&c| {
                let d = (c, c_in);
                c_in = c;
                d
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(o, i)| o * i * self.kernel * self.kernel + o)
            .sum()
    }
}

/// Per-channel affine maps on the closure's input and output.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            in_mean: vec![0.0; channels],
            in_std: vec![1.0; channels],
            out_mean: vec![0.0; channels],
            out_std: vec![1.0; channels],
        }
    }

    /// Per-channel mean and standard deviation of inputs `q` and targets `s`, each `(c, ny, nx)`.
    pub fn fit(q: &[&Tensor], s: &[&Tensor]) -> Result<Self> {
        let (in_mean, in_std) = channel_stats(q)?;
        let (out_mean, out_std) = channel_stats(s)?;
        let n = Self {
            in_mean,
            in_std,
            out_mean,
            out_std,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.in_mean.iter().chain(&self.in_std).chain(&self.out_mean).chain(&self.out_std);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite normalization constant".into()));
        }
        if self.in_std.iter().chain(&self.out_std).any(|&s| s == 0.0) {
            return Err(Error::InvalidParam("zero normalization scale".into()));
        }
        let c = self.in_mean.len();
        if self.in_std.len() != c || self.out_mean.len() != c || self.out_std.len() != c {
            return Err(Error::InvalidParam("normalization channel counts disagree".into()));
        }
        Ok(())
    }
}

fn channel_stats(fields: &[&Tensor]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = fields.first().ok_or_else(|| Error::InvalidParam("no samples for normalization".into()))?;
    let shape = first.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("normalization", format!("expected (c, ny, nx), got {shape:?}")));
    }
    let c = shape[0];
    let plane = shape[1] * shape[2];
    let mut sum = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for f in fields {
        if f.shape() != shape.as_slice() {
            return Err(Error::shape("normalization", format!("{:?} vs {:?}", f.shape(), shape)));
        }
        for (ch, chunk) in f.re().chunks(plane).enumerate() {
            sum[ch] += chunk.iter().sum::<f64>();
        }
    }
    let count = (fields.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    for f in fields {
        for (ch, chunk) in f.re().chunks(plane).enumerate() {
            sq[ch] += chunk.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    let std = sq.iter().map(|s| (s / count).sqrt()).collect();
    Ok((mean, std))
}

/// Weights `(c_out, c_in, k, k)` and biases `(c_out)` per layer, plus normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub arch: CnnArch,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub norm: Normalization,
}

/// He-uniform weights and zero biases for the default architecture.
pub fn init_cnn(seed: u64) -> CnnParams {
    init_cnn_with(&CnnArch::table2(), seed).expect("default architecture is valid")
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
pub fn init_cnn_with(arch: &CnnArch, seed: u64) -> Result<CnnParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = arch.kernel;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (o, i) in arch.layer_dims() {
        let bound = (6.0 / (i * k * k) as f64).sqrt();
        let w = (0..o * i * k * k).map(|_| bound * (2.0 * rng.random::<f64>() - 1.0)).collect();
        weights.push(Tensor::real(&[o, i, k, k], w)?);
        biases.push(Tensor::zeros(&[o]));
    }
    Ok(CnnParams {
        norm: Normalization::identity(arch.in_channels),
        arch: arch.clone(),
        weights,
        biases,
    })
}

impl CnnParams {
    pub fn num_params(&self) -> usize {
        self.arch.param_count()
    }

    /// Layer-major flattening: `w_1, b_1, w_2, b_2, ...`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.re());
            out.extend_from_slice(b.re());
        }
        out
    }

    /// Inverse of [`CnnParams::flatten`].
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "cnn-params",
                format!("{} values for {} parameters", flat.len(), self.num_params()),
            ));
        }
        let mut out = self.clone();
        let mut off = 0;
        for (w, b) in out.weights.iter_mut().zip(out.biases.iter_mut()) {
            let n = w.len();
            w.re_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = b.len();
            b.re_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(out)
    }

    /// Registers weights on `tape`, as leaves when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> CnnVars {
        let put = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (put(tape, w), put(tape, b)))
            .collect();
        CnnVars {
            layers,
            norm: self.norm.clone(),
        }
    }
}

/// CNN weights living on a tape.
#[derive(Clone, Debug)]
pub struct CnnVars {
    pub layers: Vec<(Var, Var)>,
    pub norm: Normalization,
}

fn channel_table(shape: &[usize], per_channel: impl Fn(usize) -> f64) -> Tensor {
    let plane: usize = shape[1..].iter().product();
    let data = (0..shape[0] * plane).map(|i| per_channel(i / plane)).collect();
    Tensor::real(shape, data).expect("shape")
}

impl CnnVars {
    /// Flat parameter vars in [`CnnParams::flatten`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, q: Var) -> Result<Var> {
        let shape = tape.value(q).shape().to_vec();
        let c = self.norm.in_mean.len();
        if shape.len() != 3 || shape[0] != c || shape[1] < 3 || shape[2] < 3 {
            return Err(Error::shape("cnn_forward", format!("expected ({c}, ny>=3, nx>=3), got {shape:?}")));
        }
        let n = &self.norm;
        let inv = Arc::new(channel_table(&shape, |ch| 1.0 / n.in_std[ch]));
        let shift = tape.constant(channel_table(&shape, |ch| -n.in_mean[ch] / n.in_std[ch]));
        let x = tape.diag_mul(q, inv)?;
        let mut x = tape.add(x, shift)?;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            x = tape.conv2_periodic(x, w, b)?;
            if l != last {
                x = tape.relu(x)?;
            }
        }
        let out_shape = tape.value(x).shape().to_vec();
        let scale = Arc::new(channel_table(&out_shape, |ch| n.out_std[ch]));
        let offset = tape.constant(channel_table(&out_shape, |ch| n.out_mean[ch]));
        let y = tape.diag_mul(x, scale)?;
        tape.add(y, offset)
    }
}

impl TapeClosure for CnnVars {
    fn apply(&self, tape: &mut Tape, _: &QgModel, q: Var) -> Result<Option<Var>> {
        self.forward(tape, q).map(Some)
    }
}

impl Closure for CnnParams {
    fn bind<'a>(&'a self, tape: &mut Tape) -> Result<Box<dyn TapeClosure + 'a>> {
        Ok(Box::new(self.register(tape, false)))
    }
}

/// Predicted sub-grid tendency for a `(2, ny, nx)` state.
pub fn cnn_forward(q_lo: &Tensor, p: &CnnParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, false);
    let q = tape.constant(q_lo.clone());
    let y = vars.forward(&mut tape, q)?;
    Ok(tape.value(y).clone())
}
