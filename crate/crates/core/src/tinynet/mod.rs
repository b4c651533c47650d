//! Minimal dense network blocks: MLPs, a transformer encoder layer, the box
//! prediction head, and a finite-difference gradient checker.
//!
//! Nothing here trains. Parameters come from a deterministic uniform fan-in
//! initialization, from hand-planted values, or from a parameter file.

mod attention;
mod head;
pub mod io;
mod matrix;

pub use attention::{mha_forward, AttentionParams, AttentionSpec};
pub use head::{decode_box, head_forward, BoxDeltas, Prediction, BOX_DELTA_DIM};
pub use matrix::Matrix;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub(crate) fn code(self) -> f64 {
        match self {
            Activation::Linear => 0.0,
            Activation::Relu => 1.0,
            Activation::Sigmoid => 2.0,
        }
    }

    pub(crate) fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer widths for an MLP, input first: `[256, 256, 261]` is two layers,
/// 256→256 and 256→261. Hidden layers use `hidden`, the last uses `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>) -> Self {
        Self {
            dims,
            hidden: Activation::Relu,
            output: Activation::Linear,
        }
    }

    pub fn with_output(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "MLP needs at least two positive widths, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// One affine layer, `y = act(x·W + b)`; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        y.add_row_vector(&self.bias);
        if self.activation != Activation::Linear {
            for v in y.as_mut_slice() {
                *v = self.activation.apply(*v);
            }
        }
        Ok(y)
    }

    /// Uniform fan-in initialization from one ChaCha8 stream.
    pub fn init(input: usize, output: usize, activation: Activation, seed: SeedStream) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut rng = seed.rng();
        let weight: Vec<f64> = (0..input * output)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..output).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Matrix::from_vec(input, output, weight).expect("sized above"),
            bias,
            activation,
        }
    }
}

/// Weights of a chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub layers: Vec<DenseLayer>,
}

impl DenseParams {
    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// fan-in `n` is drawn from `U(-1/√n, 1/√n)`, one ChaCha8 stream per layer.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        Self::init_stream(spec, SeedStream::new(seed))
    }

    pub fn init_stream(spec: &MlpSpec, seed: SeedStream) -> Result<Self> {
        spec.validate()?;
        let n = spec.dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { spec.output } else { spec.hidden };
                DenseLayer::init(spec.dims[i], spec.dims[i + 1], act, seed.index(i as u64))
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { spec.output } else { spec.hidden };
                DenseLayer::zeros(spec.dims[i], spec.dims[i + 1], act)
            })
            .collect();
        Ok(Self { layers })
    }

    /// Checks that consecutive layer widths chain.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("MLP has no layers".into()));
        }
        for w in self.layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::shape(
                    "DenseParams chain",
                    w[0].output_dim(),
                    w[1].input_dim(),
                ));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::shape("DenseParams bias", l.output_dim(), l.bias.len()));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.input_dim(), l.output_dim()))
            .collect()
    }
}

/// Applies the MLP to every row of `x`.
pub fn mlp_forward(x: &Matrix, params: &DenseParams) -> Result<Matrix> {
    let first = params
        .layers
        .first()
        .ok_or_else(|| Error::InvalidArgument("MLP has no layers".into()))?;
    if x.cols() != first.input_dim() {
        return Err(Error::shape("mlp_forward input", first.input_dim(), x.cols()));
    }
    let mut h = first.forward(x)?;
    for layer in &params.layers[1..] {
        h = layer.forward(&h)?;
    }
    Ok(h)
}

/// Single-vector convenience wrapper around [`mlp_forward`].
pub fn mlp_forward_vec(x: &[f64], params: &DenseParams) -> Result<Vec<f64>> {
    let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(mlp_forward(&m, params)?.into_vec())
}

/// Default finite-difference step for double precision.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} (f+ = {fp}, f- = {fm})"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
