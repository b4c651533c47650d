use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, Matrix};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub embed_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub ln_eps: f64,
}

impl AttentionSpec {
    pub fn new(embed_dim: usize, heads: usize, ffn_dim: usize) -> Self {
        Self {
            embed_dim,
            heads,
            ffn_dim,
            ln_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed dim {} must be a positive multiple of head count {}",
                self.embed_dim, self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::InvalidArgument("feed-forward width must be positive".into()));
        }
        Ok(())
    }
}

/// One post-norm transformer encoder layer:
/// `x1 = LN(x + MHA(x))`, `y = LN(x1 + FFN(x1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub spec: AttentionSpec,
    pub query: DenseLayer,
    pub key: DenseLayer,
    pub value: DenseLayer,
    pub output: DenseLayer,
    pub ffn_in: DenseLayer,
    pub ffn_out: DenseLayer,
    pub norm1_scale: Vec<f64>,
    pub norm1_shift: Vec<f64>,
    pub norm2_scale: Vec<f64>,
    pub norm2_shift: Vec<f64>,
}

impl AttentionParams {
    pub fn init(spec: AttentionSpec, seed: u64) -> Result<Self> {
        Self::init_stream(spec, SeedStream::new(seed))
    }

    pub fn init_stream(spec: AttentionSpec, seed: SeedStream) -> Result<Self> {
        spec.validate()?;
        let e = spec.embed_dim;
        let lin = Activation::Linear;
        Ok(Self {
            spec,
            query: DenseLayer::init(e, e, lin, seed.split("query")),
            key: DenseLayer::init(e, e, lin, seed.split("key")),
            value: DenseLayer::init(e, e, lin, seed.split("value")),
            output: DenseLayer::init(e, e, lin, seed.split("output")),
            ffn_in: DenseLayer::init(e, spec.ffn_dim, Activation::Relu, seed.split("ffn_in")),
            ffn_out: DenseLayer::init(spec.ffn_dim, e, lin, seed.split("ffn_out")),
            norm1_scale: vec![1.0; e],
            norm1_shift: vec![0.0; e],
            norm2_scale: vec![1.0; e],
            norm2_shift: vec![0.0; e],
        })
    }

    /// All projections zero, norms at identity.
    pub fn zeros(spec: AttentionSpec) -> Result<Self> {
        spec.validate()?;
        let e = spec.embed_dim;
        let lin = Activation::Linear;
        Ok(Self {
            spec,
            query: DenseLayer::zeros(e, e, lin),
            key: DenseLayer::zeros(e, e, lin),
            value: DenseLayer::zeros(e, e, lin),
            output: DenseLayer::zeros(e, e, lin),
            ffn_in: DenseLayer::zeros(e, spec.ffn_dim, Activation::Relu),
            ffn_out: DenseLayer::zeros(spec.ffn_dim, e, lin),
            norm1_scale: vec![1.0; e],
            norm1_shift: vec![0.0; e],
            norm2_scale: vec![1.0; e],
            norm2_shift: vec![0.0; e],
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let e = self.spec.embed_dim;
        for (name, l, i, o) in [
            ("query", &self.query, e, e),
            ("key", &self.key, e, e),
            ("value", &self.value, e, e),
            ("output", &self.output, e, e),
            ("ffn_in", &self.ffn_in, e, self.spec.ffn_dim),
            ("ffn_out", &self.ffn_out, self.spec.ffn_dim, e),
        ] {
            if l.input_dim() != i || l.output_dim() != o || l.bias.len() != o {
                return Err(Error::InvalidArgument(format!(
                    "attention {name} layer has shape {}x{}, expected {i}x{o}",
                    l.input_dim(),
                    l.output_dim()
                )));
            }
        }
        for v in [
            &self.norm1_scale,
            &self.norm1_shift,
            &self.norm2_scale,
            &self.norm2_shift,
        ] {
            if v.len() != e {
                return Err(Error::shape("attention layer norm", e, v.len()));
            }
        }
        Ok(())
    }
}

fn layer_norm(x: &mut Matrix, scale: &[f64], shift: &[f64], eps: f64) {
    let n = x.cols() as f64;
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, g), b) in row.iter_mut().zip(scale).zip(shift) {
            *v = (*v - mean) * inv * g + b;
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Multi-head scaled dot-product self-attention over the `K` rows of
/// `features`, followed by the feed-forward sublayer. No positional encoding
/// is added, so the layer is permutation-equivariant in its rows. Dropout is
/// not applied.
pub fn mha_forward(features: &Matrix, params: &AttentionParams) -> Result<Matrix> {
    let spec = params.spec;
    let e = spec.embed_dim;
    if features.cols() != e {
        return Err(Error::shape("mha_forward input", e, features.cols()));
    }
    let k = features.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("attention needs at least one row".into()));
    }
    let q = params.query.forward(features)?;
    let key = params.key.forward(features)?;
    let v = params.value.forward(features)?;

    let d = spec.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut concat = Matrix::zeros(k, e);
    let mut qh = Matrix::zeros(k, d);
    let mut kh = Matrix::zeros(k, d);
    let mut vh = Matrix::zeros(k, d);
    for h in 0..spec.heads {
        let cols = h * d..(h + 1) * d;
        for r in 0..k {
            qh.row_mut(r).copy_from_slice(&q.row(r)[cols.clone()]);
            kh.row_mut(r).copy_from_slice(&key.row(r)[cols.clone()]);
            vh.row_mut(r).copy_from_slice(&v.row(r)[cols.clone()]);
        }
        let mut scores = qh.matmul_t(&kh)?;
        for r in 0..k {
            let row = scores.row_mut(r);
            for s in row.iter_mut() {
                *s *= scale;
            }
            softmax_in_place(row);
        }
        let out = scores.matmul(&vh)?;
        for r in 0..k {
            concat.row_mut(r)[cols.clone()].copy_from_slice(out.row(r));
        }
    }
    let attn = params.output.forward(&concat)?;

    let mut x1 = features.clone();
    for (a, b) in x1.as_mut_slice().iter_mut().zip(attn.as_slice()) {
        *a += b;
    }
    layer_norm(&mut x1, &params.norm1_scale, &params.norm1_shift, spec.ln_eps);

    let ff = params.ffn_out.forward(&params.ffn_in.forward(&x1)?)?;
    for (a, b) in x1.as_mut_slice().iter_mut().zip(ff.as_slice()) {
        *a += b;
    }
    layer_norm(&mut x1, &params.norm2_scale, &params.norm2_shift, spec.ln_eps);
    Ok(x1)
}
