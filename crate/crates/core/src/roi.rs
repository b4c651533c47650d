//! Multi-resolution RoI grid pooling and proposal-feature gating.
//!
//! Points inside a proposal box are binned into an `r × r × r` grid in the
//! box frame for each resolution and max-pooled per channel. An MLP on the
//! proposal feature then produces a sigmoid gate for every cell and channel;
//! gated cells are summed into one `C`-vector per resolution and the
//! resolutions are summed together.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::geometry::{point_in_box, Box3D};
use crate::suppression::FeaturePointSet;
use crate::tinynet::{mlp_forward, Activation, DenseParams, Matrix, MlpSpec};
use crate::rng::SeedStream;

/// Pooled grid features of one proposal, one block per resolution.
///
/// Block `b` holds `r³ · C` values, cell-major: the cell at grid coordinate
/// `(ix, iy, iz)` starts at `((ix · r + iy) · r + iz) · C`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoIFeature {
    pub resolutions: Vec<usize>,
    pub channels: usize,
    pub blocks: Vec<Vec<f64>>,
    pub occupied: Vec<Vec<bool>>,
}

impl RoIFeature {
    pub fn empty(resolutions: &[usize], channels: usize) -> Self {
        Self {
            resolutions: resolutions.to_vec(),
            channels,
            blocks: resolutions
                .iter()
                .map(|r| vec![0.0; r * r * r * channels])
                .collect(),
            occupied: resolutions.iter().map(|r| vec![false; r * r * r]).collect(),
        }
    }

    /// `Σ r³ · C`.
    pub fn flat_dim(&self) -> usize {
        flat_dim(&self.resolutions, self.channels)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn cell(&self, block: usize, cell: usize) -> &[f64] {
        let c = self.channels;
        &self.blocks[block][cell * c..(cell + 1) * c]
    }
}

pub fn flat_dim(resolutions: &[usize], channels: usize) -> usize {
    resolutions.iter().map(|r| r * r * r).sum::<usize>() * channels
}

/// Grid cell of a box-frame coordinate along one axis: `⌊(x/size + ½)·r⌋`
/// clamped to `[0, r − 1]`, so cells are half-open except the top face.
pub fn cell_index(local: f64, size: f64, r: usize) -> usize {
    let t = ((local / size + 0.5) * r as f64).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(r - 1)
    }
}

fn check_resolutions(resolutions: &[usize]) -> Result<()> {
    if resolutions.is_empty() || resolutions.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "resolutions must be a non-empty list of positive integers, got {resolutions:?}"
        )));
    }
    Ok(())
}

/// Max-pools the features of the points inside `bbox` (surface inclusive)
/// into grids at each resolution. Empty cells stay zero and unmarked.
pub fn roi_pool_multi(
    points: &FeaturePointSet,
    bbox: &Box3D,
    resolutions: &[usize],
    channels: usize,
) -> Result<RoIFeature> {
    check_resolutions(resolutions)?;
    ensure_len("roi_pool_multi feature dim", channels, points.feature_dim())?;
    let mut roi = RoIFeature::empty(resolutions, channels);
    let size = bbox.size();
    for (i, &p) in points.positions.iter().enumerate() {
        if !point_in_box(p, bbox) {
            continue;
        }
        let local = bbox.to_local(p);
        let feat = points.features.row(i);
        for (b, &r) in resolutions.iter().enumerate() {
            let ix = cell_index(local[0], size[0], r);
            let iy = cell_index(local[1], size[1], r);
            let iz = cell_index(local[2], size[2], r);
            let cell = (ix * r + iy) * r + iz;
            let dst = &mut roi.blocks[b][cell * channels..(cell + 1) * channels];
            if roi.occupied[b][cell] {
                for (d, f) in dst.iter_mut().zip(feat) {
                    if *f > *d {
                        *d = *f;
                    }
                }
            } else {
                dst.copy_from_slice(feat);
                roi.occupied[b][cell] = true;
            }
        }
    }
    Ok(roi)
}

/// How gated cells are reduced to one `C`-vector per resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReduction {
    #[default]
    Sum,
    MeanOccupied,
}

/// One two-layer MLP per resolution: `C → C` (ReLU) `→ r³·C` (sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub channels: usize,
    pub resolutions: Vec<usize>,
    pub mlps: Vec<DenseParams>,
}

impl GateParams {
    pub fn spec_for(channels: usize, r: usize) -> MlpSpec {
        MlpSpec::new(vec![channels, channels, r * r * r * channels]).with_output(Activation::Sigmoid)
    }

    pub fn init(channels: usize, resolutions: &[usize], seed: SeedStream) -> Result<Self> {
        check_resolutions(resolutions)?;
        let mlps = resolutions
            .iter()
            .map(|&r| DenseParams::init_stream(&Self::spec_for(channels, r), seed.index(r as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channels,
            resolutions: resolutions.to_vec(),
            mlps,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_resolutions(&self.resolutions)?;
        ensure_len("GateParams mlps", self.resolutions.len(), self.mlps.len())?;
        for (mlp, &r) in self.mlps.iter().zip(&self.resolutions) {
            mlp.validate()?;
            ensure_len("GateParams input", self.channels, mlp.input_dim())?;
            ensure_len("GateParams output", r * r * r * self.channels, mlp.output_dim())?;
        }
        Ok(())
    }

    /// Gate values for a batch of proposal features, one `K × r³C` matrix per resolution.
    pub fn gates(&self, proposal_features: &Matrix) -> Result<Vec<Matrix>> {
        ensure_len("gate input", self.channels, proposal_features.cols())?;
        self.mlps
            .iter()
            .map(|m| mlp_forward(proposal_features, m))
            .collect()
    }
}

/// Reduces one RoI feature with precomputed gates (`gates[b]` has `r³·C`
/// values for block `b`).
pub fn apply_gates(roi: &RoIFeature, gates: &[&[f64]], reduction: GateReduction) -> Result<Vec<f64>> {
    ensure_len("apply_gates blocks", roi.blocks.len(), gates.len())?;
    let c = roi.channels;
    let mut out = vec![0.0; c];
    for (b, gate) in gates.iter().enumerate() {
        ensure_len("apply_gates gate width", roi.blocks[b].len(), gate.len())?;
        let mut acc = vec![0.0; c];
        let mut n = 0usize;
        for (cell, &occ) in roi.occupied[b].iter().enumerate() {
            if !occ {
                continue;
            }
            n += 1;
            let vals = &roi.blocks[b][cell * c..(cell + 1) * c];
            let g = &gate[cell * c..(cell + 1) * c];
            for ((a, v), w) in acc.iter_mut().zip(vals).zip(g) {
                *a += v * w;
            }
        }
        let scale = match reduction {
            GateReduction::Sum => 1.0,
            GateReduction::MeanOccupied => 1.0 / n.max(1) as f64,
        };
        for (o, a) in out.iter_mut().zip(&acc) {
            *o += a * scale;
        }
    }
    Ok(out)
}

/// Gates `roi` by the MLP transform of `proposal_feature` and reduces it to a `C`-vector.
pub fn feature_gate(
    roi: &RoIFeature,
    proposal_feature: &[f64],
    params: &GateParams,
    reduction: GateReduction,
) -> Result<Vec<f64>> {
    ensure_len("feature_gate channels", params.channels, roi.channels)?;
    if roi.resolutions != params.resolutions {
        return Err(Error::InvalidArgument(format!(
            "RoI resolutions {:?} do not match gate resolutions {:?}",
            roi.resolutions, params.resolutions
        )));
    }
    let x = Matrix::from_vec(1, proposal_feature.len(), proposal_feature.to_vec())?;
    let gates = params.gates(&x)?;
    let rows: Vec<&[f64]> = gates.iter().map(|g| g.row(0)).collect();
    apply_gates(roi, &rows, reduction)
}
