use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::matching::{CostWeights, LossNormalization};
use crate::roi::GateReduction;
use crate::suppression::FeatureGating;

/// Where the per-seed vote prediction comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteSource {
    /// The learned noise-suppression head.
    #[default]
    Head,
    /// The oracle prediction stored in the scene file.
    Oracle,
}

/// How pipeline parameters are initialized when no parameter file is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamInit {
    /// Uniform fan-in initialization from the config seed.
    #[default]
    Random,
    /// Hand-set weights that decode oracle scenes exactly (see [`super::planted_params`]).
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Initial proposals drawn from the votes.
    pub k: usize,
    /// Proposals kept for refinement.
    #[serde(rename = "K")]
    pub top_k: usize,
    pub resolutions: Vec<usize>,
    /// Proposal and RoI feature channels.
    pub channels: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Training-time dropout rate; recorded only, the forward pass is deterministic.
    pub dropout: f64,
    pub head_hidden: usize,
    /// Seed feature width.
    pub feature_dim: usize,
    pub refinements: usize,
    pub share_params: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub weights: CostWeights,
    pub num_classes: usize,
    pub seed: u64,
    /// Vote grouping radius for initial proposals (meters).
    pub grouping_radius: f64,
    /// Per-axis normalizer of the box regression loss.
    pub scene_scale: Vec3,
    pub gate_reduction: GateReduction,
    pub prm_normalization: LossNormalization,
    pub feature_gating: FeatureGating,
    pub vote_source: VoteSource,
    pub param_init: ParamInit,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 160,
            top_k: 128,
            resolutions: vec![1, 3, 5],
            channels: 128,
            embed_dim: 1024,
            heads: 8,
            ffn_dim: 2048,
            dropout: 0.1,
            head_hidden: 256,
            feature_dim: 256,
            refinements: 3,
            share_params: true,
            lambda1: 1.0,
            lambda2: 10.0,
            weights: CostWeights::default(),
            num_classes: 18,
            seed: 0,
            grouping_radius: 0.3,
            scene_scale: [4.0, 4.0, 1.5],
            gate_reduction: GateReduction::Sum,
            prm_normalization: LossNormalization::NumGt,
            feature_gating: FeatureGating::Gated,
            vote_source: VoteSource::Head,
            param_init: ParamInit::Random,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.top_k == 0 || self.top_k > self.k {
            return bad(format!("need 1 <= K <= k, got k={} K={}", self.k, self.top_k));
        }
        if self.refinements == 0 {
            return bad("refinements must be at least 1".into());
        }
        if self.resolutions.is_empty() || self.resolutions.contains(&0) {
            return bad(format!("invalid resolutions {:?}", self.resolutions));
        }
        if self.channels == 0 || self.head_hidden == 0 || self.feature_dim == 0 || self.ffn_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible into {} heads",
                self.embed_dim, self.heads
            ));
        }
        if !(self.grouping_radius > 0.0) || !self.grouping_radius.is_finite() {
            return bad("grouping_radius must be positive".into());
        }
        if self.scene_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return bad("scene_scale must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative".into());
        }
        self.weights.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Width of the prediction head output: class logits then box deltas.
    pub fn head_width(&self) -> usize {
        self.num_classes + crate::tinynet::BOX_DELTA_DIM
    }

    /// Number of distinct stage parameter bundles.
    pub fn stage_bundles(&self) -> usize {
        if self.share_params {
            1
        } else {
            self.refinements
        }
    }
}
