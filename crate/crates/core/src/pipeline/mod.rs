//! End-to-end forward pass: seeds → suppressed votes → `k` initial proposals
//! → top-`K` selection → repeated RoI refinement, plus the training losses.
//!
//! Initial proposals stand in for a VoteNet-style proposal head: farthest
//! point sampling picks `k` votes, each gathers the votes within
//! `grouping_radius`, their reduced features and normalized relative
//! positions are max-pooled and passed through a small MLP, and a prediction
//! head decodes a box around a unit cube at the sampled vote.

mod config;
mod params;
mod planted;

pub use config::{ParamInit, PipelineConfig, VoteSource};
pub use params::{PipelineParams, StageParams};
pub use planted::planted_params;

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::evalbench::Detection;
use crate::geometry::{dist2, fps, Box3D, PointSet};
use crate::matching::{match_predictions, set_loss, total_loss, SetLoss};
use crate::roi::{apply_gates, roi_pool_multi};
use crate::suppression::{nsm_loss, seed_labels, suppress_votes_with, FeaturePointSet, NsmLoss, VotePrediction};
use crate::synth::SceneSample;
use crate::tinynet::{head_forward, mha_forward, mlp_forward, DenseLayer, DenseParams, Matrix, Prediction};

/// Candidate boxes with class logits and `C`-wide features.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposals {
    pub predictions: Vec<Prediction>,
    pub features: Matrix,
}

impl Proposals {
    pub fn new(predictions: Vec<Prediction>, features: Matrix) -> Result<Self> {
        ensure_len("proposal features", predictions.len(), features.rows())?;
        Ok(Self {
            predictions,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn boxes(&self) -> Vec<Box3D> {
        self.predictions.iter().map(|p| p.bbox).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            predictions: idx.iter().map(|&i| self.predictions[i].clone()).collect(),
            features: self.features.select_rows(idx),
        }
    }

    /// One detection per proposal: best class and its sigmoid score.
    pub fn detections(&self) -> Vec<Detection> {
        self.predictions
            .iter()
            .map(|p| {
                let (class, score) = p.best_class();
                Detection {
                    class,
                    score,
                    bbox: p.bbox,
                }
            })
            .collect()
    }
}

/// Indices of the `top_k` proposals by descending score, ties by index.
pub fn topk_indices(proposals: &Proposals, top_k: usize) -> Result<Vec<usize>> {
    if top_k > proposals.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {top_k} of {} proposals",
            proposals.len()
        )));
    }
    let scores: Vec<f64> = proposals.predictions.iter().map(Prediction::score).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order.truncate(top_k);
    Ok(order)
}

pub fn select_topk(proposals: &Proposals, top_k: usize) -> Result<Proposals> {
    Ok(proposals.select(&topk_indices(proposals, top_k)?))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub pool_gate_ms: f64,
    pub attention_ms: f64,
    pub head_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub proposals: Proposals,
    /// Set loss against the ground truth, filled by [`run_pipeline`].
    pub loss: Option<SetLoss>,
    pub timing: StageTiming,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// One refinement stage: per-proposal RoI pooling and gating, embedding,
/// self-attention across all proposals, box decoding, and projection of the
/// attended features back to proposal features.
pub fn refine_once(
    proposals: &Proposals,
    points: &FeaturePointSet,
    params: &StageParams,
    cfg: &PipelineConfig,
) -> Result<StageOutput> {
    let start = Instant::now();
    let c = cfg.channels;
    ensure_len("refine_once point features", c, points.feature_dim())?;
    ensure_len("refine_once proposal features", c, proposals.features.cols())?;
    if proposals.is_empty() {
        return Err(Error::InvalidArgument("refine_once needs at least one proposal".into()));
    }
    let gates = params.gate.gates(&proposals.features)?;
    let mut gated = Matrix::zeros(proposals.len(), c);
    for (i, p) in proposals.predictions.iter().enumerate() {
        let roi = roi_pool_multi(points, &p.bbox, &cfg.resolutions, c)?;
        let rows: Vec<&[f64]> = gates.iter().map(|g| g.row(i)).collect();
        let v = apply_gates(&roi, &rows, cfg.gate_reduction)?;
        gated.row_mut(i).copy_from_slice(&v);
    }
    let pool_gate_ms = ms_since(start);

    let t = Instant::now();
    let embedded = params.embed.forward(&gated)?;
    let attended = mha_forward(&embedded, &params.attention)?;
    let attention_ms = ms_since(t);

    let t = Instant::now();
    let predictions = head_forward(&attended, &proposals.boxes(), &params.head, cfg.num_classes)?;
    let features = params.back_project.forward(&attended)?;
    let head_ms = ms_since(t);

    if !features.is_finite() {
        return Err(Error::NonFinite("refined proposal features".into()));
    }
    Ok(StageOutput {
        proposals: Proposals::new(predictions, features)?,
        loss: None,
        timing: StageTiming {
            pool_gate_ms,
            attention_ms,
            head_ms,
            total_ms: ms_since(start),
        },
    })
}

/// Vote prediction from the noise-suppression head: per seed the output row
/// is `[background logit, foreground logit, offset (3), feature offset (D)]`.
pub fn predict_votes(seeds: &FeaturePointSet, head: &DenseParams) -> Result<VotePrediction> {
    let d = seeds.feature_dim();
    ensure_len("vote head output", d + 5, head.output_dim())?;
    let out = mlp_forward(&seeds.features, head)?;
    let mut offsets = Vec::with_capacity(seeds.len());
    let mut logits = Vec::with_capacity(seeds.len());
    let mut feature_offsets = Matrix::zeros(seeds.len(), d);
    for i in 0..seeds.len() {
        let row = out.row(i);
        logits.push([row[0], row[1]]);
        offsets.push([row[2], row[3], row[4]]);
        feature_offsets.row_mut(i).copy_from_slice(&row[5..]);
    }
    Ok(VotePrediction {
        offsets,
        feature_offsets,
        objectness_logits: logits,
    })
}

/// Applies a `D → C` layer to every feature row, keeping positions.
pub fn reduce_features(points: &FeaturePointSet, layer: &DenseLayer) -> Result<FeaturePointSet> {
    FeaturePointSet::new(points.positions.clone(), layer.forward(&points.features)?)
}

/// `k` initial proposals from the reduced votes (see the module docs).
pub fn initial_proposals(
    votes: &FeaturePointSet,
    params: &PipelineParams,
    cfg: &PipelineConfig,
) -> Result<Proposals> {
    let m = votes.len();
    if m < cfg.k {
        return Err(Error::InvalidArgument(format!(
            "scene has {m} votes, fewer than k = {}",
            cfg.k
        )));
    }
    let c = cfg.channels;
    ensure_len("initial proposal features", c, votes.feature_dim())?;
    let centers = fps(&PointSet::new(votes.positions.clone())?, cfg.k, 0)?;
    let r = cfg.grouping_radius;
    let r2 = r * r;
    let mut pooled = Matrix::zeros(cfg.k, c + 3);
    let mut anchors = Vec::with_capacity(cfg.k);
    for (row, &ci) in centers.iter().enumerate() {
        let center = votes.positions[ci];
        let out = pooled.row_mut(row);
        out.fill(f64::NEG_INFINITY);
        for (j, &v) in votes.positions.iter().enumerate() {
            if dist2(v, center) > r2 {
                continue;
            }
            for (o, f) in out[..c].iter_mut().zip(votes.features.row(j)) {
                *o = o.max(*f);
            }
            for a in 0..3 {
                out[c + a] = out[c + a].max((v[a] - center[a]) / r);
            }
        }
        anchors.push(Box3D::axis_aligned(center, [1.0; 3])?);
    }
    let features = mlp_forward(&pooled, &params.group_mlp)?;
    let predictions = head_forward(&features, &anchors, &params.initial_head, cfg.num_classes)?;
    Proposals::new(predictions, features)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTiming {
    pub votes_ms: f64,
    pub proposals_ms: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
}

/// Everything the forward pass produces; losses are computed separately so
/// that one forward pass can be scored under several loss settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineForward {
    pub vote_prediction: VotePrediction,
    pub initial: Proposals,
    /// Positions in `initial` of the selected proposals, in selection order.
    pub selected: Vec<usize>,
    pub stages: Vec<StageOutput>,
    pub timing: PipelineTiming,
}

impl PipelineForward {
    pub fn final_proposals(&self) -> &Proposals {
        &self.stages.last().expect("at least one refinement").proposals
    }

    /// Final detections; no suppression is applied.
    pub fn detections(&self) -> Vec<Detection> {
        self.final_proposals().detections()
    }
}

pub fn pipeline_forward(
    scene: &SceneSample,
    cfg: &PipelineConfig,
    params: &PipelineParams,
) -> Result<PipelineForward> {
    cfg.validate()?;
    if scene.seeds.is_empty() {
        return Err(Error::InvalidArgument("scene has no seeds".into()));
    }
    ensure_len("scene feature dim", cfg.feature_dim, scene.seeds.feature_dim())?;
    let start = Instant::now();

    let vote_prediction = match cfg.vote_source {
        VoteSource::Head => predict_votes(&scene.seeds, &params.nsm_head)?,
        VoteSource::Oracle => scene
            .oracle
            .clone()
            .ok_or_else(|| Error::InvalidArgument("scene carries no oracle votes".into()))?,
    };
    let votes = suppress_votes_with(&scene.seeds, &vote_prediction, cfg.feature_gating)?;
    let points = reduce_features(&scene.seeds.concat(&votes)?, &params.point_reduce)?;
    let m = scene.seeds.len();
    let reduced_votes = FeaturePointSet::new(
        points.positions[m..].to_vec(),
        points.features.select_rows(&(m..2 * m).collect::<Vec<_>>()),
    )?;
    let votes_ms = ms_since(start);

    let t = Instant::now();
    let initial = initial_proposals(&reduced_votes, params, cfg)?;
    let selected = topk_indices(&initial, cfg.top_k)?;
    let proposals_ms = ms_since(t);

    let t = Instant::now();
    let mut stages: Vec<StageOutput> = Vec::with_capacity(cfg.refinements);
    for i in 0..cfg.refinements {
        let input = match stages.last() {
            Some(s) => &s.proposals,
            None => &initial.select(&selected),
        };
        let out = refine_once(input, &points, params.stage(i), cfg)?;
        stages.push(out);
    }
    let refine_ms = ms_since(t);

    Ok(PipelineForward {
        vote_prediction,
        initial,
        selected,
        stages,
        timing: PipelineTiming {
            votes_ms,
            proposals_ms,
            refine_ms,
            total_ms: ms_since(start),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Set loss of the `k` initial proposals.
    pub votenet: SetLoss,
    pub nsm: NsmLoss,
    /// Set loss of each refinement stage.
    pub prm: Vec<SetLoss>,
    pub total: f64,
}

/// Set loss of a proposal set against the scene ground truth.
pub fn proposal_set_loss(proposals: &Proposals, scene: &SceneSample, cfg: &PipelineConfig) -> Result<SetLoss> {
    let m = match_predictions(&proposals.predictions, &scene.boxes, &cfg.weights, cfg.scene_scale)?;
    set_loss(
        &proposals.predictions,
        &scene.boxes,
        &m,
        &cfg.weights,
        cfg.scene_scale,
        cfg.prm_normalization,
    )
}

pub fn pipeline_losses(fwd: &PipelineForward, scene: &SceneSample, cfg: &PipelineConfig) -> Result<LossBreakdown> {
    let labels = seed_labels(&scene.seeds.positions, &scene.gt_boxes());
    let nsm = nsm_loss(&fwd.vote_prediction, &labels, cfg.lambda1, cfg.lambda2)?;
    let votenet = proposal_set_loss(&fwd.initial, scene, cfg)?;
    let prm = fwd
        .stages
        .iter()
        .map(|s| proposal_set_loss(&s.proposals, scene, cfg))
        .collect::<Result<Vec<_>>>()?;
    let prm_totals: Vec<f64> = prm.iter().map(|l| l.total).collect();
    let total = total_loss(votenet.total, nsm.total, &prm_totals);
    Ok(LossBreakdown {
        votenet,
        nsm,
        prm,
        total,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub forward: PipelineForward,
    pub detections: Vec<Detection>,
    pub losses: LossBreakdown,
}

/// Forward pass, final detections (no NMS), and per-stage plus total losses
/// against the scene's boxes (an empty box list scores pure background).
pub fn run_pipeline(scene: &SceneSample, cfg: &PipelineConfig, params: &PipelineParams) -> Result<PipelineRun> {
    let mut forward = pipeline_forward(scene, cfg, params)?;
    let losses = pipeline_losses(&forward, scene, cfg)?;
    for (s, l) in forward.stages.iter_mut().zip(&losses.prm) {
        s.loss = Some(*l);
    }
    let detections = forward.detections();
    Ok(PipelineRun {
        forward,
        detections,
        losses,
    })
}
