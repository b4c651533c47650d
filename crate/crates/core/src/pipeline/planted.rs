//! Hand-set parameters that decode oracle scenes.
//!
//! Oracle votes carry a non-negative object description in feature channels
//! `0..41` (see [`crate::synth::layout`]). The planted network reads it back:
//!
//! * the point reduction copies those channels and drops the rest;
//! * the group MLP copies them and adds a tie-breaking scalar `q` in channel
//!   41, a fixed linear function of the pooled relative vote positions;
//! * the initial head turns the class one-hot into logits and the log-size and
//!   heading channels into box deltas around a unit anchor at the vote;
//! * in each stage the 1³ gate passes every channel except the flag, which is
//!   multiplied by `σ(q)`; coarser grids are shut;
//! * the embedding writes every value `v` as a pair `(v, −v)` next to a large
//!   constant pair `(M, −M)`, which turns both layer norms into a fixed
//!   rescaling by `√(E/2)/M`;
//! * attention head 0 lets each proposal attend to all proposals with the
//!   same decoded center and, among those, to the one with the largest gated
//!   flag `s`, writing that maximum back as an estimate;
//! * the stage head lowers the logits of every proposal whose own `s` falls
//!   below the estimate, and the back projection feeds `s − estimate` forward
//!   as the next stage's `q`, so later stages keep the same winner.
//!
//! Box deltas are zero in every stage, so refinement leaves the initial boxes
//! unchanged and only re-scores duplicates.

use super::config::PipelineConfig;
use super::params::{
    attention_spec, group_spec, initial_head_spec, nsm_spec, stage_head_spec, PipelineParams, StageParams,
};
use crate::error::{Error, Result};
use crate::roi::GateParams;
use crate::synth::layout;
use crate::tinynet::{Activation, AttentionParams, DenseLayer, DenseParams};

/// Constant pair magnitude that fixes the layer-norm scale.
const ANCHOR: f64 = 1e7;
/// Weight of the squared center distance in the attention logits.
const CENTER_SHARPNESS: f64 = 1e10;
/// Weight of the gated flag in the attention logits.
const FLAG_SHARPNESS: f64 = 1e4;
/// Logit penalty per unit of `estimate − s`.
const DUPLICATE_PENALTY: f64 = 100.0;
/// Gain on `s − estimate` when it is fed to the next stage.
const FEEDBACK_GAIN: f64 = 1e3;
/// Gain on the summed relative vote offsets that forms the first `q`.
const OFFSET_GAIN: f64 = 10.0;
const CLASS_GAIN: f64 = 12.0;
const CLASS_BIAS: f64 = 6.0;
/// Sigmoid argument that saturates to exactly 1 (or 0 when negated).
const GATE_SATURATION: f64 = 1000.0;

const Q: usize = layout::DIM;
const EST_SLOT: usize = layout::DIM;
const ANCHOR_SLOT: usize = layout::DIM + 1;

fn check(cfg: &PipelineConfig) -> Result<()> {
    let need = |ok: bool, what: &str| {
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("planted parameters need {what}")))
        }
    };
    need(cfg.num_classes <= layout::MAX_CLASSES, "at most 32 classes")?;
    need(cfg.channels >= layout::DIM + 2, "channels >= 43")?;
    need(cfg.feature_dim >= layout::DIM, "feature_dim >= 41")?;
    need(cfg.embed_dim >= 2 * (ANCHOR_SLOT + 1), "embed_dim >= 86")?;
    need(cfg.embed_dim / cfg.heads >= 5, "attention head width >= 5")?;
    need(cfg.head_hidden >= cfg.num_classes + 4, "head_hidden >= num_classes + 4")?;
    need(cfg.resolutions.contains(&1), "a 1x1x1 RoI grid")
}

/// Planted weights for `cfg`; every stage bundle is identical.
pub fn planted_params(cfg: &PipelineConfig) -> Result<PipelineParams> {
    cfg.validate()?;
    check(cfg)?;
    let (c, nc) = (cfg.channels, cfg.num_classes);

    let mut point_reduce = DenseLayer::zeros(cfg.feature_dim, c, Activation::Linear);
    for t in 0..layout::DIM {
        point_reduce.weight[(t, t)] = 1.0;
    }

    let mut group_mlp = DenseParams::zeros(&group_spec(cfg))?;
    {
        let l0 = &mut group_mlp.layers[0];
        for t in 0..layout::DIM {
            l0.weight[(t, t)] = 1.0;
        }
        for a in 0..3 {
            l0.weight[(c + a, Q)] = OFFSET_GAIN;
            l0.weight[(c + a, Q + 1)] = -OFFSET_GAIN;
        }
        let l1 = &mut group_mlp.layers[1];
        for t in 0..layout::DIM {
            l1.weight[(t, t)] = 1.0;
        }
        l1.weight[(Q, Q)] = 1.0;
        l1.weight[(Q + 1, Q)] = -1.0;
    }

    let mut initial_head = DenseParams::zeros(&initial_head_spec(cfg))?;
    {
        let l0 = &mut initial_head.layers[0];
        for k in 0..nc {
            l0.weight[(k, k)] = 1.0;
        }
        for a in 0..3 {
            l0.weight[(layout::LOG_SIZE + a, nc + a)] = 1.0;
        }
        l0.weight[(layout::HEADING, nc + 3)] = 1.0;
        let l1 = &mut initial_head.layers[1];
        for k in 0..nc {
            l1.weight[(k, k)] = CLASS_GAIN;
            l1.bias[k] = -CLASS_BIAS;
        }
        for a in 0..3 {
            l1.weight[(nc + a, nc + 3 + a)] = 1.0;
            l1.bias[nc + 3 + a] = -layout::LOG_SIZE_OFFSET;
        }
        l1.weight[(nc + 3, nc + 6)] = 1.0;
        l1.bias[nc + 6] = -layout::HEADING_OFFSET;
    }

    let stage = planted_stage(cfg)?;
    Ok(PipelineParams {
        nsm_head: DenseParams::zeros(&nsm_spec(cfg))?,
        point_reduce,
        group_mlp,
        initial_head,
        stages: vec![stage; cfg.stage_bundles()],
    })
}

fn planted_stage(cfg: &PipelineConfig) -> Result<StageParams> {
    let (c, e, nc) = (cfg.channels, cfg.embed_dim, cfg.num_classes);

    let mut mlps = Vec::with_capacity(cfg.resolutions.len());
    for &r in &cfg.resolutions {
        let mut g = DenseParams::zeros(&GateParams::spec_for(c, r))?;
        if r == 1 {
            g.layers[0].weight[(Q, 0)] = 1.0;
            g.layers[0].weight[(Q, 1)] = -1.0;
            let out = &mut g.layers[1];
            out.bias.iter_mut().for_each(|b| *b = GATE_SATURATION);
            out.bias[layout::FLAG] = 0.0;
            out.weight[(0, layout::FLAG)] = 1.0;
            out.weight[(1, layout::FLAG)] = -1.0;
        } else {
            g.layers[1].bias.iter_mut().for_each(|b| *b = -GATE_SATURATION);
        }
        mlps.push(g);
    }
    let gate = GateParams {
        channels: c,
        resolutions: cfg.resolutions.clone(),
        mlps,
    };

    let mut embed = DenseLayer::zeros(c, e, Activation::Linear);
    for t in 0..layout::DIM {
        embed.weight[(t, 2 * t)] = 1.0;
        embed.weight[(t, 2 * t + 1)] = -1.0;
    }
    embed.bias[2 * ANCHOR_SLOT] = ANCHOR;
    embed.bias[2 * ANCHOR_SLOT + 1] = -ANCHOR;

    let spec = attention_spec(cfg);
    let mut attention = AttentionParams::zeros(spec)?;
    // undo the 1/√d logit scale, split evenly between queries and keys
    let f = (spec.head_dim() as f64).powf(0.25);
    let sb = CENTER_SHARPNESS.sqrt();
    for a in 0..3 {
        let x = 2 * (layout::CENTER + a);
        attention.query.weight[(x, a)] = 2.0 * sb * f;
        attention.key.weight[(x, a)] = sb * f;
    }
    attention.query.bias[3] = f;
    attention.key.weight[(2 * layout::CENTER_SQ, 3)] = -CENTER_SHARPNESS * f;
    attention.query.bias[4] = f;
    attention.key.weight[(2 * layout::FLAG, 4)] = FLAG_SHARPNESS * f;
    attention.value.weight[(2 * layout::FLAG, 0)] = 1.0;
    attention.output.weight[(0, 2 * EST_SLOT)] = 1.0;
    attention.output.weight[(0, 2 * EST_SLOT + 1)] = -1.0;

    // post-norm output = pre-norm input / (σ₀ σ₁)
    let unscale = ANCHOR * (2.0 / e as f64).sqrt() * (1.0 + spec.ln_eps).sqrt();
    let mut head = DenseParams::zeros(&stage_head_spec(cfg))?;
    {
        let l0 = &mut head.layers[0];
        for k in 0..nc {
            l0.weight[(2 * k, k)] = unscale;
        }
        l0.weight[(2 * layout::FLAG, nc)] = unscale;
        l0.weight[(2 * EST_SLOT, nc)] = -unscale;
        l0.weight[(2 * layout::FLAG, nc + 1)] = -unscale;
        l0.weight[(2 * EST_SLOT, nc + 1)] = unscale;
        let l1 = &mut head.layers[1];
        for k in 0..nc {
            l1.weight[(k, k)] = CLASS_GAIN;
            l1.weight[(nc, k)] = DUPLICATE_PENALTY;
            l1.weight[(nc + 1, k)] = -DUPLICATE_PENALTY;
            l1.bias[k] = -CLASS_BIAS;
        }
    }

    let mut back_project = DenseLayer::zeros(e, c, Activation::Linear);
    back_project.weight[(2 * layout::FLAG, Q)] = FEEDBACK_GAIN * unscale;
    back_project.weight[(2 * EST_SLOT, Q)] = -FEEDBACK_GAIN * unscale;

    Ok(StageParams {
        gate,
        embed,
        attention,
        head,
        back_project,
    })
}
