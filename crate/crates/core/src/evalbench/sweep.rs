use serde::{Deserialize, Serialize};

use super::{ap_eval, EvalReport, SceneEval};
use crate::error::Result;
use crate::matching::CostWeights;
use crate::pipeline::{pipeline_forward, pipeline_losses, PipelineConfig, PipelineForward, PipelineParams};
use crate::synth::SceneSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepGrid {
    Weights,
    Proposals,
    All,
}

/// Loss-weight rows: each weight moved down and up with the others at their
/// defaults, then the defaults.
pub fn weight_grid() -> Vec<CostWeights> {
    let base = CostWeights::default();
    let rows = [
        (1.0, 0.45, 2.0, 0.25),
        (2.0, 0.45, 2.0, 0.25),
        (1.5, 0.3, 2.0, 0.25),
        (1.5, 0.6, 2.0, 0.25),
        (1.5, 0.45, 1.0, 0.25),
        (1.5, 0.45, 3.0, 0.25),
        (1.5, 0.45, 2.0, 0.1),
        (1.5, 0.45, 2.0, 0.4),
        (1.5, 0.45, 2.0, 0.25),
    ];
    rows.iter()
        .map(|&(cls, l1, iou, cor)| CostWeights {
            cls,
            l1,
            iou,
            cor,
            ..base
        })
        .collect()
}

/// `(k, K)` rows, the default last.
pub fn proposal_grid() -> Vec<(usize, usize)> {
    vec![(256, 128), (256, 160), (256, 192), (256, 256), (160, 160), (160, 128)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub grid: SweepGrid,
    pub label: String,
    pub weights: CostWeights,
    pub k: usize,
    #[serde(rename = "K")]
    pub top_k: usize,
    pub report: EvalReport,
    /// Mean over scenes of the total training loss.
    pub mean_total_loss: f64,
}

fn evaluate(
    forwards: &[PipelineForward],
    scenes: &[SceneSample],
    cfg: &PipelineConfig,
    thresholds: &[f64],
) -> Result<(EvalReport, f64)> {
    let mut evals = Vec::with_capacity(scenes.len());
    let mut loss = 0.0;
    for (f, s) in forwards.iter().zip(scenes) {
        loss += pipeline_losses(f, s, cfg)?.total;
        evals.push(SceneEval {
            detections: f.detections(),
            ground_truth: s.boxes.clone(),
        });
    }
    let mean = if scenes.is_empty() { 0.0 } else { loss / scenes.len() as f64 };
    Ok((ap_eval(&evals, thresholds)?, mean))
}

/// One evaluation per grid cell. Loss weights do not change the forward
/// pass, so the weight grid reuses one forward pass per scene.
pub fn sweep(
    scenes: &[SceneSample],
    base: &PipelineConfig,
    params: &PipelineParams,
    grid: SweepGrid,
    thresholds: &[f64],
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    if matches!(grid, SweepGrid::Weights | SweepGrid::All) {
        let forwards = scenes
            .iter()
            .map(|s| pipeline_forward(s, base, params))
            .collect::<Result<Vec<_>>>()?;
        for w in weight_grid() {
            let cfg = PipelineConfig {
                weights: w,
                ..base.clone()
            };
            let (report, mean_total_loss) = evaluate(&forwards, scenes, &cfg, thresholds)?;
            cells.push(SweepCell {
                grid: SweepGrid::Weights,
                label: format!("cls={} l1={} iou={} cor={}", w.cls, w.l1, w.iou, w.cor),
                weights: w,
                k: cfg.k,
                top_k: cfg.top_k,
                report,
                mean_total_loss,
            });
        }
    }
    if matches!(grid, SweepGrid::Proposals | SweepGrid::All) {
        for (k, top_k) in proposal_grid() {
            let cfg = PipelineConfig {
                k,
                top_k,
                ..base.clone()
            };
            let forwards = scenes
                .iter()
                .map(|s| pipeline_forward(s, &cfg, params))
                .collect::<Result<Vec<_>>>()?;
            let (report, mean_total_loss) = evaluate(&forwards, scenes, &cfg, thresholds)?;
            cells.push(SweepCell {
                grid: SweepGrid::Proposals,
                label: format!("k={k} K={top_k}"),
                weights: cfg.weights,
                k,
                top_k,
                report,
                mean_total_loss,
            });
        }
    }
    Ok(cells)
}
