use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{nms, Detection};
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::pipeline::{pipeline_forward, PipelineConfig, PipelineParams};
use crate::rng::SeedStream;
use crate::synth::SceneSample;

/// Untimed runs before measurement starts.
pub const WARMUP_RUNS: usize = 3;

/// IoU threshold of the NMS baseline.
pub const BASELINE_NMS_IOU: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    /// Pipeline output used as is.
    EndToEnd,
    /// Pipeline output followed by class-aware NMS.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub median_ms: f64,
    pub mean_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl PhaseStats {
    pub fn from_samples(samples_ms: Vec<f64>) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = match n {
            0 => 0.0,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        };
        let mean_ms = if n == 0 {
            0.0
        } else {
            samples_ms.iter().sum::<f64>() / n as f64
        };
        Self {
            median_ms,
            mean_ms,
            samples_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub mode: BenchMode,
    pub k: usize,
    #[serde(rename = "K")]
    pub top_k: usize,
    pub refinements: usize,
    pub trials: usize,
    pub warmup: usize,
    pub model: PhaseStats,
    /// Identically zero in end-to-end mode.
    pub nms: PhaseStats,
    pub total: PhaseStats,
    pub detections_out: usize,
    pub environment: String,
}

impl BenchRecord {
    /// Columns `mode,phase,median_ms,mean_ms,trials`.
    pub fn to_csv_rows(&self) -> String {
        let mode = match self.mode {
            BenchMode::EndToEnd => "end_to_end",
            BenchMode::Baseline => "baseline",
        };
        [("model", &self.model), ("nms", &self.nms), ("total", &self.total)]
            .iter()
            .map(|(name, s)| format!("{mode},{name},{},{},{}\n", s.median_ms, s.mean_ms, self.trials))
            .collect()
    }
}

pub fn environment_note() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}, {} logical cpus, single-threaded measurement",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus
    )
}

/// Times `trials` pipeline runs on one scene after [`WARMUP_RUNS`] untimed
/// runs. Baseline mode adds a class-aware NMS pass over the final detections.
pub fn bench(
    scene: &SceneSample,
    cfg: &PipelineConfig,
    params: &PipelineParams,
    trials: usize,
    mode: BenchMode,
) -> Result<BenchRecord> {
    if trials == 0 {
        return Err(Error::InvalidArgument("bench needs at least one trial".into()));
    }
    let mut model = Vec::with_capacity(trials);
    let mut nms_t = Vec::with_capacity(trials);
    let mut total = Vec::with_capacity(trials);
    let mut detections_out = 0;
    for run in 0..WARMUP_RUNS + trials {
        let start = Instant::now();
        let fwd = pipeline_forward(scene, cfg, params)?;
        let dets = fwd.detections();
        let model_ms = start.elapsed().as_secs_f64() * 1e3;
        let (kept, nms_ms) = match mode {
            BenchMode::EndToEnd => (dets.len(), 0.0),
            BenchMode::Baseline => {
                let t = Instant::now();
                let kept = nms(&dets, BASELINE_NMS_IOU, true)?;
                (kept.len(), t.elapsed().as_secs_f64() * 1e3)
            }
        };
        let total_ms = start.elapsed().as_secs_f64() * 1e3;
        if run >= WARMUP_RUNS {
            model.push(model_ms);
            nms_t.push(nms_ms);
            total.push(total_ms);
            detections_out = kept;
        }
    }
    Ok(BenchRecord {
        mode,
        k: cfg.k,
        top_k: cfg.top_k,
        refinements: cfg.refinements,
        trials,
        warmup: WARMUP_RUNS,
        model: PhaseStats::from_samples(model),
        nms: PhaseStats::from_samples(nms_t),
        total: PhaseStats::from_samples(total),
        detections_out,
        environment: environment_note(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsScalingPoint {
    pub detections: usize,
    pub kept: usize,
    pub nms: PhaseStats,
}

/// Pairwise-disjoint unit-spaced boxes with random scores: greedy NMS keeps
/// all of them and compares every pair.
fn disjoint_detections(n: usize, seed: u64) -> Result<Vec<Detection>> {
    let side = (n as f64).sqrt().ceil() as usize;
    let mut rng = SeedStream::new(seed).rng();
    (0..n)
        .map(|i| {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            Ok(Detection {
                class: 0,
                score: rng.random_range(0.0..1.0),
                bbox: Box3D::new([x, y, 0.5], [0.5, 0.5, 0.5], rng.random_range(-1.0..1.0))?,
            })
        })
        .collect()
}

/// Class-agnostic NMS wall-clock on synthetic detection sets of each size.
pub fn nms_scaling(sizes: &[usize], trials: usize, seed: u64) -> Result<Vec<NmsScalingPoint>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("nms_scaling needs at least one trial".into()));
    }
    sizes
        .iter()
        .map(|&n| {
            let dets = disjoint_detections(n, seed)?;
            let mut samples = Vec::with_capacity(trials);
            let mut kept = 0;
            for run in 0..WARMUP_RUNS + trials {
                let t = Instant::now();
                let k = nms(&dets, BASELINE_NMS_IOU, false)?;
                let ms = t.elapsed().as_secs_f64() * 1e3;
                if run >= WARMUP_RUNS {
                    samples.push(ms);
                    kept = k.len();
                }
            }
            Ok(NmsScalingPoint {
                detections: n,
                kept,
                nms: PhaseStats::from_samples(samples),
            })
        })
        .collect()
}
