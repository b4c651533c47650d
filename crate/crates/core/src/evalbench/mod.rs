//! Detection evaluation, the NMS baseline, latency benchmarks and parameter sweeps.

mod bench;
mod sweep;

pub use bench::{bench, nms_scaling, BenchMode, BenchRecord, NmsScalingPoint, PhaseStats, WARMUP_RUNS};
pub use sweep::{proposal_grid, sweep, weight_grid, SweepCell, SweepGrid};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_oriented, Box3D};
use crate::matching::{box_params, LabeledBox};

/// A scored, classified box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub score: f64,
    #[serde(flatten)]
    pub bbox: Box3D,
}

/// Descending score; exact ties broken by class, then box parameters, so the
/// order does not depend on input order.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class.cmp(&b.class))
        .then_with(|| {
            let (pa, pb) = (box_params(&a.bbox), box_params(&b.bbox));
            pa.iter()
                .zip(&pb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Greedy NMS: visit detections by descending score, keep one unless a kept
/// box (of the same class when `class_aware`) overlaps it with IoU above the
/// threshold. Returns the kept indices in visiting order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Result<Vec<usize>> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "NMS threshold must lie in (0, 1), got {iou_threshold}"
        )));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            (!class_aware || dets[k].class == dets[i].class)
                && iou_oriented(&dets[k].bbox, &dets[i].bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn nms(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Result<Vec<Detection>> {
    Ok(nms_indices(dets, iou_threshold, class_aware)?
        .into_iter()
        .map(|i| dets[i])
        .collect())
}

/// Detections and ground truth of one scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneEval {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<LabeledBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class: usize,
    pub threshold: f64,
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// One entry per (class present in ground truth, threshold).
    pub per_class: Vec<ClassResult>,
    /// Mean AP per threshold, keyed by the threshold printed with two decimals.
    pub map: BTreeMap<String, f64>,
}

pub fn threshold_key(t: f64) -> String {
    format!("{t:.2}")
}

impl EvalReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.map.get(&threshold_key(threshold)).copied()
    }

    /// Columns `class,threshold,AP,TP,FP,FN`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,threshold,AP,TP,FP,FN\n");
        for r in &self.per_class {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.class, r.threshold, r.ap, r.tp, r.fp, r.fn_
            ));
        }
        s
    }
}

/// Area under the precision envelope at every recall step.
pub fn average_precision(tp_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &t in tp_flags {
        if t {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_r {
            ap += (r - prev_r) * p;
            prev_r = *r;
        }
    }
    ap
}

/// Per-class AP at each threshold over a set of scenes, plus class-mean AP
/// over the classes that occur in the ground truth (0 when none do).
pub fn ap_eval(scenes: &[SceneEval], thresholds: &[f64]) -> Result<EvalReport> {
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::InvalidArgument(format!("IoU threshold {t} outside (0, 1]")));
    }
    let mut classes: Vec<usize> = scenes
        .iter()
        .flat_map(|s| s.ground_truth.iter().map(|g| g.class))
        .collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = Vec::new();
    let mut map = BTreeMap::new();
    for &t in thresholds {
        let mut sum = 0.0;
        for &c in &classes {
            let r = eval_class(scenes, c, t);
            sum += r.ap;
            per_class.push(r);
        }
        let mean = if classes.is_empty() {
            0.0
        } else {
            sum / classes.len() as f64
        };
        map.insert(threshold_key(t), mean);
    }
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        per_class,
        map,
    })
}

fn eval_class(scenes: &[SceneEval], class: usize, threshold: f64) -> ClassResult {
    let mut dets: Vec<(usize, Detection)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(s, sc)| {
            sc.detections
                .iter()
                .filter(|d| d.class == class)
                .map(move |d| (s, *d))
        })
        .collect();
    dets.sort_by(|a, b| rank(&a.1, &b.1).then(a.0.cmp(&b.0)));

    let gts: Vec<Vec<&LabeledBox>> = scenes
        .iter()
        .map(|s| s.ground_truth.iter().filter(|g| g.class == class).collect())
        .collect();
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut flags = Vec::with_capacity(dets.len());
    for (s, d) in &dets {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (j, g) in gts[*s].iter().enumerate() {
            let iou = iou_oriented(&d.bbox, &g.bbox);
            if iou > best.1 {
                best = (j, iou);
            }
        }
        let hit = best.0 != usize::MAX && best.1 >= threshold && !used[*s][best.0];
        if hit {
            used[*s][best.0] = true;
        }
        flags.push(hit);
    }
    let tp = flags.iter().filter(|f| **f).count();
    ClassResult {
        class,
        threshold,
        ap: average_precision(&flags, num_gt),
        tp,
        fp: flags.len() - tp,
        fn_: num_gt - tp,
    }
}
