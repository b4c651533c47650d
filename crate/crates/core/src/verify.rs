//! Oracle checks run by the `selftest` command.
//!
//! Each check compares a fast implementation against a slow independent
//! reference (exhaustive search, Monte-Carlo volume, finite differences,
//! brute-force binning) and reports one [`CheckOutcome`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evalbench::{ap_eval, nms, Detection, SceneEval};
use crate::geometry::{iou_aa, iou_oriented, point_in_box, Box3D, Vec3};
use crate::matching::{
    focal_loss, focal_loss_grad, hungarian, iou_loss, iou_loss_aa_grad, l1_box_loss, l1_box_loss_grad,
    match_cost_matrix, match_predictions, set_loss,
};
use crate::pipeline::{
    planted_params, pipeline_forward, reduce_features, refine_once, run_pipeline, ParamInit, PipelineConfig,
    PipelineParams, Proposals, VoteSource,
};
use crate::rng::SeedStream;
use crate::roi::{flat_dim, roi_pool_multi};
use crate::suppression::{nsm_loss, offset_magnitude_histogram, seed_labels, FeaturePointSet, OffsetHistogram};
use crate::synth::{gen_scene, SceneSpec};
use crate::tinynet::{finite_diff_grad, relative_error, Matrix, Prediction, FD_STEP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    /// `PASS name: detail` or `FAIL name: detail`.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

/// Minimum assignment cost of a square matrix by enumerating every
/// permutation (Heap's algorithm). Sums in row order.
pub fn brute_force_assignment(cost: &Matrix) -> f64 {
    let n = cost.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| (0..n).map(|i| cost[(i, p[i])]).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

pub fn check_hungarian(matrices: usize, n: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = SeedStream::new(seed).split("hungarian").rng();
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..matrices {
        let data = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
        let cost = Matrix::from_vec(n, n, data)?;
        if hungarian(&cost)?.total_cost != brute_force_assignment(&cost) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(CheckOutcome::new(
        "hungarian_vs_exhaustive",
        mismatches == 0 && secs < 5.0,
        format!("{mismatches}/{matrices} mismatches on {n}x{n}, {secs:.2} s"),
    ))
}

pub fn random_oriented_box(rng: &mut ChaCha8Rng, spread: f64) -> Result<Box3D> {
    let c = [
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
    ];
    let s = [
        rng.random_range(0.3..2.0),
        rng.random_range(0.3..2.0),
        rng.random_range(0.3..2.0),
    ];
    Box3D::new(c, s, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

/// IoU by uniform sampling of the union's bounding box.
pub fn monte_carlo_iou(a: &Box3D, b: &Box3D, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in a.corners().iter().chain(b.corners().iter()) {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let p: Vec3 = std::array::from_fn(|k| rng.random_range(lo[k]..hi[k]));
        let (ia, ib) = (point_in_box(p, a), point_in_box(p, b));
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn check_rotated_iou(pairs: usize, samples: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = SeedStream::new(seed).split("rotated_iou").rng();
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = random_oriented_box(&mut rng, 0.6)?;
        let b = random_oriented_box(&mut rng, 0.6)?;
        let err = (iou_oriented(&a, &b) - monte_carlo_iou(&a, &b, samples, &mut rng)).abs();
        worst = worst.max(err);
        within += (err <= 0.01) as usize;
    }
    let frac = within as f64 / pairs as f64;
    let mut aa_worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = random_oriented_box(&mut rng, 0.6)?.with_heading(0.0);
        let b = random_oriented_box(&mut rng, 0.6)?.with_heading(0.0);
        aa_worst = aa_worst.max((iou_oriented(&a, &b) - iou_aa(&a, &b)?).abs());
    }
    Ok(vec![
        CheckOutcome::new(
            "rotated_iou_vs_monte_carlo",
            frac >= 0.99,
            format!("{within}/{pairs} pairs within 0.01 ({samples} samples), worst {worst:.4}"),
        ),
        CheckOutcome::new(
            "rotated_iou_matches_axis_aligned",
            aa_worst <= 1e-9,
            format!("max |oriented - aa| = {aa_worst:.3e} over {pairs} pairs"),
        ),
    ])
}

/// Overlapping interval pair whose endpoints are pairwise at least `margin` apart.
fn kink_free_interval(rng: &mut ChaCha8Rng, margin: f64) -> ((f64, f64), (f64, f64)) {
    loop {
        let (pc, ps): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(0.5..2.0));
        let (gc, gs): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(0.5..2.0));
        let ends = [pc - ps / 2.0, pc + ps / 2.0, gc - gs / 2.0, gc + gs / 2.0];
        let separated = (0..4).all(|i| (0..i).all(|j| (ends[i] - ends[j]).abs() >= margin));
        let overlapping = ends[1].min(ends[3]) - ends[0].max(ends[2]) >= margin;
        if separated && overlapping {
            return ((pc, ps), (gc, gs));
        }
    }
}

pub fn check_gradients(cases: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let root = SeedStream::new(seed).split("gradients");
    let (tol, h) = (1e-4, FD_STEP);

    let mut rng = root.split("focal").rng();
    let mut worst_focal: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let target = if rng.random_bool(0.2) { None } else { Some(rng.random_range(0..n)) };
        let alpha = rng.random_range(0.1..0.9);
        let gamma = rng.random_range(0.0..3.0);
        let fd = finite_diff_grad(|x| focal_loss(x, target, alpha, gamma), &logits, h)?;
        worst_focal = worst_focal.max(relative_error(&focal_loss_grad(&logits, target, alpha, gamma), &fd));
    }

    let mut rng = root.split("l1").rng();
    let scale = [4.0, 4.0, 1.5];
    let mut worst_l1: f64 = 0.0;
    for _ in 0..cases {
        let gt = random_oriented_box(&mut rng, 1.0)?;
        // residuals kept at least 0.05 away from the |x| kink
        let mut p = crate::matching::box_params(&gt);
        for v in p.iter_mut().take(6) {
            let d: f64 = rng.random_range(0.05..0.25);
            *v += if rng.random_bool(0.5) { d } else { -d };
        }
        p[6] += rng.random_range(0.05..0.6) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let pred = crate::matching::box_from_params(&p)?;
        let f = |x: &[f64]| l1_box_loss(&crate::matching::box_from_params(x).unwrap(), &gt, scale);
        let fd = finite_diff_grad(f, &p, h)?;
        worst_l1 = worst_l1.max(relative_error(&l1_box_loss_grad(&pred, &gt, scale), &fd));
    }

    let mut rng = root.split("iou").rng();
    let mut worst_iou: f64 = 0.0;
    for _ in 0..cases {
        let axes: Vec<_> = (0..3).map(|_| kink_free_interval(&mut rng, 0.02)).collect();
        let pc = [axes[0].0 .0, axes[1].0 .0, axes[2].0 .0];
        let ps = [axes[0].0 .1, axes[1].0 .1, axes[2].0 .1];
        let gt = Box3D::axis_aligned([axes[0].1 .0, axes[1].1 .0, axes[2].1 .0], [axes[0].1 .1, axes[1].1 .1, axes[2].1 .1])?;
        let pred = Box3D::axis_aligned(pc, ps)?;
        let x = [pc[0], pc[1], pc[2], ps[0], ps[1], ps[2]];
        let f = |x: &[f64]| {
            let b = Box3D::axis_aligned([x[0], x[1], x[2]], [x[3], x[4], x[5]]).unwrap();
            iou_loss(&b, &gt)
        };
        let fd = finite_diff_grad(f, &x, h)?;
        worst_iou = worst_iou.max(relative_error(&iou_loss_aa_grad(&pred, &gt)?, &fd));
    }

    let mk = |name: &str, worst: f64| {
        CheckOutcome::new(
            name,
            worst <= tol,
            format!("max relative error {worst:.2e} over {cases} cases (h = {h:e})"),
        )
    };
    Ok(vec![
        mk("focal_loss_gradient", worst_focal),
        mk("l1_box_loss_gradient", worst_l1),
        mk("iou_loss_gradient", worst_iou),
    ])
}

/// Raw and gated offset histograms of an oracle scene.
pub struct SuppressionReport {
    pub outcome: CheckOutcome,
    pub raw: OffsetHistogram,
    pub gated: OffsetHistogram,
}

pub fn check_suppression(seed: u64) -> Result<SuppressionReport> {
    let spec = SceneSpec::default();
    let scene = gen_scene(&spec, seed)?;
    let pred = scene
        .oracle
        .as_ref()
        .ok_or_else(|| crate::Error::InvalidArgument("oracle scene expected".into()))?;
    let labels = seed_labels(&scene.seeds.positions, &scene.gt_boxes());
    let raw = offset_magnitude_histogram(pred, &labels, false)?;
    let gated = offset_magnitude_histogram(pred, &labels, true)?;
    let min_gap = (0..pred.len())
        .filter(|&i| !labels.objectness[i])
        .map(|i| pred.objectness_logits[i][0] - pred.objectness_logits[i][1])
        .fold(f64::INFINITY, f64::min);
    let ratio = gated.background_mean_abs / raw.background_mean_abs;
    Ok(SuppressionReport {
        outcome: CheckOutcome::new(
            "background_offset_suppression",
            min_gap >= 3.0 && ratio <= 0.2,
            format!(
                "background mean |offset| raw {:.4}, gated {:.4}, ratio {ratio:.4}, min logit gap {min_gap:.2}",
                raw.background_mean_abs, gated.background_mean_abs
            ),
        ),
        raw,
        gated,
    })
}

/// Max-pool of a single cell by scanning every point and testing cell
/// membership through the cell's own bounds.
fn brute_force_cell(points: &FeaturePointSet, bbox: &Box3D, r: usize, cell: [usize; 3], channels: usize) -> Vec<f64> {
    let size = bbox.size();
    let mut out: Option<Vec<f64>> = None;
    for (i, &p) in points.positions.iter().enumerate() {
        if !point_in_box(p, bbox) {
            continue;
        }
        let l = bbox.to_local(p);
        let inside = (0..3).all(|k| {
            let lo = -size[k] / 2.0 + size[k] * cell[k] as f64 / r as f64;
            let hi = -size[k] / 2.0 + size[k] * (cell[k] + 1) as f64 / r as f64;
            let below_top = if cell[k] + 1 == r { true } else { l[k] < hi };
            (cell[k] == 0 || l[k] >= lo) && below_top
        });
        if inside {
            let f = points.features.row(i);
            match &mut out {
                None => out = Some(f.to_vec()),
                Some(o) => o.iter_mut().zip(f).for_each(|(a, b)| *a = a.max(*b)),
            }
        }
    }
    out.unwrap_or_else(|| vec![0.0; channels])
}

pub fn check_roi(scenes: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let dim = flat_dim(&[1, 3, 5], 128);
    let root = SeedStream::new(seed).split("roi");
    let channels = 8;
    let resolutions = [1, 3, 5];
    let mut mismatched_cells = 0usize;
    let mut cells = 0usize;
    for s in 0..scenes {
        let mut rng = root.index(s as u64).rng();
        let n = rng.random_range(50..300);
        let positions: Vec<Vec3> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.5..1.5)))
            .collect();
        let feats = (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
        let points = FeaturePointSet::new(positions, Matrix::from_vec(n, channels, feats)?)?;
        let bbox = random_oriented_box(&mut rng, 0.5)?;
        let roi = roi_pool_multi(&points, &bbox, &resolutions, channels)?;
        for (b, &r) in resolutions.iter().enumerate() {
            for ix in 0..r {
                for iy in 0..r {
                    for iz in 0..r {
                        let cell = (ix * r + iy) * r + iz;
                        cells += 1;
                        if roi.cell(b, cell) != brute_force_cell(&points, &bbox, r, [ix, iy, iz], channels).as_slice() {
                            mismatched_cells += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(vec![
        CheckOutcome::new(
            "roi_flat_dimension",
            dim == 19584,
            format!("C=128, r in {{1,3,5}} gives {dim}"),
        ),
        CheckOutcome::new(
            "roi_pool_vs_brute_force",
            mismatched_cells == 0,
            format!("{mismatched_cells}/{cells} cells differ over {scenes} scenes"),
        ),
    ])
}

fn small_config() -> PipelineConfig {
    PipelineConfig {
        k: 32,
        top_k: 16,
        channels: 16,
        embed_dim: 32,
        heads: 4,
        ffn_dim: 64,
        head_hidden: 32,
        ..PipelineConfig::default()
    }
}

pub fn check_permutation_equivariance(seed: u64) -> Result<CheckOutcome> {
    let cfg = small_config();
    let params = PipelineParams::random(&PipelineConfig { seed, ..cfg.clone() })?;
    let scene = gen_scene(&SceneSpec::default(), seed)?;
    let fwd = pipeline_forward(&scene, &cfg, &params)?;
    let input = fwd.initial.select(&fwd.selected);
    let votes = crate::synth::derive_feature_points_with(&scene, &fwd.vote_prediction, cfg.feature_gating)?;
    let points = reduce_features(&votes, &params.point_reduce)?;
    let base = refine_once(&input, &points, params.stage(0), &cfg)?;
    let mut rng = SeedStream::new(seed).split("perm").rng();
    let mut worst: f64 = 0.0;
    let trials = 5;
    for _ in 0..trials {
        let mut perm: Vec<usize> = (0..input.len()).collect();
        perm.shuffle(&mut rng);
        let out = refine_once(&input.select(&perm), &points, params.stage(0), &cfg)?;
        for (j, &i) in perm.iter().enumerate() {
            worst = worst.max(proposal_gap(&out.proposals, j, &base.proposals, i));
        }
    }
    Ok(CheckOutcome::new(
        "refine_permutation_equivariance",
        worst <= 1e-9,
        format!("max deviation {worst:.3e} over {trials} permutations of K={}", input.len()),
    ))
}

fn proposal_gap(a: &Proposals, i: usize, b: &Proposals, j: usize) -> f64 {
    let pa = crate::matching::box_params(&a.predictions[i].bbox);
    let pb = crate::matching::box_params(&b.predictions[j].bbox);
    let boxes = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs());
    let logits = a.predictions[i]
        .logits
        .iter()
        .zip(&b.predictions[j].logits)
        .map(|(x, y)| (x - y).abs());
    let feats = a.features.row(i).iter().zip(b.features.row(j)).map(|(x, y)| (x - y).abs());
    boxes.chain(logits).chain(feats).fold(0.0, f64::max)
}

pub fn oracle_config() -> PipelineConfig {
    PipelineConfig {
        vote_source: VoteSource::Oracle,
        param_init: ParamInit::Planted,
        ..PipelineConfig::default()
    }
}

pub fn check_oracle_round_trip(scenes: usize, seed: u64) -> Result<CheckOutcome> {
    let cfg = oracle_config();
    let params = planted_params(&cfg)?;
    let mut evals = Vec::with_capacity(scenes);
    let (mut min_iou, mut wrong_class, mut missing) = (f64::INFINITY, 0usize, 0usize);
    for s in 0..scenes {
        let spec = SceneSpec {
            num_objects: 1 + s % 8,
            ..SceneSpec::default()
        };
        let scene = gen_scene(&spec, seed.wrapping_add(s as u64))?;
        let run = run_pipeline(&scene, &cfg, &params)?;
        let preds: &[Prediction] = &run.forward.final_proposals().predictions;
        let m = hungarian(&match_cost_matrix(preds, &scene.boxes, &cfg.weights, cfg.scene_scale))?;
        missing += scene.boxes.len() - m.pairs.len();
        for &(p, g) in &m.pairs {
            min_iou = min_iou.min(iou_oriented(&preds[p].bbox, &scene.boxes[g].bbox));
            wrong_class += (preds[p].best_class().0 != scene.boxes[g].class) as usize;
        }
        evals.push(SceneEval {
            detections: run.detections,
            ground_truth: scene.boxes,
        });
    }
    let report = ap_eval(&evals, &[0.25, 0.5])?;
    let map50 = report.map_at(0.5).unwrap_or(0.0);
    Ok(CheckOutcome::new(
        "oracle_round_trip",
        min_iou >= 0.9 && wrong_class == 0 && missing == 0 && map50 == 1.0,
        format!("{scenes} scenes: min matched IoU {min_iou:.4}, {wrong_class} wrong classes, mAP@0.5 {map50}"),
    ))
}

pub fn check_loss_bookkeeping(seed: u64) -> Result<CheckOutcome> {
    let scene = gen_scene(&SceneSpec::default(), seed)?;
    let mut worst: f64 = 0.0;
    for refinements in 1..=4 {
        let cfg = PipelineConfig {
            refinements,
            seed,
            ..small_config()
        };
        let params = PipelineParams::random(&cfg)?;
        let run = run_pipeline(&scene, &cfg, &params)?;
        let labels = seed_labels(&scene.seeds.positions, &scene.gt_boxes());
        let nsm = nsm_loss(&run.forward.vote_prediction, &labels, cfg.lambda1, cfg.lambda2)?.total;
        let set = |p: &Proposals| -> Result<f64> {
            let m = match_predictions(&p.predictions, &scene.boxes, &cfg.weights, cfg.scene_scale)?;
            Ok(set_loss(&p.predictions, &scene.boxes, &m, &cfg.weights, cfg.scene_scale, cfg.prm_normalization)?.total)
        };
        let mut expected = nsm + set(&run.forward.initial)?;
        for s in &run.forward.stages {
            expected += set(&s.proposals)?;
        }
        worst = worst.max((run.losses.total - expected).abs());
    }
    Ok(CheckOutcome::new(
        "total_loss_bookkeeping",
        worst <= 1e-9,
        format!("max |total - recomputed sum| = {worst:.3e} for refinements 1..=4"),
    ))
}

pub fn check_class_aware_nms() -> Result<CheckOutcome> {
    let b = Box3D::new([1.0, 2.0, 0.5], [1.0, 0.8, 1.0], 0.4)?;
    let dets = [
        Detection {
            class: 3,
            score: 0.9,
            bbox: b,
        },
        Detection {
            class: 7,
            score: 0.8,
            bbox: b,
        },
    ];
    let aware = nms(&dets, 0.5, true)?.len();
    let agnostic = nms(&dets, 0.5, false)?;
    let ok = aware == 2 && agnostic.len() == 1 && agnostic[0].class == 3;
    Ok(CheckOutcome::new(
        "class_aware_nms_keeps_cross_class_duplicates",
        ok,
        format!("class-aware keeps {aware}, class-agnostic keeps {}", agnostic.len()),
    ))
}

/// Every check at full size, plus the suppression histograms.
pub fn run_all(seed: u64) -> Result<(Vec<CheckOutcome>, SuppressionReport)> {
    let mut out = vec![check_hungarian(1000, 6, seed)?];
    out.extend(check_rotated_iou(500, 200_000, seed)?);
    out.extend(check_gradients(100, seed)?);
    let supp = check_suppression(seed)?;
    out.push(supp.outcome.clone());
    out.push(check_permutation_equivariance(seed)?);
    out.extend(check_roi(50, seed)?);
    out.push(check_oracle_round_trip(20, seed)?);
    out.push(check_loss_bookkeeping(seed)?);
    out.push(check_class_aware_nms()?);
    Ok((out, supp))
}
