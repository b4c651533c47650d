//! Objectness-gated voting.
//!
//! Every seed predicts a centroid offset, a feature offset, and two objectness
//! logits `[bg, fg]`. The foreground softmax probability scales the offset, so
//! seeds the model believes are background barely move:
//! `vote = seed + offset · softmax(logits)[fg]`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::geometry::{add, dist2, point_in_box, Box3D, Vec3};
use crate::tinynet::{sigmoid, Matrix};

/// Positions with one feature row per point. Seeds, votes, and their
/// concatenation all use this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePointSet {
    pub positions: Vec<Vec3>,
    pub features: Matrix,
}

pub type SeedSet = FeaturePointSet;
pub type VoteSet = FeaturePointSet;

impl FeaturePointSet {
    pub fn new(positions: Vec<Vec3>, features: Matrix) -> Result<Self> {
        ensure_len("FeaturePointSet rows", positions.len(), features.rows())?;
        if !positions.iter().flatten().all(|v| v.is_finite()) || !features.is_finite() {
            return Err(Error::NonFinite("feature point set".into()));
        }
        Ok(Self {
            positions,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// `self` followed by `other`, row order preserved.
    pub fn concat(&self, other: &FeaturePointSet) -> Result<FeaturePointSet> {
        ensure_len("FeaturePointSet::concat feature dim", self.feature_dim(), other.feature_dim())?;
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut data = self.features.as_slice().to_vec();
        data.extend_from_slice(other.features.as_slice());
        Ok(FeaturePointSet {
            positions,
            features: Matrix::from_vec(self.len() + other.len(), self.feature_dim(), data)?,
        })
    }
}

/// Per-seed outputs of the vote head.
#[derive(Debug, Clone, PartialEq)]
pub struct VotePrediction {
    pub offsets: Vec<Vec3>,
    pub feature_offsets: Matrix,
    /// `[background, foreground]` logits per seed.
    pub objectness_logits: Vec<[f64; 2]>,
}

impl VotePrediction {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Foreground softmax probability of seed `i`.
    pub fn gate(&self, i: usize) -> f64 {
        let [bg, fg] = self.objectness_logits[i];
        sigmoid(fg - bg)
    }

    pub fn check_against(&self, seeds: &SeedSet) -> Result<()> {
        let m = seeds.len();
        ensure_len("VotePrediction offsets", m, self.offsets.len())?;
        ensure_len("VotePrediction logits", m, self.objectness_logits.len())?;
        ensure_len("VotePrediction feature rows", m, self.feature_offsets.rows())?;
        ensure_len("VotePrediction feature dim", seeds.feature_dim(), self.feature_offsets.cols())
    }

    /// Same predictions with the rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            offsets: perm.iter().map(|&i| self.offsets[i]).collect(),
            feature_offsets: self.feature_offsets.select_rows(perm),
            objectness_logits: perm.iter().map(|&i| self.objectness_logits[i]).collect(),
        }
    }
}

/// Whether feature offsets are scaled by the objectness gate like positions are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGating {
    #[default]
    Gated,
    Ungated,
}

/// Gated votes with gated feature offsets.
pub fn suppress_votes(seeds: &SeedSet, pred: &VotePrediction) -> Result<VoteSet> {
    suppress_votes_with(seeds, pred, FeatureGating::Gated)
}

pub fn suppress_votes_with(
    seeds: &SeedSet,
    pred: &VotePrediction,
    feature_gating: FeatureGating,
) -> Result<VoteSet> {
    pred.check_against(seeds)?;
    let mut positions = Vec::with_capacity(seeds.len());
    let mut features = seeds.features.clone();
    for i in 0..seeds.len() {
        let g = pred.gate(i);
        let o = pred.offsets[i];
        positions.push(add(seeds.positions[i], [o[0] * g, o[1] * g, o[2] * g]));
        let fg = match feature_gating {
            FeatureGating::Gated => g,
            FeatureGating::Ungated => 1.0,
        };
        for (f, d) in features.row_mut(i).iter_mut().zip(pred.feature_offsets.row(i)) {
            *f += d * fg;
        }
    }
    Ok(FeaturePointSet {
        positions,
        features,
    })
}

/// Objectness labels and centroid-offset targets for each seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLabels {
    pub objectness: Vec<bool>,
    /// GT index each foreground seed is assigned to.
    pub assigned: Vec<Option<usize>>,
    /// `center − seed` for foreground seeds, zero elsewhere.
    pub offset_target: Vec<Vec3>,
}

impl SeedLabels {
    pub fn len(&self) -> usize {
        self.objectness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectness.is_empty()
    }

    pub fn foreground_count(&self) -> usize {
        self.objectness.iter().filter(|a| **a).count()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            objectness: perm.iter().map(|&i| self.objectness[i]).collect(),
            assigned: perm.iter().map(|&i| self.assigned[i]).collect(),
            offset_target: perm.iter().map(|&i| self.offset_target[i]).collect(),
        }
    }
}

/// A seed is foreground iff it lies inside some GT box. A seed inside several
/// boxes goes to the one with the nearest center, then the lowest index.
pub fn seed_labels(positions: &[Vec3], gts: &[Box3D]) -> SeedLabels {
    let mut objectness = Vec::with_capacity(positions.len());
    let mut assigned = Vec::with_capacity(positions.len());
    let mut offset_target = Vec::with_capacity(positions.len());
    for &p in positions {
        let mut best: Option<(usize, f64)> = None;
        for (j, b) in gts.iter().enumerate() {
            if !point_in_box(p, b) {
                continue;
            }
            let d = dist2(p, b.center());
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        objectness.push(best.is_some());
        assigned.push(best.map(|(j, _)| j));
        offset_target.push(match best {
            Some((j, _)) => {
                let c = gts[j].center();
                [c[0] - p[0], c[1] - p[1], c[2] - p[2]]
            }
            None => [0.0; 3],
        });
    }
    SeedLabels {
        objectness,
        assigned,
        offset_target,
    }
}

pub(crate) fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub(crate) fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsmLoss {
    pub objectness: f64,
    pub regression: f64,
    pub total: f64,
}

/// Objectness cross-entropy (mean over all seeds) plus smooth-L1 between the
/// gated offset and its target (mean over foreground seeds and coordinates),
/// combined as `λ1·obj + λ2·reg`.
pub fn nsm_loss(
    pred: &VotePrediction,
    labels: &SeedLabels,
    lambda_obj: f64,
    lambda_reg: f64,
) -> Result<NsmLoss> {
    ensure_len("nsm_loss labels", pred.len(), labels.len())?;
    if lambda_obj < 0.0 || lambda_reg < 0.0 {
        return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
    }
    let m = pred.len();
    let mut obj = 0.0;
    let mut reg = 0.0;
    let mut fg = 0usize;
    for i in 0..m {
        let [bg_logit, fg_logit] = pred.objectness_logits[i];
        let z = fg_logit - bg_logit;
        if labels.objectness[i] {
            obj += softplus(-z);
            let g = sigmoid(z);
            for k in 0..3 {
                reg += smooth_l1(pred.offsets[i][k] * g - labels.offset_target[i][k]);
            }
            fg += 1;
        } else {
            obj += softplus(z);
        }
    }
    let objectness = if m == 0 { 0.0 } else { obj / m as f64 };
    let regression = if fg == 0 { 0.0 } else { reg / (3 * fg) as f64 };
    Ok(NsmLoss {
        objectness,
        regression,
        total: lambda_obj * objectness + lambda_reg * regression,
    })
}

/// Gradient of the regression term with respect to the raw offsets, gates held fixed.
pub fn vote_reg_grad(pred: &VotePrediction, labels: &SeedLabels) -> Result<Vec<Vec3>> {
    ensure_len("vote_reg_grad labels", pred.len(), labels.len())?;
    let fg = labels.foreground_count();
    let mut grad = vec![[0.0; 3]; pred.len()];
    if fg == 0 {
        return Ok(grad);
    }
    let norm = 1.0 / (3 * fg) as f64;
    for i in 0..pred.len() {
        if !labels.objectness[i] {
            continue;
        }
        let g = pred.gate(i);
        for k in 0..3 {
            let r = pred.offsets[i][k] * g - labels.offset_target[i][k];
            grad[i][k] = smooth_l1_grad(r) * g * norm;
        }
    }
    Ok(grad)
}

pub const HISTOGRAM_BINS: usize = 50;
pub const HISTOGRAM_MAX: f64 = 2.0;

/// Histogram of per-component absolute offsets, split by seed label.
/// Bins are `HISTOGRAM_BINS` uniform intervals `[i·w, (i+1)·w)` on
/// `[0, HISTOGRAM_MAX)`, plus one overflow bin for values `≥ HISTOGRAM_MAX`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetHistogram {
    pub gated: bool,
    pub foreground: Vec<u64>,
    pub background: Vec<u64>,
    pub foreground_mean_abs: f64,
    pub background_mean_abs: f64,
}

impl OffsetHistogram {
    pub fn bin_width() -> f64 {
        HISTOGRAM_MAX / HISTOGRAM_BINS as f64
    }

    pub fn bin_of(v: f64) -> usize {
        if v >= HISTOGRAM_MAX {
            HISTOGRAM_BINS
        } else {
            ((v / Self::bin_width()) as usize).min(HISTOGRAM_BINS - 1)
        }
    }

    /// `bin_lo,bin_hi,foreground,background`; the overflow row has `inf` as its upper edge.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,foreground,background\n");
        let w = Self::bin_width();
        for i in 0..=HISTOGRAM_BINS {
            let lo = i as f64 * w;
            let hi = if i == HISTOGRAM_BINS {
                "inf".to_string()
            } else {
                format!("{:.2}", (i + 1) as f64 * w)
            };
            out.push_str(&format!(
                "{lo:.2},{hi},{},{}\n",
                self.foreground[i], self.background[i]
            ));
        }
        out
    }
}

/// Builds the offset-magnitude histogram from raw (`gated = false`) or
/// gated (`gated = true`) offsets.
pub fn offset_magnitude_histogram(
    pred: &VotePrediction,
    labels: &SeedLabels,
    gated: bool,
) -> Result<OffsetHistogram> {
    ensure_len("offset_magnitude_histogram labels", pred.len(), labels.len())?;
    let mut fg = vec![0u64; HISTOGRAM_BINS + 1];
    let mut bg = vec![0u64; HISTOGRAM_BINS + 1];
    let (mut fg_sum, mut bg_sum, mut fg_n, mut bg_n) = (0.0, 0.0, 0usize, 0usize);
    for i in 0..pred.len() {
        let g = if gated { pred.gate(i) } else { 1.0 };
        for k in 0..3 {
            let v = (pred.offsets[i][k] * g).abs();
            let bin = OffsetHistogram::bin_of(v);
            if labels.objectness[i] {
                fg[bin] += 1;
                fg_sum += v;
                fg_n += 1;
            } else {
                bg[bin] += 1;
                bg_sum += v;
                bg_n += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(OffsetHistogram {
        gated,
        foreground: fg,
        background: bg,
        foreground_mean_abs: mean(fg_sum, fg_n),
        background_mean_abs: mean(bg_sum, bg_n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::{finite_diff_grad, relative_error, FD_STEP};

    fn one_seed(logits: [f64; 2], offset: Vec3) -> (SeedSet, VotePrediction) {
        let seeds = FeaturePointSet::new(vec![[0.0; 3]], Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let pred = VotePrediction {
            offsets: vec![offset],
            feature_offsets: Matrix::from_vec(1, 2, vec![4.0, -2.0]).unwrap(),
            objectness_logits: vec![logits],
        };
        (seeds, pred)
    }

    #[test]
    fn symmetric_logits_halve_the_offset() {
        let (s, p) = one_seed([0.0, 0.0], [2.0, 0.0, 0.0]);
        let v = suppress_votes(&s, &p).unwrap();
        assert_eq!(v.positions[0], [1.0, 0.0, 0.0]);
        assert_eq!(v.features.row(0), &[3.0, 1.0]);
        let u = suppress_votes_with(&s, &p, FeatureGating::Ungated).unwrap();
        assert_eq!(u.features.row(0), &[5.0, 0.0]);
    }

    #[test]
    fn background_logits_shrink_the_vote() {
        let (s, p) = one_seed([4.0, 0.0], [2.0, 0.0, 0.0]);
        let v = suppress_votes(&s, &p).unwrap();
        // 1 / (1 + e^4) evaluated to 20 digits: 0.017986209962091559...
        assert!((p.gate(0) - 0.017_986_209_962_091_56).abs() < 1e-15);
        assert!((v.positions[0][0] - 0.035_972_419_924_183_12).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits_pass_the_offset_through() {
        let (s, p) = one_seed([-20.0, 20.0], [2.0, -1.0, 0.5]);
        let v = suppress_votes(&s, &p).unwrap();
        for k in 0..3 {
            assert!((v.positions[0][k] - p.offsets[0][k]).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (s, mut p) = one_seed([0.0, 0.0], [1.0, 0.0, 0.0]);
        p.offsets.push([0.0; 3]);
        assert!(suppress_votes(&s, &p).is_err());
    }

    #[test]
    fn labels_follow_containment() {
        let none = seed_labels(&[[0.0; 3], [1.0, 1.0, 1.0]], &[]);
        assert_eq!(none.objectness, vec![false, false]);

        let b = Box3D::new([1.0, 2.0, 0.5], [1.0, 1.0, 1.0], 0.3).unwrap();
        let at_center = seed_labels(&[b.center()], &[b]);
        assert_eq!(at_center.objectness, vec![true]);
        assert_eq!(at_center.offset_target[0], [0.0; 3]);
    }

    #[test]
    fn overlapping_boxes_assign_nearest_center() {
        let a = Box3D::axis_aligned([0.0, 0.0, 0.0], [2.0, 2.0, 2.0]).unwrap();
        let b = Box3D::axis_aligned([1.0, 0.0, 0.0], [2.0, 2.0, 2.0]).unwrap();
        let pts = [[0.2, 0.0, 0.0], [0.8, 0.0, 0.0], [0.5, 0.0, 0.0]];
        let l = seed_labels(&pts, &[a, b]);
        // exhaustive oracle: among containing boxes, pick min squared distance, then min index
        for (i, p) in pts.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for (j, g) in [a, b].iter().enumerate() {
                if point_in_box(*p, g) {
                    let d = dist2(*p, g.center());
                    let cand = (d, j);
                    if best.is_none_or(|bb| cand.partial_cmp(&bb).unwrap().is_lt()) {
                        best = Some(cand);
                    }
                }
            }
            assert_eq!(l.assigned[i], best.map(|x| x.1));
        }
        assert_eq!(l.assigned, vec![Some(0), Some(1), Some(0)]);
    }

    #[test]
    fn nsm_loss_examples() {
        // perfect: saturated correct logits, exact gated offsets
        let pred = VotePrediction {
            offsets: vec![[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]],
            feature_offsets: Matrix::zeros(2, 1),
            objectness_logits: vec![[-40.0, 40.0], [40.0, -40.0]],
        };
        let labels = SeedLabels {
            objectness: vec![true, false],
            assigned: vec![Some(0), None],
            offset_target: vec![[1.0, 2.0, 3.0], [0.0; 3]],
        };
        let l = nsm_loss(&pred, &labels, 1.0, 10.0).unwrap();
        assert!(l.total < 1e-12);

        // single fg seed, gate 0.5, offset (2,0,0), target (2,0,0): residual (1,0,0)
        let pred = VotePrediction {
            offsets: vec![[2.0, 0.0, 0.0]],
            feature_offsets: Matrix::zeros(1, 1),
            objectness_logits: vec![[0.0, 0.0]],
        };
        let labels = SeedLabels {
            objectness: vec![true],
            assigned: vec![Some(0)],
            offset_target: vec![[2.0, 0.0, 0.0]],
        };
        let l = nsm_loss(&pred, &labels, 1.0, 10.0).unwrap();
        assert!((l.regression - 0.5 / 3.0).abs() < 1e-15);
        assert!((l.objectness - 2f64.ln()).abs() < 1e-15);
        assert!((l.total - (2f64.ln() + 10.0 * 0.5 / 3.0)).abs() < 1e-14);
        assert!(nsm_loss(&pred, &labels, -1.0, 1.0).is_err());
    }

    #[test]
    fn no_foreground_means_no_regression_loss() {
        let pred = VotePrediction {
            offsets: vec![[2.0, 0.0, 0.0]],
            feature_offsets: Matrix::zeros(1, 1),
            objectness_logits: vec![[0.0, 3.0]],
        };
        let labels = seed_labels(&[[0.0; 3]], &[]);
        let l = nsm_loss(&pred, &labels, 1.0, 10.0).unwrap();
        assert_eq!(l.regression, 0.0);
    }

    #[test]
    fn regression_gradient_matches_finite_differences() {
        let pred = VotePrediction {
            offsets: vec![[0.7, -1.9, 0.2], [2.5, 0.1, -0.4], [0.3, 0.3, 0.3]],
            feature_offsets: Matrix::zeros(3, 1),
            objectness_logits: vec![[0.2, 1.1], [-0.5, 0.4], [1.0, -1.0]],
        };
        let labels = SeedLabels {
            objectness: vec![true, true, false],
            assigned: vec![Some(0), Some(0), None],
            offset_target: vec![[0.1, -0.4, 1.3], [0.2, 0.9, 0.0], [0.0; 3]],
        };
        let analytic: Vec<f64> = vote_reg_grad(&pred, &labels).unwrap().concat();
        let x0: Vec<f64> = pred.offsets.concat();
        let f = |x: &[f64]| {
            let mut p = pred.clone();
            for i in 0..3 {
                p.offsets[i] = [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
            }
            nsm_loss(&p, &labels, 0.0, 1.0).unwrap().regression
        };
        let fd = finite_diff_grad(f, &x0, FD_STEP).unwrap();
        assert!(relative_error(&analytic, &fd) < 1e-5);
    }

    #[test]
    fn histogram_bins() {
        let pred = VotePrediction {
            offsets: vec![[0.0; 3], [0.0; 3]],
            feature_offsets: Matrix::zeros(2, 1),
            objectness_logits: vec![[0.0, 0.0]; 2],
        };
        let labels = seed_labels(&[[0.0; 3], [10.0; 3]], &[Box3D::axis_aligned([0.0; 3], [1.0; 3]).unwrap()]);
        let h = offset_magnitude_histogram(&pred, &labels, false).unwrap();
        assert_eq!(h.foreground[0], 3);
        assert_eq!(h.background[0], 3);
        assert_eq!(h.foreground.iter().sum::<u64>(), 3);
        assert_eq!(OffsetHistogram::bin_of(2.0), HISTOGRAM_BINS);
        assert_eq!(OffsetHistogram::bin_of(0.04), 1);
        assert_eq!(h.to_csv().lines().count(), HISTOGRAM_BINS + 2);
    }

    #[test]
    fn gating_moves_background_mass_to_first_bin() {
        let pred = VotePrediction {
            offsets: vec![[1.5, -1.2, 0.9]],
            feature_offsets: Matrix::zeros(1, 1),
            objectness_logits: vec![[30.0, -30.0]],
        };
        let labels = seed_labels(&[[0.0; 3]], &[]);
        let raw = offset_magnitude_histogram(&pred, &labels, false).unwrap();
        let gated = offset_magnitude_histogram(&pred, &labels, true).unwrap();
        assert_eq!(raw.background[0], 0);
        assert_eq!(gated.background[0], 3);
        assert!(gated.background_mean_abs < raw.background_mean_abs);
    }
}
