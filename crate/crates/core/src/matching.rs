//! Set-prediction machinery: per-pair losses, the matching cost matrix,
//! optimal assignment, and loss aggregation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::geometry::{corner_distance, iou_aa, iou_oriented, normalize_angle, Box3D, Vec3};
use crate::suppression::softplus;
use crate::tinynet::{sigmoid, Matrix, Prediction};

/// A ground-truth box with its class index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(flatten)]
    pub bbox: Box3D,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub cls: f64,
    pub l1: f64,
    pub iou: f64,
    pub cor: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            cls: 1.5,
            l1: 0.45,
            iou: 2.0,
            cor: 0.25,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.cls,
            self.l1,
            self.iou,
            self.cor,
            self.focal_alpha,
            self.focal_gamma,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "cost weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Sigmoid focal loss summed over classes. `target = None` is background
/// (all-zero target vector). Positives are weighted by `α`, negatives by `1 − α`.
pub fn focal_loss(logits: &[f64], target: Option<usize>, alpha: f64, gamma: f64) -> f64 {
    logits
        .iter()
        .enumerate()
        .map(|(c, &x)| {
            let positive = target == Some(c);
            let (ln_q, q, a) = if positive {
                (-softplus(-x), sigmoid(x), alpha)
            } else {
                (-softplus(x), sigmoid(-x), 1.0 - alpha)
            };
            -a * (1.0 - q).powf(gamma) * ln_q
        })
        .sum()
}

/// Gradient of [`focal_loss`] with respect to the logits.
pub fn focal_loss_grad(logits: &[f64], target: Option<usize>, alpha: f64, gamma: f64) -> Vec<f64> {
    logits
        .iter()
        .enumerate()
        .map(|(c, &x)| {
            let positive = target == Some(c);
            let (ln_q, q, a, s) = if positive {
                (-softplus(-x), sigmoid(x), alpha, 1.0)
            } else {
                (-softplus(x), sigmoid(-x), 1.0 - alpha, -1.0)
            };
            let one_m = 1.0 - q;
            // d/dx of −a (1−q)^γ ln q with dq/dx = s q (1−q)
            -a * s * (one_m.powf(gamma + 1.0) - gamma * q * one_m.powf(gamma) * ln_q)
        })
        .collect()
}

/// Box as `[cx, cy, cz, sx, sy, sz, heading]`.
pub fn box_params(b: &Box3D) -> [f64; 7] {
    let (c, s) = (b.center(), b.size());
    [c[0], c[1], c[2], s[0], s[1], s[2], b.heading()]
}

pub fn box_from_params(p: &[f64]) -> Result<Box3D> {
    Box3D::new([p[0], p[1], p[2]], [p[3], p[4], p[5]], p[6])
}

fn l1_residuals(pred: &Box3D, gt: &Box3D, scale: Vec3) -> [f64; 7] {
    let (pc, ps, gc, gs) = (pred.center(), pred.size(), gt.center(), gt.size());
    let mut r = [0.0; 7];
    for k in 0..3 {
        r[k] = (pc[k] - gc[k]) / scale[k];
        r[3 + k] = (ps[k] - gs[k]) / scale[k];
    }
    r[6] = normalize_angle(pred.heading() - gt.heading()) / PI;
    r
}

/// Mean absolute difference of the normalized 7-tuple
/// `(center/scale, size/scale, heading/π)`; heading difference wrapped first.
pub fn l1_box_loss(pred: &Box3D, gt: &Box3D, scene_scale: Vec3) -> f64 {
    l1_residuals(pred, gt, scene_scale)
        .iter()
        .map(|r| r.abs())
        .sum::<f64>()
        / 7.0
}

/// Gradient of [`l1_box_loss`] with respect to the predicted box parameters.
pub fn l1_box_loss_grad(pred: &Box3D, gt: &Box3D, scene_scale: Vec3) -> [f64; 7] {
    let r = l1_residuals(pred, gt, scene_scale);
    let mut g = [0.0; 7];
    for k in 0..3 {
        g[k] = r[k].signum() / (7.0 * scene_scale[k]);
        g[3 + k] = r[3 + k].signum() / (7.0 * scene_scale[k]);
    }
    g[6] = r[6].signum() / (7.0 * PI);
    g
}

/// `1 − IoU`, exact rotated IoU when either box has a heading.
pub fn iou_loss(pred: &Box3D, gt: &Box3D) -> f64 {
    let iou = if pred.is_axis_aligned() && gt.is_axis_aligned() {
        iou_aa(pred, gt).unwrap_or_else(|_| iou_oriented(pred, gt))
    } else {
        iou_oriented(pred, gt)
    };
    1.0 - iou
}

/// Gradient of the axis-aligned [`iou_loss`] with respect to the predicted
/// `[cx, cy, cz, sx, sy, sz]`. Zero when the boxes do not overlap.
pub fn iou_loss_aa_grad(pred: &Box3D, gt: &Box3D) -> Result<[f64; 6]> {
    if !pred.is_axis_aligned() || !gt.is_axis_aligned() {
        return Err(Error::InvalidArgument("axis-aligned IoU gradient needs heading 0".into()));
    }
    let (pc, ps, gc, gs) = (pred.center(), pred.size(), gt.center(), gt.size());
    let mut overlap = [0.0; 3];
    // d overlap_k / d center_k and d overlap_k / d size_k
    let mut d_c = [0.0; 3];
    let mut d_s = [0.0; 3];
    for k in 0..3 {
        let (plo, phi) = (pc[k] - ps[k] / 2.0, pc[k] + ps[k] / 2.0);
        let (glo, ghi) = (gc[k] - gs[k] / 2.0, gc[k] + gs[k] / 2.0);
        let hi = phi.min(ghi);
        let lo = plo.max(glo);
        overlap[k] = hi - lo;
        if overlap[k] <= 0.0 {
            return Ok([0.0; 6]);
        }
        let (dhi_c, dhi_s) = if phi < ghi { (1.0, 0.5) } else { (0.0, 0.0) };
        let (dlo_c, dlo_s) = if plo > glo { (1.0, -0.5) } else { (0.0, 0.0) };
        d_c[k] = dhi_c - dlo_c;
        d_s[k] = dhi_s - dlo_s;
    }
    let inter = overlap[0] * overlap[1] * overlap[2];
    let vp = ps[0] * ps[1] * ps[2];
    let union = vp + gs[0] * gs[1] * gs[2] - inter;
    let mut g = [0.0; 6];
    for k in 0..3 {
        let others = inter / overlap[k];
        let di_c = d_c[k] * others;
        let di_s = d_s[k] * others;
        let dv_s = vp / ps[k];
        // IoU = I / U, U = Vp + Vg − I
        let diou_c = (di_c * union + inter * di_c) / (union * union);
        let diou_s = (di_s * union - inter * (dv_s - di_s)) / (union * union);
        g[k] = -diou_c;
        g[3 + k] = -diou_s;
    }
    Ok(g)
}

/// Per-pair classification, L1 and IoU terms (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTerms {
    pub cls: f64,
    pub l1: f64,
    pub iou: f64,
}

impl PairTerms {
    pub fn compute(pred: &Prediction, gt: &LabeledBox, w: &CostWeights, scene_scale: Vec3) -> Self {
        Self {
            cls: focal_loss(&pred.logits, Some(gt.class), w.focal_alpha, w.focal_gamma),
            l1: l1_box_loss(&pred.bbox, &gt.bbox, scene_scale),
            iou: iou_loss(&pred.bbox, &gt.bbox),
        }
    }

    pub fn weighted(&self, w: &CostWeights) -> f64 {
        w.cls * self.cls + w.l1 * self.l1 + w.iou * self.iou
    }
}

/// `K × n` matching cost, entry `(i, j) = w_cls·focal + w_L1·L1 + w_iou·(1 − IoU)`.
pub fn match_cost_matrix(
    preds: &[Prediction],
    gts: &[LabeledBox],
    w: &CostWeights,
    scene_scale: Vec3,
) -> Matrix {
    let mut m = Matrix::zeros(preds.len(), gts.len());
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            m[(i, j)] = PairTerms::compute(p, g, w, scene_scale).weighted(w);
        }
    }
    m
}

/// Optimal assignment of predictions (rows) to ground truths (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(prediction, ground truth)` pairs sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
    pub pair_costs: Vec<f64>,
    /// Filled by [`match_predictions`]; empty for a bare cost matrix.
    pub pair_terms: Vec<PairTerms>,
    pub total_cost: f64,
}

impl MatchResult {
    pub fn gt_for_prediction(&self, i: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == i).map(|p| p.1)
    }
}

/// Min-cost assignment of every row of `cost` (rows ≤ cols) by the
/// shortest-augmenting-path Hungarian method; returns the column per row.
fn solve_rows(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cols;
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn assignment_cost(cost: &[Vec<f64>], cols_for_rows: &[usize]) -> f64 {
    cols_for_rows.iter().enumerate().map(|(r, &c)| cost[r][c]).sum()
}

fn optimum_of(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    let sub: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
        .collect();
    let a = solve_rows(&sub, cols.len());
    assignment_cost(&sub, &a)
}

/// Among all optimal assignments, the one whose column vector (in row order)
/// is lexicographically smallest.
fn lexicographic_optimum(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    let first = solve_rows(cost, cols);
    let opt = assignment_cost(cost, &first);
    let scale = cost
        .iter()
        .flatten()
        .fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale * n as f64;

    let mut fixed = Vec::with_capacity(n);
    let mut fixed_cost = 0.0;
    let mut free_cols: Vec<usize> = (0..cols).collect();
    for r in 0..n {
        let rest_rows: Vec<usize> = (r + 1..n).collect();
        let mut chosen = None;
        for (pos, &c) in free_cols.iter().enumerate() {
            let head = fixed_cost + cost[r][c];
            if head > opt + tol {
                continue;
            }
            let remaining: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            let total = head + optimum_of(cost, &rest_rows, &remaining);
            if total <= opt + tol {
                chosen = Some((pos, c));
                break;
            }
            // the solver's own choice is always feasible
            if c == first[r] && fixed.iter().enumerate().all(|(i, &f)| first[i] == f) {
                chosen = Some((pos, c));
                break;
            }
        }
        let (pos, c) = chosen.unwrap_or_else(|| {
            let pos = free_cols.iter().position(|&x| x == first[r]).unwrap_or(0);
            (pos, free_cols[pos])
        });
        fixed.push(c);
        fixed_cost += cost[r][c];
        free_cols.remove(pos);
    }
    fixed
}

/// Globally optimal injective assignment between the `K` rows (predictions)
/// and `n` columns (ground truths) of `cost`; `min(K, n)` pairs.
pub fn hungarian(cost: &Matrix) -> Result<MatchResult> {
    if !cost.is_finite() {
        return Err(Error::NonFinite("matching cost matrix".into()));
    }
    let (k, n) = (cost.rows(), cost.cols());
    let mut pairs: Vec<(usize, usize)> = if n == 0 || k == 0 {
        Vec::new()
    } else if n <= k {
        // one row per ground truth
        let t: Vec<Vec<f64>> = (0..n).map(|j| (0..k).map(|i| cost[(i, j)]).collect()).collect();
        lexicographic_optimum(&t, k)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect()
    } else {
        let rows: Vec<Vec<f64>> = (0..k).map(|i| cost.row(i).to_vec()).collect();
        lexicographic_optimum(&rows, n).into_iter().enumerate().collect()
    };
    pairs.sort_unstable();
    let matched: Vec<bool> = {
        let mut m = vec![false; k];
        for p in &pairs {
            m[p.0] = true;
        }
        m
    };
    let unmatched = (0..k).filter(|i| !matched[*i]).collect();
    let pair_costs: Vec<f64> = pairs.iter().map(|&(i, j)| cost[(i, j)]).collect();
    let total_cost = pair_costs.iter().sum();
    Ok(MatchResult {
        pairs,
        unmatched,
        pair_costs,
        pair_terms: Vec::new(),
        total_cost,
    })
}

/// Builds the cost matrix, solves it, and records the per-pair terms.
pub fn match_predictions(
    preds: &[Prediction],
    gts: &[LabeledBox],
    w: &CostWeights,
    scene_scale: Vec3,
) -> Result<MatchResult> {
    let cost = match_cost_matrix(preds, gts, w, scene_scale);
    let mut m = hungarian(&cost)?;
    m.pair_terms = m
        .pairs
        .iter()
        .map(|&(i, j)| PairTerms::compute(&preds[i], &gts[j], w, scene_scale))
        .collect();
    Ok(m)
}

/// Divisor applied to the summed set loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNormalization {
    /// `max(n, 1)` ground truths.
    #[default]
    NumGt,
    NumPredictions,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SetLoss {
    pub cls: f64,
    pub l1: f64,
    pub iou: f64,
    pub cor: f64,
    /// Weighted, normalized total.
    pub total: f64,
}

/// Matched pairs contribute every weighted term plus the corner term;
/// unmatched predictions contribute weighted background focal loss.
pub fn set_loss(
    preds: &[Prediction],
    gts: &[LabeledBox],
    matched: &MatchResult,
    w: &CostWeights,
    scene_scale: Vec3,
    normalization: LossNormalization,
) -> Result<SetLoss> {
    let mut acc = SetLoss::default();
    for &(i, j) in &matched.pairs {
        let p = preds
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("match refers to prediction {i}")))?;
        let g = gts
            .get(j)
            .ok_or_else(|| Error::InvalidArgument(format!("match refers to ground truth {j}")))?;
        let t = PairTerms::compute(p, g, w, scene_scale);
        acc.cls += t.cls;
        acc.l1 += t.l1;
        acc.iou += t.iou;
        acc.cor += corner_distance(&p.bbox, &g.bbox);
    }
    ensure_len("set_loss pairs", gts.len().min(preds.len()), matched.pairs.len())?;
    for &i in &matched.unmatched {
        let p = preds
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("match refers to prediction {i}")))?;
        acc.cls += focal_loss(&p.logits, None, w.focal_alpha, w.focal_gamma);
    }
    let denom = match normalization {
        LossNormalization::NumGt => gts.len().max(1) as f64,
        LossNormalization::NumPredictions => preds.len().max(1) as f64,
        LossNormalization::None => 1.0,
    };
    acc.cls /= denom;
    acc.l1 /= denom;
    acc.iou /= denom;
    acc.cor /= denom;
    acc.total = w.cls * acc.cls + w.l1 * acc.l1 + w.iou * acc.iou + w.cor * acc.cor;
    Ok(acc)
}

/// `L_votenet + L_nsm + Σ L_prm` over refinement stages.
pub fn total_loss(votenet: f64, nsm: f64, prm_per_stage: &[f64]) -> f64 {
    votenet + nsm + prm_per_stage.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::{finite_diff_grad, relative_error, FD_STEP};

    fn pred(logits: Vec<f64>, b: Box3D) -> Prediction {
        Prediction { logits, bbox: b }
    }

    fn cube(c: Vec3) -> Box3D {
        Box3D::axis_aligned(c, [1.0; 3]).unwrap()
    }

    #[test]
    fn focal_reference_value() {
        // p = 0.9 → logit ln 9
        let v = focal_loss(&[9f64.ln()], Some(0), 0.25, 2.0);
        let expect = 0.25 * 0.01 * -(0.9f64.ln());
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 2.634e-4).abs() < 1e-7);
    }

    #[test]
    fn focal_without_modulation_is_cross_entropy() {
        let logits = [0.3, -1.2, 2.0];
        // α = 1 weights positives fully and negatives by zero
        let pos_only = focal_loss(&logits, Some(2), 1.0, 0.0);
        assert!((pos_only - softplus(-2.0)).abs() < 1e-15);
        // α = ½ weights every term by ½
        let half = focal_loss(&logits, Some(2), 0.5, 0.0);
        let bce = softplus(0.3) + softplus(-1.2) + softplus(-2.0);
        assert!((half - 0.5 * bce).abs() < 1e-15);
    }

    #[test]
    fn focal_saturates_to_zero() {
        assert!(focal_loss(&[40.0, -40.0], Some(0), 0.25, 2.0) < 1e-30);
        assert!(focal_loss(&[-40.0, -40.0], None, 0.25, 2.0) < 1e-30);
    }

    #[test]
    fn focal_gradient() {
        let logits = [0.7, -2.1, 1.4, 0.05];
        for target in [Some(2), None] {
            let g = focal_loss_grad(&logits, target, 0.25, 2.0);
            let fd = finite_diff_grad(|x| focal_loss(x, target, 0.25, 2.0), &logits, FD_STEP).unwrap();
            assert!(relative_error(&g, &fd) < 1e-7);
        }
    }

    #[test]
    fn l1_examples() {
        let a = Box3D::new([1.0, 2.0, 0.5], [1.0, 2.0, 0.8], 0.4).unwrap();
        assert_eq!(l1_box_loss(&a, &a, [4.0, 4.0, 1.5]), 0.0);
        let scale = [4.0, 4.0, 1.5];
        let b = a.translated(scale);
        // each center axis contributes exactly 1 before the mean over 7
        assert!((l1_box_loss(&a, &b, scale) - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn l1_random_pair_matches_formula() {
        let a = Box3D::new([0.3, -1.1, 0.9], [1.2, 0.7, 0.9], 3.0).unwrap();
        let b = Box3D::new([-0.2, 0.4, 1.1], [0.8, 1.0, 1.3], -3.0).unwrap();
        let s = [4.0, 4.0, 1.5];
        let dh = normalize_angle(3.0 - (-3.0));
        let hand = ((0.5 / 4.0) + (1.5 / 4.0) + (0.2 / 1.5) + (0.4 / 4.0) + (0.3 / 4.0) + (0.4 / 1.5)
            + dh.abs() / PI)
            / 7.0;
        assert!((l1_box_loss(&a, &b, s) - hand).abs() < 1e-12);
    }

    #[test]
    fn l1_gradient() {
        let a = Box3D::new([0.3, -1.1, 0.9], [1.2, 0.7, 0.9], 0.5).unwrap();
        let b = Box3D::new([-0.2, 0.4, 1.1], [0.8, 1.0, 1.3], -0.3).unwrap();
        let s = [4.0, 4.0, 1.5];
        let g = l1_box_loss_grad(&a, &b, s);
        let fd = finite_diff_grad(
            |x| l1_box_loss(&box_from_params(x).unwrap(), &b, s),
            &box_params(&a),
            FD_STEP,
        )
        .unwrap();
        assert!(relative_error(&g, &fd) < 1e-8);
    }

    #[test]
    fn iou_loss_examples() {
        let a = cube([0.0; 3]);
        assert_eq!(iou_loss(&a, &a), 0.0);
        assert_eq!(iou_loss(&a, &cube([3.0, 0.0, 0.0])), 1.0);
        assert!((iou_loss(&a, &cube([0.5, 0.0, 0.0])) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_gradient() {
        let a = Box3D::axis_aligned([0.1, 0.2, -0.1], [1.1, 0.9, 1.3]).unwrap();
        let b = Box3D::axis_aligned([0.5, -0.1, 0.2], [1.0, 1.2, 0.8]).unwrap();
        let g = iou_loss_aa_grad(&a, &b).unwrap();
        let p = box_params(&a);
        let fd = finite_diff_grad(
            |x| {
                let bx = Box3D::axis_aligned([x[0], x[1], x[2]], [x[3], x[4], x[5]]).unwrap();
                iou_loss(&bx, &b)
            },
            &p[..6],
            FD_STEP,
        )
        .unwrap();
        assert!(relative_error(&g, &fd) < 1e-6, "{g:?} vs {fd:?}");
    }

    #[test]
    fn zero_weights_give_zero_costs() {
        let w = CostWeights {
            cls: 0.0,
            l1: 0.0,
            iou: 0.0,
            ..CostWeights::default()
        };
        let preds = vec![pred(vec![0.1, 0.2], cube([0.0; 3])); 3];
        let gts = vec![
            LabeledBox {
                bbox: cube([1.0, 0.0, 0.0]),
                class: 1
            };
            2
        ];
        let m = match_cost_matrix(&preds, &gts, &w, [4.0, 4.0, 1.5]);
        assert_eq!((m.rows(), m.cols()), (3, 2));
        assert!(m.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(match_cost_matrix(&preds, &[], &w, [1.0; 3]).cols(), 0);
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let b = cube([1.0, 1.0, 0.5]);
        let preds = vec![pred(vec![-40.0, 40.0], b)];
        let gts = vec![LabeledBox { bbox: b, class: 1 }];
        let m = match_cost_matrix(&preds, &gts, &CostWeights::default(), [4.0, 4.0, 1.5]);
        assert!(m[(0, 0)] < 1e-12);
    }

    #[test]
    fn hungarian_small_cases() {
        let id = Matrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let r = hungarian(&id).unwrap();
        assert_eq!(r.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(r.total_cost, 0.0);

        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let r = hungarian(&m).unwrap();
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost, 2.0);

        let bad = Matrix::from_rows(&[vec![f64::NAN]]).unwrap();
        assert!(hungarian(&bad).is_err());
    }

    #[test]
    fn hungarian_rectangular_and_empty() {
        let m = Matrix::from_rows(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        let r = hungarian(&m).unwrap();
        assert_eq!(r.pairs, vec![(1, 0)]);
        assert_eq!(r.unmatched, vec![0, 2]);

        let wide = Matrix::from_rows(&[vec![5.0, 1.0, 3.0]]).unwrap();
        assert_eq!(hungarian(&wide).unwrap().pairs, vec![(0, 1)]);

        let empty = Matrix::zeros(4, 0);
        let r = hungarian(&empty).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched, vec![0, 1, 2, 3]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let flat = Matrix::from_rows(&[vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]]).unwrap();
        assert_eq!(hungarian(&flat).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
        // two optimal assignments: {0→1, 1→0} and {0→0, 1→1}; smallest prediction for gt 0 wins
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 9.0], vec![0.0, 0.0, 9.0], vec![9.0, 9.0, 0.0]]).unwrap();
        assert_eq!(hungarian(&m).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
        // more predictions than ground truths, all tied
        let tall = Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let r = hungarian(&tall).unwrap();
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(r.unmatched, vec![2]);
    }

    #[test]
    fn set_loss_hand_evaluation() {
        let w = CostWeights::default();
        let s = [4.0, 4.0, 1.5];
        let gt = LabeledBox {
            bbox: cube([0.0; 3]),
            class: 0,
        };
        let near = pred(vec![1.0, -1.0], cube([0.5, 0.0, 0.0]));
        let far = pred(vec![0.5, 0.2], cube([3.0, 0.0, 0.0]));
        let preds = vec![far.clone(), near.clone()];
        let m = match_predictions(&preds, &[gt], &w, s).unwrap();
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched, vec![0]);

        let focal_pos = focal_loss(&near.logits, Some(0), 0.25, 2.0);
        let l1 = 0.5 / 4.0 / 7.0;
        let iou = 2.0 / 3.0;
        let cor = 0.5;
        let focal_bg = focal_loss(&far.logits, None, 0.25, 2.0);
        let hand = 1.5 * focal_pos + 0.45 * l1 + 2.0 * iou + 0.25 * cor + 1.5 * focal_bg;
        let got = set_loss(&preds, &[gt], &m, &w, s, LossNormalization::NumGt).unwrap();
        assert!((got.total - hand).abs() < 1e-12);
    }

    #[test]
    fn set_loss_without_ground_truth_is_background_focal() {
        let w = CostWeights::default();
        let preds = vec![pred(vec![0.3, -0.2], cube([0.0; 3])), pred(vec![-1.0, 2.0], cube([1.0; 3]))];
        let m = match_predictions(&preds, &[], &w, [1.0; 3]).unwrap();
        let got = set_loss(&preds, &[], &m, &w, [1.0; 3], LossNormalization::NumGt).unwrap();
        let expect: f64 = preds
            .iter()
            .map(|p| 1.5 * focal_loss(&p.logits, None, 0.25, 2.0))
            .sum();
        assert!((got.total - expect).abs() < 1e-15);
    }

    #[test]
    fn perfect_set_prediction_has_zero_loss() {
        let w = CostWeights::default();
        let b = cube([1.0, 0.0, 0.5]);
        let gts = [LabeledBox { bbox: b, class: 1 }];
        let preds = vec![pred(vec![-50.0, 50.0], b), pred(vec![-50.0, -50.0], cube([3.0; 3]))];
        let m = match_predictions(&preds, &gts, &w, [4.0, 4.0, 1.5]).unwrap();
        let l = set_loss(&preds, &gts, &m, &w, [4.0, 4.0, 1.5], LossNormalization::NumGt).unwrap();
        assert!(l.total < 1e-15);
    }

    #[test]
    fn total_loss_sums() {
        assert_eq!(total_loss(0.0, 0.0, &[]), 0.0);
        assert_eq!(total_loss(1.0, 2.0, &[3.0, 4.0, 5.0]), 15.0);
    }
}
