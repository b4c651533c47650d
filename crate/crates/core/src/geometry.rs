//! Oriented 3D boxes and point-set primitives.
//!
//! Boxes are yaw-only: a center, full extents, and a heading about +z.
//! Oriented IoU clips the two bird's-eye-view rectangles against each other
//! (Sutherland–Hodgman) and multiplies the shoelace area by the z overlap.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Tolerance on edge-side tests in polygon clipping.
const CLIP_EPS: f64 = 1e-12;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π after rounding
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Yaw-oriented 3D bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct Box3D {
    center: Vec3,
    size: Vec3,
    heading: f64,
}

#[derive(Deserialize)]
struct RawBox {
    center: Vec3,
    size: Vec3,
    #[serde(default)]
    heading: f64,
}

impl TryFrom<RawBox> for Box3D {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        Box3D::new(raw.center, raw.size, raw.heading)
    }
}

impl Box3D {
    /// Builds a box, normalizing the heading. Sizes must be finite and strictly positive.
    pub fn new(center: Vec3, size: Vec3, heading: f64) -> Result<Self> {
        if !center.iter().all(|c| c.is_finite()) || !heading.is_finite() {
            return Err(Error::InvalidBox(format!(
                "non-finite center {center:?} or heading {heading}"
            )));
        }
        if !size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidBox(format!(
                "size components must be positive, got {size:?}"
            )));
        }
        let heading = if heading == 0.0 {
            0.0
        } else {
            normalize_angle(heading)
        };
        Ok(Self {
            center,
            size,
            heading,
        })
    }

    pub fn axis_aligned(center: Vec3, size: Vec3) -> Result<Self> {
        Self::new(center, size, 0.0)
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn size(&self) -> Vec3 {
        self.size
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.heading == 0.0
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn with_heading(&self, heading: f64) -> Self {
        Self {
            heading: normalize_angle(heading),
            ..*self
        }
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            center: add(self.center, t),
            ..*self
        }
    }

    /// Applies a rotation by `yaw` about the z axis through the origin followed
    /// by a translation.
    pub fn rigid_transformed(&self, yaw: f64, t: Vec3) -> Self {
        let c = rotate_z(self.center, yaw);
        Self {
            center: add(c, t),
            size: self.size,
            heading: normalize_angle(self.heading + yaw),
        }
    }

    /// World point to the box's canonical frame (centered, heading removed).
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        rotate_z(sub(p, self.center), -self.heading)
    }

    pub fn to_world(&self, local: Vec3) -> Vec3 {
        add(rotate_z(local, self.heading), self.center)
    }

    /// The eight vertices. Order: the z-low face counterclockwise seen from +z
    /// starting at local (-x, -y), then the z-high face in the same planar order.
    pub fn corners(&self) -> [Vec3; 8] {
        const SIGNS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let h = half(self.size);
        let mut out = [[0.0; 3]; 8];
        for (face, sz) in [-1.0, 1.0].into_iter().enumerate() {
            for (i, (sx, sy)) in SIGNS.iter().enumerate() {
                out[face * 4 + i] = self.to_world([sx * h[0], sy * h[1], sz * h[2]]);
            }
        }
        out
    }

    fn bev_polygon(&self) -> Vec<[f64; 2]> {
        self.corners()[..4].iter().map(|c| [c[0], c[1]]).collect()
    }

    fn z_range(&self) -> (f64, f64) {
        let h = self.size[2] * 0.5;
        (self.center[2] - h, self.center[2] + h)
    }
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn half(a: Vec3) -> Vec3 {
    [a[0] * 0.5, a[1] * 0.5, a[2] * 0.5]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

pub fn rotate_z(p: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

fn interval_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

fn iou_from_intersection(inter: f64, a: &Box3D, b: &Box3D) -> f64 {
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Exact IoU of two axis-aligned boxes. Rejects boxes with a nonzero heading.
pub fn iou_aa(a: &Box3D, b: &Box3D) -> Result<f64> {
    if !a.is_axis_aligned() || !b.is_axis_aligned() {
        return Err(Error::InvalidArgument(
            "iou_aa requires heading == 0 on both boxes; use iou_oriented".into(),
        ));
    }
    let mut inter = 1.0;
    for k in 0..3 {
        let (ha, hb) = (a.size[k] * 0.5, b.size[k] * 0.5);
        inter *= interval_overlap(
            (a.center[k] - ha, a.center[k] + ha),
            (b.center[k] - hb, b.center[k] + hb),
        );
    }
    Ok(iou_from_intersection(inter, a, b))
}

fn cross2(o: [f64; 2], a: [f64; 2], p: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
}

/// Sutherland–Hodgman clip of `subject` by the convex CCW polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross2(a, b, p);
            let dq = cross2(a, b, q);
            let p_in = dp >= -CLIP_EPS;
            let q_in = dq >= -CLIP_EPS;
            if p_in {
                output.push(p);
                if !q_in {
                    output.push(lerp2(p, q, dp / (dp - dq)));
                }
            } else if q_in {
                output.push(lerp2(p, q, dp / (dp - dq)));
            }
        }
    }
    output
}

fn lerp2(p: [f64; 2], q: [f64; 2], t: f64) -> [f64; 2] {
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc.abs() * 0.5
}

/// Area of the intersection of the two boxes' bird's-eye-view rectangles.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    polygon_area(&clip_convex(&a.bev_polygon(), &b.bev_polygon()))
}

/// IoU of two yaw-oriented boxes.
pub fn iou_oriented(a: &Box3D, b: &Box3D) -> f64 {
    let dz = interval_overlap(a.z_range(), b.z_range());
    if dz <= 0.0 {
        return 0.0;
    }
    // cheap reject on circumscribed circles
    let ra = 0.5 * a.size[0].hypot(a.size[1]);
    let rb = 0.5 * b.size[0].hypot(b.size[1]);
    let (dx, dy) = (a.center[0] - b.center[0], a.center[1] - b.center[1]);
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) {
        return 0.0;
    }
    iou_from_intersection(bev_intersection_area(a, b) * dz, a, b)
}

/// Mean Euclidean distance between corresponding corners, minimized over a
/// π flip of `b`'s heading.
pub fn corner_distance(a: &Box3D, b: &Box3D) -> f64 {
    let ca = a.corners();
    let mean_dist = |cb: [Vec3; 8]| -> f64 {
        ca.iter().zip(cb.iter()).map(|(p, q)| norm(sub(*p, *q))).sum::<f64>() / 8.0
    };
    let direct = mean_dist(b.corners());
    let flipped = mean_dist(b.with_heading(b.heading + PI).corners());
    direct.min(flipped)
}

/// Containment test in the box frame; points on the surface count as inside.
pub fn point_in_box(p: Vec3, b: &Box3D) -> bool {
    let local = b.to_local(p);
    let h = half(b.size);
    (0..3).all(|k| local[k].abs() <= h[k])
}

/// A set of 3D positions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub positions: Vec<Vec3>,
}

impl PointSet {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite(format!("point {i}")));
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Farthest point sampling. Starts at `start`; every further pick maximizes the
/// distance to the already selected set, ties going to the lowest index.
pub fn fps(points: &PointSet, n: usize, start: usize) -> Result<Vec<usize>> {
    let m = points.len();
    if n == 0 || n > m {
        return Err(Error::InvalidArgument(format!(
            "fps needs 1 <= n <= m, got n={n}, m={m}"
        )));
    }
    if start >= m {
        return Err(Error::InvalidArgument(format!(
            "fps start index {start} out of range for {m} points"
        )));
    }
    let pos = &points.positions;
    let mut min_d2 = vec![f64::INFINITY; m];
    let mut selected = Vec::with_capacity(n);
    let mut current = start;
    for _ in 0..n {
        selected.push(current);
        min_d2[current] = f64::NEG_INFINITY;
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, d) in min_d2.iter_mut().enumerate() {
            if *d == f64::NEG_INFINITY {
                continue;
            }
            let cand = dist2(pos[i], pos[current]);
            if cand < *d {
                *d = cand;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        current = best;
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    fn cube(c: Vec3, s: f64) -> Box3D {
        Box3D::axis_aligned(c, [s, s, s]).unwrap()
    }

    fn sorted(mut v: Vec<Vec3>) -> Vec<Vec3> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn rejects_nonpositive_size() {
        assert!(Box3D::new([0.0; 3], [1.0, 0.0, 1.0], 0.0).is_err());
        assert!(Box3D::new([0.0; 3], [1.0, -1.0, 1.0], 0.0).is_err());
        assert!(Box3D::new([f64::NAN, 0.0, 0.0], [1.0; 3], 0.0).is_err());
    }

    #[test]
    fn heading_is_normalized() {
        let b = Box3D::new([0.0; 3], [1.0; 3], 3.0 * PI).unwrap();
        assert!((b.heading() - PI).abs() < 1e-12);
        let b = Box3D::new([0.0; 3], [1.0; 3], -PI).unwrap();
        assert!((b.heading() - PI).abs() < 1e-12);
        let b = Box3D::new([0.0; 3], [1.0; 3], -0.5).unwrap();
        assert_eq!(b.heading(), -0.5);
    }

    #[test]
    fn corners_of_axis_aligned_cube() {
        let b = cube([0.0; 3], 2.0);
        let mut expected = Vec::new();
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    expected.push([sx, sy, sz]);
                }
            }
        }
        assert_eq!(sorted(b.corners().to_vec()), sorted(expected.clone()));
        let shifted = cube([1.0, 0.0, 0.0], 2.0);
        let exp_shifted: Vec<Vec3> = expected.iter().map(|p| add(*p, [1.0, 0.0, 0.0])).collect();
        assert_eq!(sorted(shifted.corners().to_vec()), sorted(exp_shifted));
        // documented order: first four at z-low, counterclockwise
        let c = b.corners();
        assert_eq!(c[0], [-1.0, -1.0, -1.0]);
        assert_eq!(c[1], [1.0, -1.0, -1.0]);
        assert_eq!(c[2], [1.0, 1.0, -1.0]);
        assert_eq!(c[3], [-1.0, 1.0, -1.0]);
        assert_eq!(c[4], [-1.0, -1.0, 1.0]);
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let rotated = Box3D::new([0.0; 3], [2.0, 1.0, 1.0], FRAC_PI_2).unwrap();
        let swapped = Box3D::axis_aligned([0.0; 3], [1.0, 2.0, 1.0]).unwrap();
        let round = |v: Vec<Vec3>| -> Vec<Vec3> {
            sorted(
                v.into_iter()
                    .map(|p| p.map(|x| (x * 1e9).round() / 1e9 + 0.0))
                    .collect(),
            )
        };
        assert_eq!(
            round(rotated.corners().to_vec()),
            round(swapped.corners().to_vec())
        );
    }

    #[test]
    fn iou_aa_examples() {
        let a = cube([0.0; 3], 1.0);
        assert_eq!(iou_aa(&a, &a).unwrap(), 1.0);
        assert_eq!(iou_aa(&a, &cube([2.0, 0.0, 0.0], 1.0)).unwrap(), 0.0);
        let third = iou_aa(&a, &cube([0.5, 0.0, 0.0], 1.0)).unwrap();
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
        let r = a.with_heading(0.1);
        assert!(iou_aa(&a, &r).is_err());
    }

    #[test]
    fn iou_oriented_examples() {
        let a = Box3D::new([0.3, -1.0, 0.5], [1.0, 2.0, 0.7], 0.4).unwrap();
        assert!((iou_oriented(&a, &a) - 1.0).abs() < 1e-12);
        let sq = Box3D::new([0.0; 3], [1.5, 1.5, 1.0], 0.2).unwrap();
        let sq_rot = sq.with_heading(0.2 + FRAC_PI_2);
        assert!((iou_oriented(&sq, &sq_rot) - 1.0).abs() < 1e-12);
        // square vs 45-degree rotation: octagon area 2(sqrt2 - 1)
        let u = cube([0.0; 3], 1.0);
        let u45 = u.with_heading(FRAC_PI_4);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert!((iou_oriented(&u, &u45) - expected).abs() < 1e-12);
        assert!((expected - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn iou_oriented_matches_aa_when_aligned() {
        let a = Box3D::axis_aligned([0.1, 0.2, 0.3], [1.0, 2.0, 1.5]).unwrap();
        let b = Box3D::axis_aligned([0.6, -0.1, 0.0], [1.3, 0.9, 1.0]).unwrap();
        assert!((iou_oriented(&a, &b) - iou_aa(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn corner_distance_examples() {
        let a = cube([0.0; 3], 1.0);
        assert_eq!(corner_distance(&a, &a), 0.0);
        let flipped = a.with_heading(PI);
        assert!(corner_distance(&a, &flipped) < 1e-12);
        let t = a.translated([1.0, 0.0, 0.0]);
        assert!((corner_distance(&a, &t) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_in_box_examples() {
        let b = cube([0.0; 3], 2.0);
        assert!(point_in_box([0.0; 3], &b));
        assert!(point_in_box([0.9, 0.0, 0.0], &b));
        assert!(!point_in_box([1.5, 0.0, 0.0], &b));
        assert!(point_in_box([1.0, 1.0, 1.0], &b));
        let rotated = b.with_heading(FRAC_PI_4);
        assert!(!point_in_box([0.9, 0.9, 0.0], &rotated));
        assert!(point_in_box(rotated.center(), &rotated));
    }

    #[test]
    fn fps_examples() {
        let pts = PointSet::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]]).unwrap();
        assert_eq!(fps(&pts, 2, 0).unwrap(), vec![0, 2]);
        let mut all = fps(&pts, 3, 1).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(fps(&pts, 4, 0).is_err());
        assert!(fps(&pts, 1, 3).is_err());
    }

    #[test]
    fn fps_tie_breaks_to_lowest_index() {
        let pts = PointSet::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(fps(&pts, 2, 0).unwrap(), vec![0, 1]);
    }
}
