//! Deterministic synthetic scenes.
//!
//! A scene holds labeled boxes resting on the floor of an `extent`-sized room
//! centered on the origin in x/y, a point cloud sampled on the box faces plus
//! uniform clutter, seeds drawn from those points with 256-dimensional
//! features, and optionally an oracle [`VotePrediction`].
//!
//! # File format
//!
//! ```json
//! {
//!   "boxes":  [{"center": [x,y,z], "size": [dx,dy,dz], "heading": h, "class": c}],
//!   "points": [[x,y,z], ...],
//!   "seeds":  {"positions": [[x,y,z], ...], "feature_dim": 256,
//!              "features": "<base64>", "objects": [0, null, ...]},
//!   "oracle": {"offsets": [[dx,dy,dz], ...], "feature_offsets": "<base64>",
//!              "objectness_logits": [[background, foreground], ...]}
//! }
//! ```
//!
//! Feature matrices are row-major little-endian `f32` encoded as standard
//! base64. `seeds.objects` names the box each seed was sampled from (`null`
//! for clutter). `oracle` may be absent.
//!
//! # Oracle feature block
//!
//! Seed features leave channels `0..64` at zero. The oracle feature offsets of
//! a foreground seed fill channels `0..41` with a description of its object
//! (see [`layout`]); background offsets leave them at zero and carry noise in
//! the remaining channels instead.

use std::f64::consts::PI;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_box, Box3D, Vec3};
use crate::matching::LabeledBox;
use crate::rng::SeedStream;
use crate::suppression::{suppress_votes_with, FeatureGating, FeaturePointSet, VotePrediction};
use crate::tinynet::Matrix;

/// Channel layout of the oracle object description.
pub mod layout {
    /// One-hot class channels `0..MAX_CLASSES`.
    pub const MAX_CLASSES: usize = 32;
    /// `center + CENTER_OFFSET`, three channels.
    pub const CENTER: usize = 32;
    /// `ln(size) + LOG_SIZE_OFFSET`, three channels.
    pub const LOG_SIZE: usize = 35;
    /// `heading + HEADING_OFFSET`.
    pub const HEADING: usize = 38;
    /// Squared norm of the offset center channels.
    pub const CENTER_SQ: usize = 39;
    /// Constant 1.
    pub const FLAG: usize = 40;
    pub const DIM: usize = 41;
    /// Channels below this index are zero in raw seed features.
    pub const RESERVED: usize = 64;

    pub const CENTER_OFFSET: f64 = 5.0;
    pub const LOG_SIZE_OFFSET: f64 = 4.0;
    pub const HEADING_OFFSET: f64 = 4.0;
}

/// Oracle objectness logits for foreground seeds (gate is exactly 1 in `f64`).
const FOREGROUND_LOGIT: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub num_objects: usize,
    pub num_classes: usize,
    /// Room size; x and y span `[-e/2, e/2]`, z spans `[0, e]`.
    pub extent: Vec3,
    pub size_min: Vec3,
    pub size_max: Vec3,
    /// Random yaw when true, heading 0 otherwise.
    pub oriented: bool,
    pub points_per_object: usize,
    /// Lower bound on surface points per object.
    pub min_points: usize,
    /// Clutter points per cubic meter of room volume.
    pub clutter_density: f64,
    /// Clutter is kept at least this far outside every box.
    pub clutter_margin: f64,
    /// Minimum horizontal gap between object footprints.
    pub object_gap: f64,
    pub num_seeds: usize,
    pub feature_dim: usize,
    pub oracle: bool,
    /// Standard deviation of foreground vote noise (meters).
    pub vote_noise: f64,
    /// Range of background offset magnitudes (meters).
    pub background_offset: [f64; 2],
    /// Range of `Â⁻ − Â⁺` for background seeds.
    pub background_logit_gap: [f64; 2],
    pub placement_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_objects: 5,
            num_classes: 18,
            extent: [8.0, 8.0, 3.0],
            size_min: [0.6, 0.6, 0.6],
            size_max: [1.5, 1.5, 1.2],
            oriented: true,
            points_per_object: 96,
            min_points: 32,
            clutter_density: 0.5,
            clutter_margin: 0.15,
            object_gap: 0.3,
            num_seeds: 1024,
            feature_dim: 256,
            oracle: true,
            vote_noise: 0.005,
            background_offset: [1.0, 2.0],
            background_logit_gap: [3.0, 6.0],
            placement_attempts: 2000,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        for k in 0..3 {
            if !(self.extent[k] > 0.0) || !self.extent[k].is_finite() {
                return bad(format!("extent must be positive, got {:?}", self.extent));
            }
            if !(self.size_min[k] > 0.0) || self.size_min[k] > self.size_max[k] {
                return bad("size range must satisfy 0 < size_min <= size_max".into());
            }
        }
        if self.points_per_object < self.min_points.max(1) {
            return bad(format!(
                "points_per_object ({}) must be at least min_points ({}) and positive",
                self.points_per_object, self.min_points
            ));
        }
        if self.num_seeds == 0 {
            return bad("num_seeds must be positive".into());
        }
        if self.clutter_density < 0.0 || self.clutter_margin < 0.0 || self.object_gap < 0.0 {
            return bad("densities, margins and gaps must be non-negative".into());
        }
        if self.vote_noise < 0.0 || self.background_offset[0] > self.background_offset[1] {
            return bad("vote noise and background offset range are invalid".into());
        }
        if self.background_logit_gap[0] > self.background_logit_gap[1] {
            return bad("background_logit_gap range is reversed".into());
        }
        if self.oracle && self.num_classes > layout::MAX_CLASSES {
            return bad(format!(
                "oracle scenes support at most {} classes",
                layout::MAX_CLASSES
            ));
        }
        if self.feature_dim < layout::RESERVED + 1 {
            return bad(format!("feature_dim must exceed {}", layout::RESERVED));
        }
        Ok(())
    }

    /// Half extents used to normalize box regression.
    pub fn scene_scale(&self) -> Vec3 {
        [self.extent[0] / 2.0, self.extent[1] / 2.0, self.extent[2] / 2.0]
    }

    pub fn clutter_count(&self) -> usize {
        (self.clutter_density * self.extent[0] * self.extent[1] * self.extent[2]).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub boxes: Vec<LabeledBox>,
    pub points: Vec<Vec3>,
    pub seeds: FeaturePointSet,
    /// Box each seed was sampled from; `None` for clutter.
    pub seed_objects: Vec<Option<usize>>,
    pub oracle: Option<VotePrediction>,
}

impl SceneSample {
    pub fn gt_boxes(&self) -> Vec<Box3D> {
        self.boxes.iter().map(|b| b.bbox).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SceneFile {
            boxes: self.boxes.clone(),
            points: self.points.clone(),
            seeds: SeedsFile {
                positions: self.seeds.positions.clone(),
                feature_dim: self.seeds.feature_dim(),
                features: encode_f32(self.seeds.features.as_slice()),
                objects: self.seed_objects.clone(),
            },
            oracle: self.oracle.as_ref().map(|o| OracleFile {
                offsets: o.offsets.clone(),
                feature_offsets: encode_f32(o.feature_offsets.as_slice()),
                objectness_logits: o.objectness_logits.clone(),
            }),
        };
        let value = serde_json::to_value(&file)?;
        Ok(serde_json::to_string_pretty(&value)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text)?;
        let m = file.seeds.positions.len();
        let d = file.seeds.feature_dim;
        let features = Matrix::from_vec(m, d, decode_f32(&file.seeds.features, m * d)?)?;
        let seeds = FeaturePointSet::new(file.seeds.positions, features)?;
        if file.seeds.objects.len() != m {
            return Err(Error::shape("scene seed objects", m, file.seeds.objects.len()));
        }
        if let Some(bad) = file.seeds.objects.iter().flatten().find(|&&o| o >= file.boxes.len()) {
            return Err(Error::Format(format!("seed refers to missing box {bad}")));
        }
        let oracle = match file.oracle {
            None => None,
            Some(o) => {
                let fo = Matrix::from_vec(m, d, decode_f32(&o.feature_offsets, m * d)?)?;
                let pred = VotePrediction {
                    offsets: o.offsets,
                    feature_offsets: fo,
                    objectness_logits: o.objectness_logits,
                };
                pred.check_against(&seeds)?;
                Some(pred)
            }
        };
        Ok(Self {
            boxes: file.boxes,
            points: file.points,
            seeds,
            seed_objects: file.seeds.objects,
            oracle,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    boxes: Vec<LabeledBox>,
    points: Vec<Vec3>,
    seeds: SeedsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedsFile {
    positions: Vec<Vec3>,
    feature_dim: usize,
    features: String,
    objects: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleFile {
    offsets: Vec<Vec3>,
    feature_offsets: String,
    objectness_logits: Vec<[f64; 2]>,
}

pub fn encode_f32(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Format(format!("bad base64 feature block: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(Error::shape("feature block bytes", expected * 4, bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

fn uniform3(rng: &mut ChaCha8Rng, lo: Vec3, hi: Vec3) -> Vec3 {
    [0, 1, 2].map(|k| {
        if hi[k] > lo[k] {
            rng.random_range(lo[k]..hi[k])
        } else {
            lo[k]
        }
    })
}

fn place_objects(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledBox>> {
    let hx = spec.extent[0] / 2.0;
    let hy = spec.extent[1] / 2.0;
    let mut out: Vec<LabeledBox> = Vec::with_capacity(spec.num_objects);
    let mut radii: Vec<f64> = Vec::new();
    let mut attempts = 0;
    while out.len() < spec.num_objects {
        attempts += 1;
        if attempts > spec.placement_attempts {
            return Err(Error::Infeasible(format!(
                "placed {} of {} objects after {} attempts",
                out.len(),
                spec.num_objects,
                spec.placement_attempts
            )));
        }
        let size = uniform3(rng, spec.size_min, spec.size_max);
        if size[2] > spec.extent[2] {
            continue;
        }
        let heading = if spec.oriented {
            rng.random_range(-PI..PI)
        } else {
            0.0
        };
        let radius = 0.5 * (size[0] * size[0] + size[1] * size[1]).sqrt();
        if radius > hx || radius > hy {
            continue;
        }
        let cx = rng.random_range(-hx + radius..=hx - radius);
        let cy = rng.random_range(-hy + radius..=hy - radius);
        let clear = out.iter().zip(&radii).all(|(o, r)| {
            let c = o.bbox.center();
            let d = ((c[0] - cx).powi(2) + (c[1] - cy).powi(2)).sqrt();
            d >= r + radius + spec.object_gap
        });
        if !clear {
            continue;
        }
        let class = rng.random_range(0..spec.num_classes);
        out.push(LabeledBox {
            bbox: Box3D::new([cx, cy, size[2] / 2.0], size, heading)?,
            class,
        });
        radii.push(radius);
    }
    Ok(out)
}

/// Uniform point on the surface of `b`, pulled slightly inward so it is
/// strictly contained.
fn surface_point(b: &Box3D, rng: &mut ChaCha8Rng) -> Vec3 {
    let s = b.size();
    let areas = [s[1] * s[2], s[0] * s[2], s[0] * s[1]];
    let total = 2.0 * (areas[0] + areas[1] + areas[2]);
    let mut pick = rng.random_range(0.0..total);
    let mut axis = 0;
    let mut side = 1.0;
    'outer: for (a, area) in areas.iter().enumerate() {
        for sgn in [-1.0, 1.0] {
            if pick < *area {
                axis = a;
                side = sgn;
                break 'outer;
            }
            pick -= area;
        }
    }
    let mut local = [0.0; 3];
    for (k, l) in local.iter_mut().enumerate() {
        *l = if k == axis {
            side * s[k] / 2.0
        } else {
            rng.random_range(-s[k] / 2.0..s[k] / 2.0)
        };
        *l *= 0.999;
    }
    b.to_world(local)
}

fn near_any_box(p: Vec3, boxes: &[LabeledBox], margin: f64) -> bool {
    boxes.iter().any(|b| {
        let s = b.bbox.size();
        let grown = Box3D::new(
            b.bbox.center(),
            [s[0] + 2.0 * margin, s[1] + 2.0 * margin, s[2] + 2.0 * margin],
            b.bbox.heading(),
        );
        grown.map(|g| point_in_box(p, &g)).unwrap_or(true)
    })
}

/// The oracle object description written into feature channels `0..41`.
pub fn object_descriptor(b: &LabeledBox) -> [f64; layout::DIM] {
    let mut d = [0.0; layout::DIM];
    d[b.class] = 1.0;
    let c = b.bbox.center();
    let s = b.bbox.size();
    let mut sq = 0.0;
    for k in 0..3 {
        let v = round_f32(c[k] + layout::CENTER_OFFSET);
        d[layout::CENTER + k] = v;
        sq += v * v;
        d[layout::LOG_SIZE + k] = round_f32(s[k].ln() + layout::LOG_SIZE_OFFSET);
    }
    d[layout::HEADING] = round_f32(b.bbox.heading() + layout::HEADING_OFFSET);
    d[layout::CENTER_SQ] = round_f32(sq);
    d[layout::FLAG] = 1.0;
    d
}

/// Generates a scene. Identical `(spec, seed)` pairs give identical scenes.
pub fn gen_scene(spec: &SceneSpec, seed: u64) -> Result<SceneSample> {
    spec.validate()?;
    let root = SeedStream::new(seed);
    let mut rng = root.split("objects").rng();
    let boxes = place_objects(spec, &mut rng)?;

    let mut rng = root.split("surface").rng();
    let mut points = Vec::new();
    let mut point_objects = Vec::new();
    for (j, b) in boxes.iter().enumerate() {
        for _ in 0..spec.points_per_object {
            points.push(surface_point(&b.bbox, &mut rng));
            point_objects.push(Some(j));
        }
    }

    let mut rng = root.split("clutter").rng();
    let lo = [-spec.extent[0] / 2.0, -spec.extent[1] / 2.0, 0.0];
    let hi = [spec.extent[0] / 2.0, spec.extent[1] / 2.0, spec.extent[2]];
    let want = spec.clutter_count();
    let mut placed = 0;
    let mut tries = 0usize;
    while placed < want && tries < want * 1000 + 1000 {
        tries += 1;
        let p = uniform3(&mut rng, lo, hi);
        if near_any_box(p, &boxes, spec.clutter_margin) {
            continue;
        }
        points.push(p);
        point_objects.push(None);
        placed += 1;
    }

    let mut rng = root.split("seeds").rng();
    let chosen: Vec<usize> = if points.len() <= spec.num_seeds {
        (0..points.len()).collect()
    } else {
        let mut idx = sample(&mut rng, points.len(), spec.num_seeds).into_vec();
        idx.sort_unstable();
        idx
    };
    let positions: Vec<Vec3> = chosen.iter().map(|&i| points[i]).collect();
    let seed_objects: Vec<Option<usize>> = chosen.iter().map(|&i| point_objects[i]).collect();
    let features = seed_features(spec, &root, &positions, &seed_objects, &boxes);
    let seeds = FeaturePointSet::new(positions, features)?;

    let oracle = if spec.oracle {
        Some(oracle_votes(spec, &root, &seeds, &seed_objects, &boxes)?)
    } else {
        None
    };
    Ok(SceneSample {
        boxes,
        points,
        seeds,
        seed_objects,
        oracle,
    })
}

/// Smooth functions of position plus a per-class offset and small noise,
/// written to channels `64..feature_dim`.
fn seed_features(
    spec: &SceneSpec,
    root: &SeedStream,
    positions: &[Vec3],
    objects: &[Option<usize>],
    boxes: &[LabeledBox],
) -> Matrix {
    let d = spec.feature_dim;
    let free = d - layout::RESERVED;
    let mut rng = root.split("feature-basis").rng();
    let freq: Vec<Vec3> = (0..free)
        .map(|_| [0; 3].map(|_: i32| rng.random_range(-2.0..2.0)))
        .collect();
    let phase: Vec<f64> = (0..free).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let salt_dist = Normal::new(0.0, 0.5).expect("valid normal");
    // row `num_classes` is the background salt
    let salt: Vec<Vec<f64>> = (0..=spec.num_classes)
        .map(|_| (0..free).map(|_| salt_dist.sample(&mut rng)).collect())
        .collect();
    let noise = Normal::new(0.0, 0.05).expect("valid normal");
    let mut rng = root.split("feature-noise").rng();
    let mut m = Matrix::zeros(positions.len(), d);
    for (i, p) in positions.iter().enumerate() {
        let class = objects[i].map_or(spec.num_classes, |o| boxes[o].class);
        let row = m.row_mut(i);
        for ch in 0..free {
            let w = freq[ch];
            let smooth = (w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + phase[ch]).sin();
            let v = smooth + salt[class][ch] + noise.sample(&mut rng);
            row[layout::RESERVED + ch] = round_f32(v);
        }
    }
    m
}

fn oracle_votes(
    spec: &SceneSpec,
    root: &SeedStream,
    seeds: &FeaturePointSet,
    objects: &[Option<usize>],
    boxes: &[LabeledBox],
) -> Result<VotePrediction> {
    let mut rng = root.split("oracle").rng();
    let noise = Normal::new(0.0, spec.vote_noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let feat_noise = Normal::new(0.0, 1.0).expect("valid normal");
    let descriptors: Vec<_> = boxes.iter().map(object_descriptor).collect();
    let d = spec.feature_dim;
    let m = seeds.len();
    let mut offsets = Vec::with_capacity(m);
    let mut feature_offsets = Matrix::zeros(m, d);
    let mut logits = Vec::with_capacity(m);
    for i in 0..m {
        let p = seeds.positions[i];
        match objects[i] {
            Some(o) => {
                let c = boxes[o].bbox.center();
                let off = [0, 1, 2].map(|k| {
                    let n = if spec.vote_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    c[k] - p[k] + n
                });
                offsets.push(off);
                feature_offsets.row_mut(i)[..layout::DIM].copy_from_slice(&descriptors[o]);
                logits.push([-FOREGROUND_LOGIT, FOREGROUND_LOGIT]);
            }
            None => {
                let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                let mag = rng.random_range(spec.background_offset[0]..=spec.background_offset[1]);
                offsets.push(dir.map(|v| v * mag));
                let row = feature_offsets.row_mut(i);
                for v in &mut row[layout::DIM..] {
                    *v = round_f32(feat_noise.sample(&mut rng));
                }
                let pos = rng.random_range(-1.0..1.0);
                let gap = rng.random_range(spec.background_logit_gap[0]..=spec.background_logit_gap[1]);
                logits.push([pos + gap, pos]);
            }
        }
    }
    Ok(VotePrediction {
        offsets,
        feature_offsets,
        objectness_logits: logits,
    })
}

/// Seeds followed by their suppressed votes: `2m` feature points.
pub fn derive_feature_points(scene: &SceneSample, pred: &VotePrediction) -> Result<FeaturePointSet> {
    derive_feature_points_with(scene, pred, FeatureGating::Gated)
}

pub fn derive_feature_points_with(
    scene: &SceneSample,
    pred: &VotePrediction,
    gating: FeatureGating,
) -> Result<FeaturePointSet> {
    let votes = suppress_votes_with(&scene.seeds, pred, gating)?;
    scene.seeds.concat(&votes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suppression::seed_labels;

    fn small() -> SceneSpec {
        SceneSpec {
            num_objects: 3,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn empty_spec_gives_clutter_only() {
        let s = gen_scene(
            &SceneSpec {
                num_objects: 0,
                ..SceneSpec::default()
            },
            1,
        )
        .unwrap();
        assert!(s.boxes.is_empty());
        assert!(!s.seeds.is_empty());
        assert!(s.seed_objects.iter().all(Option::is_none));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_scene(&small(), 7).unwrap().to_json().unwrap();
        let b = gen_scene(&small(), 7).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = gen_scene(&small(), 8).unwrap().to_json().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_object_holds_min_points() {
        let spec = SceneSpec {
            num_objects: 5,
            ..SceneSpec::default()
        };
        let s = gen_scene(&spec, 3).unwrap();
        assert_eq!(s.boxes.len(), 5);
        for b in &s.boxes {
            let n = s.points.iter().filter(|p| point_in_box(**p, &b.bbox)).count();
            assert!(n >= spec.min_points, "{n}");
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = gen_scene(&small(), 11).unwrap();
        let back = SceneSample::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn labels_agree_with_bookkeeping() {
        for seed in 0..5 {
            let s = gen_scene(&small(), seed).unwrap();
            let labels = seed_labels(&s.seeds.positions, &s.gt_boxes());
            let fg: Vec<bool> = s.seed_objects.iter().map(Option::is_some).collect();
            assert_eq!(labels.objectness, fg);
            assert_eq!(labels.assigned, s.seed_objects);
        }
    }

    #[test]
    fn feature_points_are_seeds_then_votes() {
        let s = gen_scene(&small(), 2).unwrap();
        let pred = s.oracle.clone().unwrap();
        let fp = derive_feature_points(&s, &pred).unwrap();
        let m = s.seeds.len();
        assert_eq!(fp.len(), 2 * m);
        assert_eq!(&fp.positions[..m], &s.seeds.positions[..]);
    }

    #[test]
    fn zero_offsets_put_votes_on_seeds() {
        let s = gen_scene(&small(), 2).unwrap();
        let m = s.seeds.len();
        let pred = VotePrediction {
            offsets: vec![[0.0; 3]; m],
            feature_offsets: Matrix::zeros(m, s.seeds.feature_dim()),
            objectness_logits: vec![[0.0, 0.0]; m],
        };
        let fp = derive_feature_points(&s, &pred).unwrap();
        assert_eq!(&fp.positions[m..], &s.seeds.positions[..]);
    }

    #[test]
    fn oracle_votes_land_in_their_boxes() {
        let s = gen_scene(&small(), 4).unwrap();
        let pred = s.oracle.clone().unwrap();
        let fp = derive_feature_points(&s, &pred).unwrap();
        let m = s.seeds.len();
        let (mut fg, mut inside) = (0, 0);
        for (i, o) in s.seed_objects.iter().enumerate() {
            if let Some(o) = o {
                fg += 1;
                if point_in_box(fp.positions[m + i], &s.boxes[*o].bbox) {
                    inside += 1;
                }
            }
        }
        assert!(fg > 0);
        assert!(inside as f64 >= 0.9 * fg as f64);
    }

    #[test]
    fn infeasible_spec_is_reported() {
        let spec = SceneSpec {
            num_objects: 200,
            placement_attempts: 500,
            ..SceneSpec::default()
        };
        assert!(matches!(gen_scene(&spec, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn base64_block_round_trips() {
        let v = vec![1.5, -2.25, 0.0, 1e-3];
        let enc = encode_f32(&v);
        let back = decode_f32(&enc, 4).unwrap();
        assert_eq!(back[..3], v[..3]);
        assert!(decode_f32(&enc, 5).is_err());
    }
}
