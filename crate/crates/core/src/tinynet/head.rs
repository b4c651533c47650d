use serde::{Deserialize, Serialize};

use super::{mlp_forward, sigmoid, DenseParams, Matrix};
use crate::error::{Error, Result};
use crate::geometry::Box3D;

/// Center (3) + log-size (3) + heading (1).
pub const BOX_DELTA_DIM: usize = 7;

/// Log-size deltas are clamped to this magnitude so decoded sizes stay finite and positive.
const MAX_LOG_SCALE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDeltas {
    pub center: [f64; 3],
    pub log_size: [f64; 3],
    pub heading: f64,
}

impl BoxDeltas {
    pub fn from_slice(d: &[f64]) -> Self {
        Self {
            center: [d[0], d[1], d[2]],
            log_size: [d[3], d[4], d[5]],
            heading: d[6],
        }
    }
}

/// `center += δc ⊙ size_in`, `size *= exp(δs)`, `heading += δh`.
pub fn decode_box(input: &Box3D, d: &BoxDeltas) -> Result<Box3D> {
    let c = input.center();
    let s = input.size();
    let mut center = [0.0; 3];
    let mut size = [0.0; 3];
    for k in 0..3 {
        center[k] = c[k] + d.center[k] * s[k];
        size[k] = s[k] * d.log_size[k].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    }
    if d.heading == 0.0 {
        return Box3D::new(center, size, input.heading());
    }
    Box3D::new(center, size, input.heading() + d.heading)
}

/// Per-proposal class logits and decoded box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub bbox: Box3D,
}

impl Prediction {
    /// Highest per-class sigmoid probability and its class.
    pub fn best_class(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (c, &l) in self.logits.iter().enumerate() {
            if l > best.1 {
                best = (c, l);
            }
        }
        (best.0, sigmoid(best.1))
    }

    pub fn score(&self) -> f64 {
        self.best_class().1
    }
}

/// Runs the prediction MLP on each feature row and decodes the box deltas
/// against the matching input proposal. Output width must be
/// `num_classes + 7`: logits first, then deltas.
pub fn head_forward(
    features: &Matrix,
    proposals: &[Box3D],
    params: &DenseParams,
    num_classes: usize,
) -> Result<Vec<Prediction>> {
    if features.rows() != proposals.len() {
        return Err(Error::shape("head_forward proposals", features.rows(), proposals.len()));
    }
    let width = num_classes + BOX_DELTA_DIM;
    if params.output_dim() != width {
        return Err(Error::shape("head_forward output width", width, params.output_dim()));
    }
    let out = mlp_forward(features, params)?;
    proposals
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let row = out.row(i);
            let deltas = BoxDeltas::from_slice(&row[num_classes..]);
            Ok(Prediction {
                logits: row[..num_classes].to_vec(),
                bbox: decode_box(b, &deltas)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::MlpSpec;

    fn some_box() -> Box3D {
        Box3D::new([0.5, -1.0, 0.7], [1.2, 0.8, 1.5], 0.3).unwrap()
    }

    #[test]
    fn zero_deltas_are_identity() {
        let head = DenseParams::zeros(&MlpSpec::new(vec![8, 3 + BOX_DELTA_DIM])).unwrap();
        let boxes = vec![some_box(), Box3D::axis_aligned([0.0; 3], [1.0; 3]).unwrap()];
        let preds = head_forward(&Matrix::zeros(2, 8), &boxes, &head, 3).unwrap();
        assert_eq!(preds[0].bbox, boxes[0]);
        assert_eq!(preds[1].bbox, boxes[1]);
        assert_eq!(preds[0].logits, vec![0.0; 3]);
    }

    #[test]
    fn log_size_doubles_extent() {
        let b = some_box();
        let d = BoxDeltas {
            center: [0.0; 3],
            log_size: [2f64.ln(), 0.0, 0.0],
            heading: 0.0,
        };
        let out = decode_box(&b, &d).unwrap();
        assert!((out.size()[0] - 2.4).abs() < 1e-12);
        assert_eq!(out.size()[1], 0.8);
    }

    #[test]
    fn decode_matches_formula() {
        let b = some_box();
        let d = BoxDeltas {
            center: [0.1, -0.3, 0.25],
            log_size: [0.2, -0.5, 0.05],
            heading: 3.5,
        };
        let out = decode_box(&b, &d).unwrap();
        let expect_c = [0.5 + 0.1 * 1.2, -1.0 - 0.3 * 0.8, 0.7 + 0.25 * 1.5];
        let expect_s = [1.2 * 0.2f64.exp(), 0.8 * (-0.5f64).exp(), 1.5 * 0.05f64.exp()];
        for k in 0..3 {
            assert!((out.center()[k] - expect_c[k]).abs() < 1e-12);
            assert!((out.size()[k] - expect_s[k]).abs() < 1e-12);
        }
        let expect_h = 0.3 + 3.5 - 2.0 * std::f64::consts::PI;
        assert!((out.heading() - expect_h).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let head = DenseParams::zeros(&MlpSpec::new(vec![8, 9])).unwrap();
        assert!(head_forward(&Matrix::zeros(1, 8), &[some_box()], &head, 3).is_err());
        let head = DenseParams::zeros(&MlpSpec::new(vec![8, 10])).unwrap();
        assert!(head_forward(&Matrix::zeros(2, 8), &[some_box()], &head, 3).is_err());
    }
}
