//! Training-free suppress-and-refine 3D detection.
//!
//! Seeds vote for object centers with objectness-gated offsets, proposals are
//! refined by multi-resolution RoI pooling, feature gating and self-attention,
//! and predictions are supervised through Hungarian set matching. No NMS sits
//! anywhere in the forward path; [`evalbench`] keeps NMS only as a baseline.

pub mod error;
pub mod evalbench;
pub mod geometry;
pub mod matching;
pub mod pipeline;
pub mod rng;
pub mod roi;
pub mod suppression;
pub mod synth;
pub mod tinynet;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{Box3D, PointSet, Vec3};
