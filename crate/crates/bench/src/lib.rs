//! Shared fixtures for the criterion benchmarks.

use refine3d::evalbench::Detection;
use refine3d::geometry::Box3D;
use refine3d::pipeline::{PipelineConfig, PipelineParams};
use refine3d::synth::{gen_scene, SceneSample, SceneSpec};
use refine3d::tinynet::Matrix;

/// Default scene with the default config and seeded random parameters.
pub fn default_fixture(seed: u64) -> (SceneSample, PipelineConfig, PipelineParams) {
    let scene = gen_scene(&SceneSpec::default(), seed).expect("default scene spec is feasible");
    let cfg = PipelineConfig::default();
    let params = PipelineParams::random(&cfg).expect("default config is valid");
    (scene, cfg, params)
}

/// `n` overlapping detections on a jittered line, scores decreasing.
pub fn crowded_detections(n: usize) -> Vec<Detection> {
    (0..n)
        .map(|i| {
            let x = i as f64 * 0.37;
            Detection {
                class: i % 4,
                score: 1.0 - i as f64 / (n as f64 + 1.0),
                bbox: Box3D::new([x, (i % 7) as f64 * 0.2, 0.5], [1.0, 0.8, 1.0], (i % 13) as f64 * 0.1)
                    .expect("positive size"),
            }
        })
        .collect()
}

/// Deterministic pseudo-random `rows × cols` cost matrix in `[0, 1)`.
pub fn cost_matrix(rows: usize, cols: usize) -> Matrix {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let data = (0..rows * cols)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("consistent shape")
}
