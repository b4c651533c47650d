use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use refine3d::evalbench::nms;
use refine3d::geometry::{iou_oriented, Box3D};
use refine3d::matching::hungarian;
use refine3d::pipeline::pipeline_forward;
use refine3d_bench::{cost_matrix, crowded_detections, default_fixture};

fn geometry(c: &mut Criterion) {
    let a = Box3D::new([0.0, 0.0, 0.5], [1.2, 0.8, 1.0], 0.3).unwrap();
    let b = Box3D::new([0.4, 0.1, 0.6], [1.0, 1.1, 0.9], -0.7).unwrap();
    c.bench_function("iou_oriented", |bench| bench.iter(|| iou_oriented(black_box(&a), black_box(&b))));
}

fn matching(c: &mut Criterion) {
    let mut g = c.benchmark_group("hungarian");
    for &(k, n) in &[(128, 8), (128, 32), (256, 64)] {
        let m = cost_matrix(k, n);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{k}x{n}")), &m, |bench, m| {
            bench.iter(|| hungarian(black_box(m)).unwrap())
        });
    }
    g.finish();
}

fn suppression(c: &mut Criterion) {
    let mut g = c.benchmark_group("nms_class_aware");
    for &n in &[128, 512, 2048] {
        let dets = crowded_detections(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &dets, |bench, d| {
            bench.iter(|| nms(black_box(d), 0.25, true).unwrap())
        });
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let (scene, cfg, params) = default_fixture(0);
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("forward_default", |bench| {
        bench.iter(|| pipeline_forward(black_box(&scene), &cfg, &params).unwrap())
    });
    g.finish();
}

criterion_group!(benches, geometry, matching, suppression, forward);
criterion_main!(benches);
