use refine3d::evalbench::{ap_eval, SceneEval};
use refine3d::geometry::iou_oriented;
use refine3d::matching::{hungarian, match_cost_matrix};
use refine3d::pipeline::{planted_params, run_pipeline, ParamInit, PipelineConfig, VoteSource};
use refine3d::synth::{gen_scene, SceneSpec};

#[test]
fn planted_parameters_recover_oracle_scenes() {
    let cfg = PipelineConfig {
        vote_source: VoteSource::Oracle,
        param_init: ParamInit::Planted,
        ..PipelineConfig::default()
    };
    let params = planted_params(&cfg).unwrap();
    let mut evals = Vec::new();
    for s in 0..6u64 {
        let spec = SceneSpec {
            num_objects: 1 + (s as usize % 8),
            ..SceneSpec::default()
        };
        let scene = gen_scene(&spec, 100 + s).unwrap();
        let run = run_pipeline(&scene, &cfg, &params).unwrap();
        let preds = &run.forward.final_proposals().predictions;
        let m = hungarian(&match_cost_matrix(preds, &scene.boxes, &cfg.weights, cfg.scene_scale)).unwrap();
        assert_eq!(m.pairs.len(), scene.boxes.len());
        for &(p, g) in &m.pairs {
            assert!(iou_oriented(&preds[p].bbox, &scene.boxes[g].bbox) >= 0.9);
            assert_eq!(preds[p].best_class().0, scene.boxes[g].class);
        }
        evals.push(SceneEval {
            detections: run.detections,
            ground_truth: scene.boxes.clone(),
        });
    }
    let rep = ap_eval(&evals, &[0.25, 0.5]).unwrap();
    assert_eq!(rep.map_at(0.5), Some(1.0));
    assert_eq!(rep.map_at(0.25), Some(1.0));
}

#[test]
fn refinement_keeps_one_confident_proposal_per_object() {
    let cfg = PipelineConfig {
        vote_source: VoteSource::Oracle,
        param_init: ParamInit::Planted,
        ..PipelineConfig::default()
    };
    let params = planted_params(&cfg).unwrap();
    let scene = gen_scene(&SceneSpec::default(), 3).unwrap();
    let run = run_pipeline(&scene, &cfg, &params).unwrap();
    let confident = run.detections.iter().filter(|d| d.score > 0.5).count();
    assert_eq!(confident, scene.boxes.len());
}
