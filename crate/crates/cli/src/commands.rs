use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use refine3d::evalbench::{
    ap_eval, bench as bench_pipeline, nms_scaling, sweep as sweep_grid, BenchMode, BenchRecord, Detection,
    NmsScalingPoint, SceneEval, SweepCell, SweepGrid,
};
use refine3d::pipeline::{run_pipeline, LossBreakdown, PipelineConfig, PipelineParams, PipelineTiming, StageTiming};
use refine3d::synth::{gen_scene, SceneSample, SceneSpec};
use refine3d::verify;

use crate::error::CliError;
use crate::output::{
    ensure_dir, list_scenes, read_text, require_exists, stem, write_json, write_text, RunManifest, DETECTIONS_SUFFIX,
};

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => PipelineConfig::from_json(&read_text(p)?).map_err(CliError::from_config),
    }
}

fn load_spec(path: Option<&Path>) -> Result<SceneSpec, CliError> {
    let spec = match path {
        None => SceneSpec::default(),
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| CliError::config(format!("scene spec {}: {e}", p.display())))?,
    };
    spec.validate().map_err(CliError::from_config)?;
    Ok(spec)
}

fn load_params(path: Option<&Path>, cfg: &PipelineConfig) -> Result<PipelineParams, CliError> {
    match path {
        Some(p) => PipelineParams::load(p, cfg).map_err(CliError::from),
        None => PipelineParams::for_config(cfg).map_err(CliError::from_config),
    }
}

fn load_scene(path: &Path) -> Result<SceneSample, CliError> {
    SceneSample::load(path).map_err(|e| CliError::io(format!("scene {}: {e}", path.display())))
}

pub fn gen(spec_path: Option<&Path>, seed: u64, count: u64, out: &Path) -> Result<(), CliError> {
    let spec = load_spec(spec_path)?;
    ensure_dir(out)?;
    let mut written = Vec::new();
    for i in 0..count {
        let scene = gen_scene(&spec, seed.wrapping_add(i)).map_err(|e| match e {
            refine3d::Error::Infeasible(_) => CliError::config(e.to_string()),
            other => CliError::from(other),
        })?;
        let path = out.join(format!("scene_{i:04}.json"));
        write_text(&path, &(scene.to_json()? + "\n"))?;
        written.push(path);
    }
    println!("wrote {} scene(s) to {}", written.len(), out.display());
    RunManifest::new("gen", spec_path, written, out, seed).write()
}

#[derive(Serialize)]
struct TimingFile {
    pipeline: PipelineTiming,
    stages: Vec<StageTiming>,
}

pub fn run(
    config: Option<&Path>,
    scenes: &Path,
    params_path: Option<&Path>,
    jobs: usize,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let params = load_params(params_path, &cfg)?;
    let files = list_scenes(scenes)?;
    ensure_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let results: Vec<Result<(String, LossBreakdown), CliError>> = pool.install(|| {
        files
            .par_iter()
            .map(|path| {
                let scene = load_scene(path)?;
                let run = run_pipeline(&scene, &cfg, &params)?;
                let name = stem(path);
                write_json(&out.join(format!("{name}{DETECTIONS_SUFFIX}")), &run.detections)?;
                write_json(&out.join(format!("{name}.losses.json")), &run.losses)?;
                let timing = TimingFile {
                    pipeline: run.forward.timing,
                    stages: run.forward.stages.iter().map(|s| s.timing).collect(),
                };
                write_json(&out.join(format!("{name}.timing.json")), &timing)?;
                Ok((name, run.losses))
            })
            .collect()
    });
    for r in &results {
        if let Err(e) = r {
            return Err(e.clone());
        }
    }
    println!("ran {} scene(s), outputs in {}", files.len(), out.display());
    RunManifest::new("run", config, files, out, cfg.seed).write()
}

pub fn eval(dets: &Path, gt: &Path, thresholds: &[f64], out: &Path) -> Result<(), CliError> {
    require_exists(dets)?;
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(CliError::usage(format!("thresholds must lie in (0, 1], got {thresholds:?}")));
    }
    let files = list_scenes(gt)?;
    let mut evals = Vec::with_capacity(files.len());
    for path in &files {
        let scene = load_scene(path)?;
        let det_path = dets.join(format!("{}{DETECTIONS_SUFFIX}", stem(path)));
        let detections: Vec<Detection> = serde_json::from_str(&read_text(&det_path)?)
            .map_err(|e| CliError::io(format!("detections {}: {e}", det_path.display())))?;
        evals.push(SceneEval {
            detections,
            ground_truth: scene.boxes,
        });
    }
    let report = ap_eval(&evals, thresholds)?;
    ensure_dir(out)?;
    write_json(&out.join("eval.json"), &report)?;
    write_text(&out.join("eval.csv"), &report.to_csv())?;
    for (t, m) in &report.map {
        println!("mAP@{t} = {m:.4}");
    }
    RunManifest::new("eval", None, files, out, 0).write()
}

pub struct BenchOptions<'a> {
    pub config: Option<&'a Path>,
    pub scene: Option<&'a Path>,
    pub trials: usize,
    pub refinements: Option<usize>,
    pub modes: Vec<BenchMode>,
    pub nms_scaling: Option<Vec<usize>>,
    pub seed: u64,
    pub out: &'a Path,
}

#[derive(Serialize)]
struct BenchFile {
    records: Vec<BenchRecord>,
    nms_scaling: Vec<NmsScalingPoint>,
}

pub fn bench(o: &BenchOptions) -> Result<(), CliError> {
    let mut cfg = load_config(o.config)?;
    if let Some(r) = o.refinements {
        cfg.refinements = r;
        cfg.validate().map_err(CliError::from_config)?;
    }
    let params = load_params(None, &cfg)?;
    let (scene, scenes) = match o.scene {
        Some(p) => (load_scene(p)?, vec![p.to_path_buf()]),
        None => (gen_scene(&SceneSpec::default(), o.seed)?, Vec::new()),
    };
    let records = o
        .modes
        .iter()
        .map(|&m| bench_pipeline(&scene, &cfg, &params, o.trials, m))
        .collect::<Result<Vec<_>, _>>()?;
    let scaling = match &o.nms_scaling {
        Some(sizes) if !sizes.is_empty() => nms_scaling(sizes, o.trials, o.seed)?,
        _ => Vec::new(),
    };
    ensure_dir(o.out)?;
    let mut csv = String::from("mode,phase,median_ms,mean_ms,trials\n");
    for r in &records {
        csv.push_str(&r.to_csv_rows());
        println!(
            "{:?}: model {:.2} ms, nms {:.3} ms, total {:.2} ms (median of {})",
            r.mode, r.model.median_ms, r.nms.median_ms, r.total.median_ms, r.trials
        );
    }
    write_text(&o.out.join("bench.csv"), &csv)?;
    if !scaling.is_empty() {
        let mut csv = String::from("detections,kept,median_ms,mean_ms\n");
        for p in &scaling {
            csv.push_str(&format!("{},{},{},{}\n", p.detections, p.kept, p.nms.median_ms, p.nms.mean_ms));
            println!("nms over {} detections: {:.3} ms", p.detections, p.nms.median_ms);
        }
        write_text(&o.out.join("nms_scaling.csv"), &csv)?;
    }
    write_json(
        &o.out.join("bench.json"),
        &BenchFile {
            records,
            nms_scaling: scaling,
        },
    )?;
    RunManifest::new("bench", o.config, scenes, o.out, o.seed).write()
}

pub fn sweep(
    config: Option<&Path>,
    scenes: &Path,
    grid: SweepGrid,
    thresholds: &[f64],
    out: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let params = load_params(None, &cfg)?;
    let files = list_scenes(scenes)?;
    let samples = files.iter().map(|p| load_scene(p)).collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<SweepCell> = sweep_grid(&samples, &cfg, &params, grid, thresholds)?;
    ensure_dir(out)?;
    write_json(&out.join("sweep.json"), &cells)?;
    let mut csv = String::from("grid,label,k,K,threshold,mAP,mean_total_loss\n");
    for c in &cells {
        let grid = match c.grid {
            SweepGrid::Weights => "weights",
            SweepGrid::Proposals => "proposals",
            SweepGrid::All => "all",
        };
        for (t, m) in &c.report.map {
            csv.push_str(&format!("{grid},{},{},{},{t},{m},{}\n", c.label, c.k, c.top_k, c.mean_total_loss));
        }
    }
    write_text(&out.join("sweep.csv"), &csv)?;
    println!("evaluated {} grid cell(s) on {} scene(s)", cells.len(), samples.len());
    RunManifest::new("sweep", config, files, out, cfg.seed).write()
}

pub fn selftest(seed: u64, out: &Path) -> Result<(), CliError> {
    let (outcomes, supp) = verify::run_all(seed)?;
    ensure_dir(out)?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    write_json(&out.join("selftest.json"), &outcomes)?;
    write_text(&out.join("offset_histogram_raw.csv"), &supp.raw.to_csv())?;
    write_text(&out.join("offset_histogram_gated.csv"), &supp.gated.to_csv())?;
    RunManifest::new("selftest", None, Vec::new(), out, seed).write()?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::runtime(format!("failed checks: {}", failed.join(", "))))
    }
}

pub fn params(config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let params = load_params(None, &cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    params.save(out)?;
    println!("wrote parameters to {}", out.display());
    Ok(())
}
