//! `refine3d` command-line tool.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "refine3d", version, about = "Suppress-and-refine 3D detection: scenes, runs, evaluation and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes from a scene spec.
    Gen(GenArgs),
    /// Run the detection pipeline over scene files.
    Run(RunArgs),
    /// Evaluate detection files against scene ground truth.
    Eval(EvalArgs),
    /// Time the pipeline with and without an NMS pass.
    Bench(BenchArgs),
    /// Evaluate the loss-weight and proposal-count grids.
    Sweep(SweepArgs),
    /// Run the oracle checks and write the offset histograms.
    Selftest(SelftestArgs),
    /// Write the parameter archive selected by a config.
    Params(ParamsArgs),
}

#[derive(Args, Debug)]
struct OutDir {
    /// Output directory (falls back to $REFINE3D_OUT).
    #[arg(long, env = "REFINE3D_OUT")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Scene spec JSON; defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes; scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Pipeline config JSON; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene file or directory of scene files.
    #[arg(long)]
    scenes: PathBuf,
    /// Parameter archive; otherwise parameters follow `param_init` in the config.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Scenes processed in parallel.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: u32,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory holding `<scene>.detections.json` files.
    #[arg(long)]
    dets: PathBuf,
    /// Scene file or directory with the ground truth.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5")]
    thresholds: Vec<f64>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BenchModeArg {
    EndToEnd,
    Baseline,
    Both,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene to time; a default scene is generated from `--seed` otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    trials: u32,
    /// Overrides the config's refinement count.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=4))]
    refinements: Option<u32>,
    #[arg(long, value_enum, default_value_t = BenchModeArg::Both)]
    mode: BenchModeArg,
    /// Also time NMS alone on synthetic detection sets of these sizes.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_missing_value = "128,512,2048")]
    nms_scaling: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GridArg {
    Weights,
    Proposals,
    All,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, value_enum, default_value_t = GridArg::All)]
    grid: GridArg,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5")]
    thresholds: Vec<f64>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Archive file to write.
    #[arg(long)]
    out: PathBuf,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen(a.spec.as_deref(), a.seed, a.count, &a.out.out),
        Command::Run(a) => commands::run(
            a.config.as_deref(),
            &a.scenes,
            a.params.as_deref(),
            a.jobs as usize,
            &a.out.out,
        ),
        Command::Eval(a) => commands::eval(&a.dets, &a.gt, &a.thresholds, &a.out.out),
        Command::Bench(a) => {
            let modes = match a.mode {
                BenchModeArg::EndToEnd => vec![refine3d::evalbench::BenchMode::EndToEnd],
                BenchModeArg::Baseline => vec![refine3d::evalbench::BenchMode::Baseline],
                BenchModeArg::Both => vec![
                    refine3d::evalbench::BenchMode::EndToEnd,
                    refine3d::evalbench::BenchMode::Baseline,
                ],
            };
            commands::bench(&commands::BenchOptions {
                config: a.config.as_deref(),
                scene: a.scene.as_deref(),
                trials: a.trials as usize,
                refinements: a.refinements.map(|r| r as usize),
                modes,
                nms_scaling: a.nms_scaling,
                seed: a.seed,
                out: &a.out.out,
            })
        }
        Command::Sweep(a) => {
            let grid = match a.grid {
                GridArg::Weights => refine3d::evalbench::SweepGrid::Weights,
                GridArg::Proposals => refine3d::evalbench::SweepGrid::Proposals,
                GridArg::All => refine3d::evalbench::SweepGrid::All,
            };
            commands::sweep(a.config.as_deref(), &a.scenes, grid, &a.thresholds, &a.out.out)
        }
        Command::Selftest(a) => commands::selftest(a.seed, &a.out.out),
        Command::Params(a) => commands::params(a.config.as_deref(), &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let err = CliError::usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.code as u8)
        }
    }
}
