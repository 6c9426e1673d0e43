use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brtdown::features::Scenario;
use brtdown::pipeline::{self, LagVariable, ScenarioConfig};
use brtdown::scene_io::write_scene;
use brtdown::synth::{build_scene, SceneConfig};
use brtdown::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Exit status for a run in which some evaluation days failed.
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "brtdown", version, about = "Downscale coarse soil moisture with bagged regression trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Worker threads, 0 = one per core
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Evaluation days served by one trained model
    #[arg(long)]
    reuse_model_days: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic scene and write it as TDR-CSV rasters plus a manifest
    Synth(Common),
    /// Run one scenario over its evaluation days
    Run(RunArgs),
    /// Vary one lag window and report the mean error per lag
    SweepLag {
        #[command(flatten)]
        run: RunArgs,
        /// lst, lai, ppt or all
        #[arg(long, default_value = "lst")]
        variable: LagVariable,
        /// Comma-separated lag lengths
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10,11,12,13,14")]
        lags: Vec<u32>,
    },
    /// Cross-validated error against the number of trees
    SweepTrees {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,25,50,75")]
        k_grid: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
    },
    /// Pruning path: active trees and re-substitution error against the penalty
    SweepLambda {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 25)]
        n_betas: usize,
    },
    /// Error against the number of consecutive days without LST
    Gaps {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 7)]
        max_gaps: u32,
    },
    /// Tabulate the summaries of finished runs under --out
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a C,
    outputs: Vec<String>,
}

fn read_config<T: for<'de> serde::Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, Error> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

fn init_threads(n: usize) -> Result<(), Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn scenario_config(args: &RunArgs) -> Result<ScenarioConfig, Error> {
    let mut cfg: ScenarioConfig = read_config(args.common.config.as_deref())?;
    if let Some(s) = args.scenario {
        cfg.scenario = s;
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.reuse_model_days {
        cfg.reuse_model_days = n;
    }
    // a relative scene path is taken relative to the configuration file
    if let (Some(m), Some(c)) = (&cfg.scene_manifest, &args.common.config) {
        if m.is_relative() {
            if let Some(dir) = c.parent() {
                cfg.scene_manifest = Some(dir.join(m));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest<C: Serialize>(out: &Path, command: &str, seed: u64, config: &C, outputs: &[&str]) -> Result<(), Error> {
    let m = RunManifest {
        tool: "brtdown",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    pipeline::write_json(&out.join("run_manifest.json"), &m)
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Synth(c) => {
            init_threads(c.threads)?;
            let mut cfg: SceneConfig = read_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let scene = build_scene(&cfg)?;
            write_scene(&scene, &c.out)?;
            pipeline::write_json(&c.out.join("scene_config.json"), &cfg)?;
            write_manifest(&c.out, "synth", cfg.seed, &cfg, &["manifest.json", "scene_meta.json", "rasters/"])?;
            log::info!("scene written to {}", c.out.display());
            Ok(0)
        }
        Command::Run(a) => {
            init_threads(a.common.threads)?;
            let cfg = scenario_config(&a)?;
            let scene = cfg.load_scene()?;
            let run = pipeline::run_scenario(&scene, &cfg)?;
            pipeline::write_run(&run, &a.common.out)?;
            write_manifest(
                &a.common.out,
                "run",
                cfg.seed,
                &cfg,
                &["daily_metrics.csv", "strata.csv", "failures.csv", "summary.json", "rasters/"],
            )?;
            let r = &run.report;
            println!(
                "{}: {} days, regional RMSE {:.5}, {} failed",
                cfg.scenario,
                r.days.len(),
                r.regional_rmse(),
                r.failures.len()
            );
            Ok(if r.is_partial() { EXIT_PARTIAL } else { 0 })
        }
        Command::SweepLag { run, variable, lags } => {
            init_threads(run.common.threads)?;
            let cfg = scenario_config(&run)?;
            let scene = cfg.load_scene()?;
            let points = pipeline::lag_sensitivity_sweep(&scene, &cfg, variable, &lags)?;
            let name = format!("lag_{}.csv", format!("{variable:?}").to_lowercase());
            pipeline::write_csv(&run.common.out.join(&name), &pipeline::lag_csv(&points))?;
            write_manifest(&run.common.out, "sweep-lag", cfg.seed, &cfg, &[&name])?;
            Ok(0)
        }
        Command::SweepTrees { run, k_grid, folds } => {
            init_threads(run.common.threads)?;
            let cfg = scenario_config(&run)?;
            let scene = cfg.load_scene()?;
            let points = pipeline::sweep_trees(&scene, &cfg, &k_grid, folds)?;
            pipeline::write_csv(&run.common.out.join("trees.csv"), &pipeline::trees_csv(&points))?;
            write_manifest(&run.common.out, "sweep-trees", cfg.seed, &cfg, &["trees.csv"])?;
            Ok(0)
        }
        Command::SweepLambda { run, n_betas } => {
            init_threads(run.common.threads)?;
            let cfg = scenario_config(&run)?;
            let scene = cfg.load_scene()?;
            let points = pipeline::sweep_lambda(&scene, &cfg, n_betas)?;
            pipeline::write_csv(&run.common.out.join("lambda.csv"), &pipeline::lambda_csv(&points))?;
            write_manifest(&run.common.out, "sweep-lambda", cfg.seed, &cfg, &["lambda.csv"])?;
            Ok(0)
        }
        Command::Gaps { run, max_gaps } => {
            init_threads(run.common.threads)?;
            let cfg = scenario_config(&run)?;
            let scene = cfg.load_scene()?;
            let g = pipeline::gap_experiment(&scene, &cfg, max_gaps)?;
            pipeline::write_gap_run(&g, &run.common.out)?;
            write_manifest(&run.common.out, "gaps", cfg.seed, &cfg, &["gaps.csv", "rasters/"])?;
            println!("gap experiment on day {}", g.day);
            Ok(0)
        }
        Command::Report { out } => {
            let table = pipeline::report(&out)?;
            pipeline::write_csv(&out.join("report.csv"), &table)?;
            print!("{table}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
