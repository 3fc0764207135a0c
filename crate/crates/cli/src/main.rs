//! Command-line front end for the inversion risk pipeline.
//!
//! Exit codes: 0 success, 2 config error, 3 stage failure (resumable),
//! 4 backend unavailable.

use anyhow::Context;
use clap::{Parser, Subcommand};
use invrisk_core::orchestrator::{
    run_pipeline, run_pipeline_to, run_sweep, validate_config, ConfigFile, RunOptions, StagePoint,
};
use invrisk_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "invrisk",
    about = "Quantify model-inversion privacy risk for image classifiers",
    version
)]
struct Cli {
    /// Experiment config file (JSON; an array of configs runs a sweep).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory override (default: <output_root>/<name>-seed<seed>).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker pool size for parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Force deterministic stub interpretation backends.
    #[arg(long, global = true, default_value_t = false)]
    stub_backends: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate the config, reporting resolved defaults.
    Validate,
    /// Ingest datasets and train (or load) the target model.
    TrainTarget,
    /// Train (or load) the generative prior and fit realism calibration.
    TrainGan,
    /// Produce reconstructions for every trial.
    Attack,
    /// Caption reconstructions and derive candidate labels.
    Caption,
    /// Train evaluation/proxy models and compute per-trial metrics.
    Evaluate,
    /// Aggregate trials and emit report.json / report.csv / summary.md.
    Report,
    /// Execute the full pipeline on a fresh run directory.
    Run,
    /// Continue a halted run from its last completed stage.
    Resume,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<Error>()
                .map(Error::exit_code)
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| Error::config("--config <path> is required"))?;
    let parsed = validate_config(&config_path)?;
    let config_dir = config_path
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut options = RunOptions {
        run_dir: cli.run_dir.clone(),
        resume: false,
        force_stub_backends: cli.stub_backends,
        seed_override: cli.seed,
        workers: cli.workers,
    };

    match cli.command {
        Command::Validate => {
            for config in parsed.cells() {
                println!(
                    "config ok: name={} trials={} n_per_class={} attack={} backends={}",
                    config.name,
                    config.n_trials,
                    config.n_per_class,
                    match &config.attack {
                        invrisk_core::attacks::AttackSpec::Fv(_) => "fv",
                        invrisk_core::attacks::AttackSpec::Gmi(_) => "gmi",
                    },
                    match &config.backends {
                        invrisk_core::orchestrator::config::BackendSection::Stub => "stub",
                        invrisk_core::orchestrator::config::BackendSection::Http { .. } => "http",
                    }
                );
            }
            return Ok(());
        }
        Command::Run => {
            return dispatch_run(parsed, &config_dir, options);
        }
        Command::Resume => {
            options.resume = true;
            return dispatch_run(parsed, &config_dir, options);
        }
        _ => {}
    }

    // stage subcommands operate on a single config and may continue
    // existing run directories
    options.resume = true;
    let config = match parsed {
        ConfigFile::Single(c) => *c,
        ConfigFile::Sweep(_) => {
            return Err(Error::config(
                "stage subcommands need a single-experiment config, not a sweep",
            )
            .into())
        }
    };
    let point = match cli.command {
        Command::TrainTarget => StagePoint::Target,
        Command::TrainGan => StagePoint::Gan,
        Command::Attack => StagePoint::Attack,
        Command::Caption => StagePoint::Caption,
        Command::Evaluate => StagePoint::Evaluate,
        Command::Report => StagePoint::Report,
        _ => unreachable!("handled above"),
    };
    let report = run_pipeline_to(config, &config_dir, &options, point)
        .context("pipeline stage failed")?;
    if let Some(report) = report {
        print_report_line(&report);
    } else {
        println!("stage complete");
    }
    Ok(())
}

fn dispatch_run(
    parsed: ConfigFile,
    config_dir: &std::path::Path,
    options: RunOptions,
) -> anyhow::Result<()> {
    match parsed {
        ConfigFile::Single(config) => {
            let report = run_pipeline(*config, config_dir, &options)?;
            print_report_line(&report);
        }
        ConfigFile::Sweep(cells) => {
            let reports = run_sweep(cells, config_dir, &options)?;
            for report in &reports {
                print_report_line(report);
            }
            println!("sweep complete: {} cells", reports.len());
        }
    }
    Ok(())
}

fn print_report_line(report: &invrisk_core::riskcore::RiskReport) {
    let (lo, hi) = report.wcal.clamped_interval();
    println!(
        "WCAL {:.4} (95% CI [{:.4}, {:.4}]) over {} trials -> risk level: {}",
        report.wcal.mean,
        lo,
        hi,
        report.wcal.n_trials,
        report.bin.level.name().to_uppercase()
    );
}
