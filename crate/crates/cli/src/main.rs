//! `counterdyna`: run the experiment suite, the ablation grids, surrogate
//! re-evaluation, and report aggregation.
//!
//! Exit codes: 0 success, 1 configuration error, 2 run failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use counterdyna_core::error::Error as CoreError;
use counterdyna_core::harness::checkpoint;
use counterdyna_core::harness::config::Config;
use counterdyna_core::harness::csm_eval::{evaluate_csm, write_csm_eval_csv};
use counterdyna_core::harness::experiments::{build_series, run_suite};
use counterdyna_core::harness::report;
use counterdyna_core::harness::{run_ablations, AblationGrid};
use counterdyna_core::seeding;

#[derive(Parser)]
#[command(name = "counterdyna", version, about = "Counter-Dyna HVAC control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// TOML configuration file; defaults apply for every omitted key.
    #[arg(long)]
    config: Option<PathBuf>,

    /// CI profile: [64,64] networks and at most 5 seeds.
    #[arg(long)]
    fast: bool,

    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment suite and aggregate the results.
    Run {
        #[command(flatten)]
        common: CommonRunArgs,

        /// Override the configured seed list, e.g. `--seeds 1,2,3`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run the hyperparameter ablation grids.
    Ablate {
        #[command(flatten)]
        common: CommonRunArgs,

        /// TOML grid file; the reference grid applies when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Re-evaluate a stored surrogate checkpoint against the plant.
    EvalCsm {
        /// A finished run directory (containing run_config.toml and
        /// checkpoint/).
        #[arg(long)]
        checkpoint: PathBuf,

        /// Where to write the report (default: `<checkpoint>/csm_eval.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate the CSV outputs of finished runs in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, fast: bool, seeds: Option<Vec<u64>>) -> Result<Config, CoreError> {
    let mut config = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if fast {
        config.apply_fast_profile();
    }
    if let Some(seeds) = seeds {
        config.experiment.seeds = seeds;
    }
    config.validate()?;
    Ok(config)
}

fn eval_csm_command(run_dir: &Path, out: Option<&Path>) -> Result<(), CoreError> {
    let config = Config::load(&run_dir.join("run_config.toml"))?;
    let series = build_series(&config)?;
    let store =
        checkpoint::load_d_env(&run_dir.join("checkpoint").join(checkpoint::D_ENV_FILE), &series)?;
    let csm = checkpoint::load_csm(&run_dir.join("checkpoint"))?;
    let mut rng = seeding::child_rng(config.exogenous.seed, "eval-csm-cli");
    let report = evaluate_csm(
        &csm,
        &store,
        &config.plant,
        &series,
        &config.reward_context(),
        config.dyna.rollout_len,
        config.experiment.eval_segments,
        config.experiment.oos_on_probability,
        &mut rng,
    )?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join("csm_eval.csv"));
    write_csm_eval_csv(&out_path, &report)?;
    info!(
        "in-sample rmse {:.4} K mae {:.4} K; out-of-sample rmse {:.4} K mae {:.4} K; reward R2 {:.4}",
        report.in_sample_rmse_k,
        report.in_sample_mae_k,
        report.out_sample_rmse_k,
        report.out_sample_mae_k,
        report.reward_r2
    );
    println!("wrote {}", out_path.display());
    Ok(())
}

/// Config-shaped errors exit 1; everything else is a run failure (2).
fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Config(_) | CoreError::InvalidArgument(_) | CoreError::Parse { .. } => 1,
        _ => 2,
    }
}

fn run() -> Result<(), (u8, String)> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap prints its own help/version output through the error path.
        let _ = e.print();
        (if e.use_stderr() { 1 } else { 0 }, String::new())
    })?;

    match cli.command {
        Command::Run { common, seeds } => {
            let config = load_config(common.config.as_deref(), common.fast, seeds)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let suite = run_suite(&config, &common.out)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            println!(
                "{} runs finished, {} failed; outputs in {}",
                suite.runs.len(),
                suite.failures.len(),
                common.out.display()
            );
            if !suite.failures.is_empty() {
                return Err((2, format!("{} runs failed (see failures.txt)", suite.failures.len())));
            }
            Ok(())
        }
        Command::Ablate { common, grid } => {
            let config = load_config(common.config.as_deref(), common.fast, None)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let grid = match grid {
                Some(path) => {
                    AblationGrid::load(&path).map_err(|e| (exit_code_for(&e), e.to_string()))?
                }
                None => AblationGrid::default(),
            };
            run_ablations(&config, &grid, &common.out)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            println!("ablation outputs in {}", common.out.display());
            Ok(())
        }
        Command::EvalCsm { checkpoint, out } => eval_csm_command(&checkpoint, out.as_deref())
            .map_err(|e| (exit_code_for(&e), e.to_string())),
        Command::Report { out } => {
            report::aggregate(&out).map_err(|e| (exit_code_for(&e), e.to_string()))?;
            println!("aggregates written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            if !message.is_empty() {
                eprintln!("error: {message}");
            }
            ExitCode::from(code)
        }
    }
}
