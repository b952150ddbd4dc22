//! The headline experiment suite: Counter-Dyna and model-free runs over many
//! seeds, baseline controllers, closed-loop test-period evaluation, and
//! per-run output emission. Runs are embarrassingly parallel across seeds;
//! `COUNTERDYNA_THREADS` bounds the pool.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};

use crate::building_sim::{
    write_trajectory_csv, BuildingEnv, PlantParams, TrajectoryRow, EPISODE_LEN,
};
use crate::dyna::{
    align_training_window, run_counter_dyna, run_model_free, ExperienceStore, RunResult,
};
use crate::error::{Error, Result};
use crate::exogenous::{load_series_csv, synthesize_series, ExogenousSeries};
use crate::kpi_reward::{KpiLedger, RewardContext};
use crate::ppo::{UpdateDiagnostics, UPDATE_CSV_HEADER};
use crate::seeding;

use super::checkpoint;
use super::config::Config;
use super::controllers::{Controller, GreedyPolicy, PiController, RandomBangBang, RuleBased};
use super::csm_eval::{evaluate_csm, write_csm_eval_csv};
use super::periods::{find_test_periods, TestPeriod};
use super::report;

pub const KPI_SUMMARY_CSV_HEADER: &str = "run_id,seed,period,cost_eur_m2,discomfort_kh";

/// Training flavor of one experiment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunKind {
    CounterDyna,
    ModelFree,
}

/// One experiment arm: kind plus training length in episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExperimentId {
    pub kind: RunKind,
    pub episodes: usize,
}

impl ExperimentId {
    /// Parse ids like `counter-dyna-5` or `mf-50`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, rest) = if let Some(rest) = s.strip_prefix("counter-dyna-") {
            (RunKind::CounterDyna, rest)
        } else if let Some(rest) = s.strip_prefix("mf-") {
            (RunKind::ModelFree, rest)
        } else {
            return Err(Error::Config(format!(
                "unknown experiment id `{s}` (expected counter-dyna-<n> or mf-<n>)"
            )));
        };
        let episodes: usize = rest
            .parse()
            .map_err(|_| Error::Config(format!("bad episode count in experiment id `{s}`")))?;
        if episodes == 0 {
            return Err(Error::Config(format!("experiment `{s}` has zero episodes")));
        }
        Ok(Self { kind, episodes })
    }

    pub fn label(&self) -> String {
        match self.kind {
            RunKind::CounterDyna => format!("counter-dyna-{}", self.episodes),
            RunKind::ModelFree => format!("mf-{}", self.episodes),
        }
    }
}

/// Outcome of one (experiment, seed) run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub peak: KpiLedger,
    pub typical: KpiLedger,
    pub final_episode_reward: f64,
}

/// Everything the suite produced, including per-run failures.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub runs: Vec<RunSummary>,
    pub failures: Vec<(String, String)>,
    pub peak: TestPeriod,
    pub typical: TestPeriod,
    pub out_dir: PathBuf,
}

/// Build the shared exogenous series from the config.
pub fn build_series(config: &Config) -> Result<Arc<ExogenousSeries>> {
    let series = match &config.exogenous.csv_path {
        Some(path) => load_series_csv(Path::new(path))?,
        None => synthesize_series(
            config.exogenous.seed,
            config.series_horizon_steps(),
            &config.exogenous.profile,
        )?,
    };
    Ok(Arc::new(series))
}

/// Closed-loop evaluation of a controller over one test period.
///
/// The zone starts at the configured initial temperature; the controller is
/// reset; every step is logged.
pub fn evaluate_controller(
    controller: &mut dyn Controller,
    plant: &PlantParams,
    series: &Arc<ExogenousSeries>,
    reward_ctx: &RewardContext,
    config: &Config,
    period: &TestPeriod,
) -> Result<(KpiLedger, Vec<TrajectoryRow>)> {
    let mut env_cfg = config.env_config(period.start_step);
    env_cfg.episode_len = period.len_steps;
    let mut env = BuildingEnv::new(*plant, series.clone(), *reward_ctx, env_cfg)?;
    controller.reset();

    let mut state = env.reset()?;
    let mut rows = Vec::with_capacity(period.len_steps);
    for t in 0..period.len_steps {
        let action = controller.act(&state)?;
        let global = env.clock().global_step.step;
        let ambient = series.ambient[global as usize];
        let price = series.price[global as usize];
        let transition = env.step(action)?;
        rows.push(TrajectoryRow {
            global_step: global,
            episode: 0,
            t,
            zone_k: transition.state.zone_temp_k,
            ambient_k: ambient,
            price,
            action: action.index() as u8,
            power_kw: plant.electric_power_kw(action, ambient),
            reward: transition.reward,
        });
        state = transition.next_state;
    }
    Ok((*env.episode_ledger(), rows))
}

fn train_run(
    config: &Config,
    series: &Arc<ExogenousSeries>,
    peak: &TestPeriod,
    experiment: ExperimentId,
    seed: u64,
) -> Result<RunResult> {
    let start_step = align_training_window(experiment.episodes, EPISODE_LEN, peak.start_step)?;
    let mut env = BuildingEnv::new(
        config.plant,
        series.clone(),
        config.reward_context(),
        config.env_config(start_step),
    )?;
    match experiment.kind {
        RunKind::CounterDyna => {
            let schedule = config.schedule(experiment.episodes)?;
            run_counter_dyna(&mut env, &schedule, &config.ppo_hyper(), &config.csm_settings(), seed)
        }
        RunKind::ModelFree => {
            run_model_free(&mut env, experiment.episodes, &config.ppo_hyper(), seed)
        }
    }
}

fn write_kpi_summary(
    path: &Path,
    run_id: &str,
    seed: u64,
    entries: &[(&str, &KpiLedger)],
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{KPI_SUMMARY_CSV_HEADER}")?;
    for (period, ledger) in entries {
        writeln!(
            file,
            "{run_id},{seed},{period},{},{}",
            ledger.cost_eur_m2, ledger.discomfort_kh
        )?;
    }
    Ok(())
}

fn write_learning_curve(path: &Path, result: &RunResult) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{}", crate::dyna::LEARNING_CURVE_CSV_HEADER)?;
    for record in &result.learning_curve {
        writeln!(file, "{}", record.csv_row())?;
    }
    Ok(())
}

fn write_updates(path: &Path, updates: &[UpdateDiagnostics]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{UPDATE_CSV_HEADER}")?;
    for u in updates {
        writeln!(file, "{}", u.csv_row())?;
    }
    Ok(())
}

fn training_trajectory_rows(
    store: &ExperienceStore,
    plant: &PlantParams,
    episode_len: usize,
) -> Vec<TrajectoryRow> {
    let mut rows = Vec::with_capacity(store.env_transition_count());
    for (episode, buffer) in store.episodes().iter().enumerate() {
        for (t, tr) in buffer.transitions.iter().enumerate() {
            let ambient = tr.state.disturbances.current_ambient_k();
            rows.push(TrajectoryRow {
                global_step: buffer.first_global_step + t as u64,
                episode,
                t: t % episode_len,
                zone_k: tr.state.zone_temp_k,
                ambient_k: ambient,
                price: tr.state.disturbances.current_price(),
                action: tr.action.index() as u8,
                power_kw: plant.electric_power_kw(tr.action, ambient),
                reward: tr.reward,
            });
        }
    }
    rows
}

/// Execute one (experiment, seed) run end to end and write its artifacts.
pub fn execute_run(
    config: &Config,
    series: &Arc<ExogenousSeries>,
    peak: &TestPeriod,
    typical: &TestPeriod,
    experiment: ExperimentId,
    seed: u64,
    run_dir: &Path,
) -> Result<RunSummary> {
    std::fs::create_dir_all(run_dir)?;
    let run_id = format!("{}_seed{}", experiment.label(), seed);

    let result = train_run(config, series, peak, experiment, seed)?;
    let reward_ctx = config.reward_context();

    // Artifacts of the training phase.
    config.save(&run_dir.join("run_config.toml"))?;
    write_learning_curve(&run_dir.join("learning_curve.csv"), &result)?;
    write_updates(&run_dir.join("updates.csv"), &result.updates)?;
    write_trajectory_csv(
        &run_dir.join("train_trajectory.csv"),
        &training_trajectory_rows(&result.store, &config.plant, EPISODE_LEN),
    )?;

    let ckpt_dir = run_dir.join("checkpoint");
    checkpoint::save_policy(&ckpt_dir, result.agent.nets())?;
    checkpoint::save_d_env(&ckpt_dir.join(checkpoint::D_ENV_FILE), &result.store)?;
    if let Some(csm) = &result.csm {
        checkpoint::save_csm(&ckpt_dir, csm)?;
    }

    // Greedy closed-loop evaluation on both test periods.
    let mut greedy = GreedyPolicy { nets: result.agent.nets().clone() };
    let (peak_kpis, peak_rows) =
        evaluate_controller(&mut greedy, &config.plant, series, &reward_ctx, config, peak)?;
    write_trajectory_csv(&run_dir.join("test_peak_trajectory.csv"), &peak_rows)?;
    let (typical_kpis, typical_rows) =
        evaluate_controller(&mut greedy, &config.plant, series, &reward_ctx, config, typical)?;
    write_trajectory_csv(&run_dir.join("test_typical_trajectory.csv"), &typical_rows)?;
    write_kpi_summary(
        &run_dir.join("kpi_summary.csv"),
        &run_id,
        seed,
        &[("peak", &peak_kpis), ("typical", &typical_kpis)],
    )?;

    // Surrogate accuracy report for Dyna runs.
    if let Some(csm) = &result.csm {
        let mut rng = seeding::child_rng(seed, "csm-eval");
        let eval = evaluate_csm(
            csm,
            &result.store,
            &config.plant,
            series,
            &reward_ctx,
            config.dyna.rollout_len,
            config.experiment.eval_segments,
            config.experiment.oos_on_probability,
            &mut rng,
        )?;
        write_csm_eval_csv(&run_dir.join("csm_eval.csv"), &eval)?;
    }

    let final_episode_reward =
        result.learning_curve.last().map(|r| r.mean_reward).unwrap_or(f64::NAN);
    Ok(RunSummary {
        experiment,
        seed,
        run_dir: run_dir.to_path_buf(),
        peak: peak_kpis,
        typical: typical_kpis,
        final_episode_reward,
    })
}

/// Evaluate the seed-free baseline controllers on both periods and write
/// their KPI summaries and trajectories.
fn run_baselines(
    config: &Config,
    series: &Arc<ExogenousSeries>,
    peak: &TestPeriod,
    typical: &TestPeriod,
    out_dir: &Path,
) -> Result<()> {
    let reward_ctx = config.reward_context();
    for name in &config.experiment.baselines {
        let mut controller: Box<dyn Controller> = match name.as_str() {
            "rule-based" => Box::new(RuleBased::default()),
            "pi" => Box::new(PiController::new(
                config.comfort_band().midpoint_k(),
                config.pi.kp,
                config.pi.ki,
                config.pi.integral_limit,
                reward_ctx.dt_hours,
            )),
            "random" => {
                Box::new(RandomBangBang::new(0.5, seeding::child_rng(0, "baseline-random")))
            }
            other => return Err(Error::Config(format!("unknown baseline `{other}`"))),
        };
        let dir = out_dir.join(format!("baseline_{name}"));
        std::fs::create_dir_all(&dir)?;
        let (peak_kpis, peak_rows) =
            evaluate_controller(controller.as_mut(), &config.plant, series, &reward_ctx, config, peak)?;
        write_trajectory_csv(&dir.join("test_peak_trajectory.csv"), &peak_rows)?;
        let (typical_kpis, typical_rows) = evaluate_controller(
            controller.as_mut(),
            &config.plant,
            series,
            &reward_ctx,
            config,
            typical,
        )?;
        write_trajectory_csv(&dir.join("test_typical_trajectory.csv"), &typical_rows)?;
        write_kpi_summary(
            &dir.join("kpi_summary.csv"),
            &format!("baseline_{name}"),
            0,
            &[("peak", &peak_kpis), ("typical", &typical_kpis)],
        )?;
    }
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("COUNTERDYNA_THREADS") {
        let threads: usize = value.parse().map_err(|_| {
            Error::Config(format!("COUNTERDYNA_THREADS must be a positive integer, got `{value}`"))
        })?;
        if threads == 0 {
            return Err(Error::Config("COUNTERDYNA_THREADS must be positive".into()));
        }
        builder = builder.num_threads(threads);
    }
    builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Run the configured suite: every experiment times every seed, plus the
/// baselines, then aggregate. Per-run failures are recorded and the suite
/// continues.
pub fn run_suite(config: &Config, out_dir: &Path) -> Result<SuiteReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let series = build_series(config)?;
    let (peak, typical) = find_test_periods(&series, config.experiment.typical_start_day)?;
    info!(
        "test periods: peak at step {}, typical at step {}",
        peak.start_step, typical.start_step
    );

    let experiments: Vec<ExperimentId> = config
        .experiment
        .experiments
        .iter()
        .map(|s| ExperimentId::parse(s))
        .collect::<Result<_>>()?;

    // Test isolation: every training window ends exactly at the peak-period
    // boundary, which `find_test_periods` guarantees precedes the typical
    // window. A window that would precede the series origin fails here.
    for experiment in &experiments {
        align_training_window(experiment.episodes, EPISODE_LEN, peak.start_step)?;
    }

    let mut tasks: Vec<(ExperimentId, u64)> = Vec::new();
    for experiment in &experiments {
        for &seed in &config.experiment.seeds {
            tasks.push((*experiment, seed));
        }
    }

    let pool = thread_pool()?;
    let outcomes: Vec<(String, std::result::Result<RunSummary, String>)> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|(experiment, seed)| {
                let run_id = format!("{}_seed{}", experiment.label(), seed);
                let run_dir = out_dir.join(&run_id);
                let outcome =
                    execute_run(config, &series, &peak, &typical, *experiment, *seed, &run_dir)
                        .map_err(|e| e.to_string());
                (run_id, outcome)
            })
            .collect()
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (run_id, outcome) in outcomes {
        match outcome {
            Ok(summary) => runs.push(summary),
            Err(message) => {
                warn!("run {run_id} failed: {message}");
                failures.push((run_id, message));
            }
        }
    }
    runs.sort_by(|a, b| (a.experiment, a.seed).cmp(&(b.experiment, b.seed)));

    run_baselines(config, &series, &peak, &typical, out_dir)?;

    if !failures.is_empty() {
        let mut file =
            std::io::BufWriter::new(std::fs::File::create(out_dir.join("failures.txt"))?);
        for (run_id, message) in &failures {
            writeln!(file, "{run_id}: {message}")?;
        }
    }

    report::aggregate(out_dir)?;

    Ok(SuiteReport { runs, failures, peak, typical, out_dir: out_dir.to_path_buf() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_id_parsing() {
        let id = ExperimentId::parse("counter-dyna-5").unwrap();
        assert_eq!(id, ExperimentId { kind: RunKind::CounterDyna, episodes: 5 });
        assert_eq!(id.label(), "counter-dyna-5");
        let id = ExperimentId::parse("mf-50").unwrap();
        assert_eq!(id, ExperimentId { kind: RunKind::ModelFree, episodes: 50 });
        assert!(ExperimentId::parse("sac-5").is_err());
        assert!(ExperimentId::parse("mf-0").is_err());
        assert!(ExperimentId::parse("mf-x").is_err());
    }
}
