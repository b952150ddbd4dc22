//! Surrogate accuracy evaluation against the true plant.
//!
//! In-sample: replay the historically taken actions through the surrogate,
//! resetting it to the recorded building state at the start of every
//! horizon-length window. Out-of-sample: from the same anchor states, drive
//! both the surrogate and the true plant forward under a fresh random action
//! sequence (a counterfactual query) and compare the trajectories.
//!
//! Reward fidelity is reported as a pooled R^2 of the reward path evaluated
//! on the true next zone temperatures, so the score isolates the reward
//! model from building-model drift. The pooled score uses the out-of-sample
//! transitions, which the fit never saw.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::building_sim::{plant_step, HeatPumpAction, PlantParams};
use crate::dyna::ExperienceStore;
use crate::error::{Error, Result};
use crate::exogenous::ExogenousSeries;
use crate::kpi_reward::{discomfort_increment, RewardContext};
use crate::surrogate::Csm;

/// Per-window accuracy row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmEvalRow {
    pub rollout_id: usize,
    pub horizon_h: usize,
    pub in_sample: bool,
    pub rmse_k: f64,
    pub mae_k: f64,
    pub reward_r2: f64,
}

/// Per-window rows plus pooled aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmEvalReport {
    pub rows: Vec<CsmEvalRow>,
    pub in_sample_rmse_k: f64,
    pub in_sample_mae_k: f64,
    pub out_sample_rmse_k: f64,
    pub out_sample_mae_k: f64,
    /// Pooled over all out-of-sample transitions.
    pub reward_r2: f64,
}

pub const CSM_EVAL_CSV_HEADER: &str = "rollout_id,horizon_h,in_sample,rmse_K,mae_K,reward_r2";

pub fn write_csm_eval_csv(path: &Path, report: &CsmEvalReport) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{CSM_EVAL_CSV_HEADER}")?;
    for r in &report.rows {
        writeln!(
            file,
            "{},{},{},{},{},{}",
            r.rollout_id,
            r.horizon_h,
            if r.in_sample { 1 } else { 0 },
            r.rmse_k,
            r.mae_k,
            r.reward_r2
        )?;
    }
    Ok(())
}

struct ErrorPool {
    sq_sum: f64,
    abs_sum: f64,
    count: usize,
}

impl ErrorPool {
    fn new() -> Self {
        Self { sq_sum: 0.0, abs_sum: 0.0, count: 0 }
    }

    fn push(&mut self, err: f64) {
        self.sq_sum += err * err;
        self.abs_sum += err.abs();
        self.count += 1;
    }

    fn rmse(&self) -> f64 {
        (self.sq_sum / self.count.max(1) as f64).sqrt()
    }

    fn mae(&self) -> f64 {
        self.abs_sum / self.count.max(1) as f64
    }
}

fn r2(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    let mean = pairs.iter().map(|(truth, _)| truth).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|(truth, _)| (truth - mean).powi(2)).sum();
    let ss_res: f64 = pairs.iter().map(|(truth, pred)| (truth - pred).powi(2)).sum();
    if ss_tot < 1e-12 {
        // Constant truth: perfect if the residuals vanish too.
        if ss_res < 1e-12 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Evaluate the surrogate on `max_segments` windows per mode.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_csm(
    csm: &Csm,
    store: &ExperienceStore,
    plant: &PlantParams,
    series: &ExogenousSeries,
    reward_ctx: &RewardContext,
    horizon: usize,
    max_segments: usize,
    oos_on_probability: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CsmEvalReport> {
    if store.n_episodes() == 0 {
        return Err(Error::InvalidArgument("experience store holds no episodes".into()));
    }
    if horizon == 0 || max_segments == 0 {
        return Err(Error::InvalidArgument("horizon and max_segments must be positive".into()));
    }

    // Tile the recorded trajectory into consecutive horizon-length windows,
    // then subsample deterministically via the provided stream.
    let mut anchors: Vec<(usize, usize)> = Vec::new();
    for (episode, buffer) in store.episodes().iter().enumerate() {
        let t = buffer.transitions.len();
        let mut offset = 0;
        while offset + horizon <= t {
            anchors.push((episode, offset));
            offset += horizon;
        }
    }
    if anchors.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no {horizon}-step windows fit into the stored episodes"
        )));
    }
    if anchors.len() > max_segments {
        anchors.shuffle(rng);
        anchors.truncate(max_segments);
        anchors.sort_unstable();
    }

    let dt_seconds = f64::from(series.step_minutes) * 60.0;
    let mut rows = Vec::new();
    let mut in_pool = ErrorPool::new();
    let mut out_pool = ErrorPool::new();
    let mut out_reward_pairs: Vec<(f64, f64)> = Vec::new();
    let mut rollout_id = 0usize;

    // In-sample: replay historical actions through the surrogate.
    for &(episode, offset) in &anchors {
        let buffer = store.episode(episode);
        let mut zone_pred = buffer.transitions[offset].state.zone_temp_k;
        let mut window_pool = ErrorPool::new();
        let mut reward_pairs = Vec::with_capacity(horizon);
        for l in 0..horizon {
            let tr = &buffer.transitions[offset + l];
            zone_pred = csm.building.predict_next_zone(zone_pred, &tr.state.disturbances, tr.action);
            let err = zone_pred - tr.next_state.zone_temp_k;
            window_pool.push(err);
            in_pool.push(err);
            let price = tr.state.disturbances.current_price();
            let predicted =
                predicted_reward(csm, tr.action, price, tr.next_state.zone_temp_k, reward_ctx);
            reward_pairs.push((tr.reward, predicted));
        }
        rows.push(CsmEvalRow {
            rollout_id,
            horizon_h: horizon,
            in_sample: true,
            rmse_k: window_pool.rmse(),
            mae_k: window_pool.mae(),
            reward_r2: r2(&reward_pairs),
        });
        rollout_id += 1;
    }

    // Out-of-sample: fresh action sequence, surrogate vs true plant from the
    // same operating point.
    for &(episode, offset) in &anchors {
        let buffer = store.episode(episode);
        let start = &buffer.transitions[offset];
        let mut zone_pred = start.state.zone_temp_k;
        let mut zone_true = start.state.zone_temp_k;
        let mut window_pool = ErrorPool::new();
        let mut reward_pairs = Vec::with_capacity(horizon);
        for l in 0..horizon {
            let tr = &buffer.transitions[offset + l];
            let action = if rng.random::<f64>() < oos_on_probability {
                HeatPumpAction::On
            } else {
                HeatPumpAction::Off
            };
            let global = buffer.first_global_step + (offset + l) as u64;
            let ambient = series.ambient[global as usize];
            let price = series.price[global as usize];

            zone_pred = csm.building.predict_next_zone(zone_pred, &tr.state.disturbances, action);
            let (z, power) = plant_step(plant, zone_true, ambient, action, dt_seconds)?;
            zone_true = z;

            let err = zone_pred - zone_true;
            window_pool.push(err);
            out_pool.push(err);

            let true_reward = reward_ctx.reward_of_step(zone_true, power, price);
            let predicted = predicted_reward(csm, action, price, zone_true, reward_ctx);
            reward_pairs.push((true_reward, predicted));
            out_reward_pairs.push((true_reward, predicted));
        }
        rows.push(CsmEvalRow {
            rollout_id,
            horizon_h: horizon,
            in_sample: false,
            rmse_k: window_pool.rmse(),
            mae_k: window_pool.mae(),
            reward_r2: r2(&reward_pairs),
        });
        rollout_id += 1;
    }

    Ok(CsmEvalReport {
        rows,
        in_sample_rmse_k: in_pool.rmse(),
        in_sample_mae_k: in_pool.mae(),
        out_sample_rmse_k: out_pool.rmse(),
        out_sample_mae_k: out_pool.mae(),
        reward_r2: r2(&out_reward_pairs),
    })
}

fn predicted_reward(
    csm: &Csm,
    action: HeatPumpAction,
    price: f64,
    true_next_zone: f64,
    ctx: &RewardContext,
) -> f64 {
    let discomfort_part = -ctx.weights.discomfort
        * discomfort_increment(true_next_zone, &ctx.band, ctx.dt_hours);
    csm.reward.predict_reward(action, price, discomfort_part)
}
