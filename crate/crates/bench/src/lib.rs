//! Shared fixture builders for the criterion benchmarks.

use std::sync::Arc;

use counterdyna_core::building_sim::{BuildingEnv, EnvConfig, HeatPumpAction, PlantParams};
use counterdyna_core::dyna::{EpisodeBuffer, ExperienceStore};
use counterdyna_core::exogenous::{synthesize_series, ExogenousSeries, SynthesisProfile};
use counterdyna_core::kpi_reward::{ComfortBand, RewardContext, RewardWeights};
use counterdyna_core::EPISODE_LEN;

pub fn reward_context() -> RewardContext {
    RewardContext {
        weights: RewardWeights::default(),
        band: ComfortBand::default(),
        floor_area_m2: PlantParams::default().floor_area_m2,
        dt_hours: 1.0,
    }
}

pub fn series(weeks: usize) -> Arc<ExogenousSeries> {
    Arc::new(
        synthesize_series(5, (weeks + 1) * EPISODE_LEN + 16, &SynthesisProfile::default())
            .expect("series synthesis"),
    )
}

/// A store of `weeks` real episodes driven by a fixed duty-cycle pattern.
pub fn experience_store(weeks: usize) -> ExperienceStore {
    let series = series(weeks);
    let mut env = BuildingEnv::new(
        PlantParams::default(),
        series,
        reward_context(),
        EnvConfig::default(),
    )
    .expect("env");
    let pattern = [1usize, 0, 0, 1, 0, 1, 1, 0];
    let mut store = ExperienceStore::default();
    for _ in 0..weeks {
        env.reset().expect("reset");
        let first = env.clock().global_step.step;
        let mut transitions = Vec::with_capacity(EPISODE_LEN);
        for t in 0..EPISODE_LEN {
            let action = HeatPumpAction::from_index(pattern[t % pattern.len()]).expect("action");
            transitions.push(env.step(action).expect("step"));
        }
        store
            .push_episode(EpisodeBuffer { first_global_step: first, transitions })
            .expect("chronology");
    }
    store
}
