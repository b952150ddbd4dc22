//! Counter-Dyna for HVAC control: a simulated RC building, a counterfactual
//! surrogate model, PPO, the Dyna orchestration loop with chronological
//! episodes, baseline controllers, and a reproducible experiment harness.

pub mod building_sim;
pub mod dyna;
pub mod error;
pub mod exogenous;
pub mod harness;
pub mod kpi_reward;
pub mod neural;
pub mod ppo;
pub mod seeding;
pub mod surrogate;

pub use building_sim::{
    BuildingEnv, EnvClock, EnvConfig, EnvState, HeatPumpAction, PlantParams, Transition,
    EPISODE_LEN,
};
pub use dyna::{
    align_training_window, run_counter_dyna, run_model_free, CsmSettings, DynaSchedule,
    EpisodeBuffer, EpisodeRecord, ExperienceStore, RunResult,
};
pub use error::{Error, Result};
pub use exogenous::{
    load_series_csv, synthesize_series, DisturbanceVector, ExogenousSeries, SynthesisProfile,
    TimeIndex,
};
pub use kpi_reward::{ComfortBand, KpiLedger, RewardContext, RewardWeights};
pub use neural::{Activation, Adam, FitConfig, Mlp};
pub use ppo::{compute_gae, PolicyValueNets, PpoAgent, PpoHyper, UpdateDiagnostics};
pub use surrogate::{
    fit_building_model, fit_reward_model, generate_rollout, BuildingModel, Csm, CsmHyper,
    Normalizer, RewardDecomposition, RewardModel, SyntheticRollout,
};
