//! Run configuration: a TOML file with one section per subsystem, mirroring
//! the hyperparameter tables. Every field has the reference default, so an
//! empty file is a valid full configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::building_sim::{EnvConfig, PlantParams, EPISODE_LEN};
use crate::dyna::{CsmSettings, DynaSchedule};
use crate::error::{Error, Result};
use crate::exogenous::{SynthesisProfile, STEPS_PER_YEAR};
use crate::kpi_reward::{ComfortBand, RewardContext, RewardWeights};
use crate::ppo::PpoHyper;
use crate::surrogate::{CsmHyper, RewardDecomposition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentSection,
    pub exogenous: ExogenousSection,
    pub plant: PlantParams,
    pub reward: RewardSection,
    pub env: EnvSection,
    pub ppo: PpoSection,
    pub csm: CsmSection,
    pub dyna: DynaSection,
    pub pi: PiSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Distinct seeds; one independent run per seed per experiment.
    pub seeds: Vec<u64>,
    /// Experiment ids such as "counter-dyna-5" or "mf-50".
    pub experiments: Vec<String>,
    /// Baseline controllers evaluated on the test periods.
    pub baselines: Vec<String>,
    /// Evaluation segments per mode in the surrogate accuracy report.
    pub eval_segments: usize,
    /// On-probability of the random action sequences used for
    /// out-of-sample surrogate queries.
    pub oos_on_probability: f64,
    /// Start of the typical (spring) test period, day of year, 0-based.
    pub typical_start_day: u32,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: (1..=30).collect(),
            experiments: vec![
                "counter-dyna-5".into(),
                "counter-dyna-10".into(),
                "mf-10".into(),
                "mf-50".into(),
            ],
            baselines: vec!["rule-based".into(), "pi".into()],
            eval_segments: 20,
            oos_on_probability: 0.3,
            // April 19th: 31 + 28 + 31 + 18 days into the year.
            typical_start_day: 108,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExogenousSection {
    /// Seed of the weather/price series. Shared by all runs: run seeds only
    /// randomize the agents, matching a fixed real-world history.
    pub seed: u64,
    /// Series length in years. Test periods live in the final year so that
    /// long trainings fit before them.
    pub years: usize,
    /// Load this CSV instead of synthesizing (escape hatch for real data).
    pub csv_path: Option<String>,
    pub profile: SynthesisProfile,
}

impl Default for ExogenousSection {
    fn default() -> Self {
        Self { seed: 7, years: 2, csv_path: None, profile: SynthesisProfile::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub comfort_lower_k: f64,
    pub comfort_upper_k: f64,
    pub w_discomfort: f64,
    pub w_cost: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let band = ComfortBand::default();
        let weights = RewardWeights::default();
        Self {
            comfort_lower_k: band.lower_k,
            comfort_upper_k: band.upper_k,
            w_discomfort: weights.discomfort,
            w_cost: weights.cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub initial_zone_temp_k: f64,
    pub reset_between_episodes: bool,
    pub substeps: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        let cfg = EnvConfig::default();
        Self {
            initial_zone_temp_k: cfg.initial_zone_temp_k,
            reset_between_episodes: cfg.reset_between_episodes,
            substeps: cfg.substeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub n_steps: usize,
    pub n_epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    pub hidden: Vec<usize>,
}

impl Default for PpoSection {
    fn default() -> Self {
        let h = PpoHyper::default();
        Self {
            lr: h.lr,
            gamma: h.gamma,
            batch_size: h.batch_size,
            n_steps: h.n_steps,
            n_epochs: h.n_epochs,
            clip: h.clip,
            entropy_coef: h.entropy_coef,
            value_coef: h.value_coef,
            gae_lambda: h.gae_lambda,
            max_grad_norm: h.max_grad_norm,
            normalize_advantage: h.normalize_advantage,
            hidden: h.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsmSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fit the literal all-in-one reward regression instead of learning only
    /// the cost part.
    pub reward_model_full: bool,
}

impl Default for CsmSection {
    fn default() -> Self {
        let h = CsmHyper::default();
        Self {
            hidden: h.hidden,
            epochs: h.epochs,
            batch_size: h.batch_size,
            lr: h.lr,
            reward_model_full: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynaSection {
    pub synth_ratio: f64,
    pub rollout_len: usize,
}

impl Default for DynaSection {
    fn default() -> Self {
        let s = DynaSchedule::default();
        Self { synth_ratio: s.synth_ratio, rollout_len: s.rollout_len }
    }
}

/// PI baseline gains, tuned once on the reference plant via the step-response
/// check in the controller tests and frozen here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiSection {
    pub kp: f64,
    pub ki: f64,
    pub integral_limit: f64,
}

impl Default for PiSection {
    fn default() -> Self {
        Self { kp: 1.0, ki: 0.15, integral_limit: 10.0 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: Config =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &s in &self.experiment.seeds {
            if !seen.insert(s) {
                return Err(Error::Config(format!("duplicate seed {s}")));
            }
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.ppo_hyper().validate()?;
        ComfortBand::new(self.reward.comfort_lower_k, self.reward.comfort_upper_k)?;
        Ok(())
    }

    /// Shrink networks and seed count for CI runs.
    pub fn apply_fast_profile(&mut self) {
        self.ppo.hidden = vec![64, 64];
        self.csm.hidden = vec![64, 64];
        if self.experiment.seeds.len() > 5 {
            self.experiment.seeds.truncate(5);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn comfort_band(&self) -> ComfortBand {
        ComfortBand { lower_k: self.reward.comfort_lower_k, upper_k: self.reward.comfort_upper_k }
    }

    pub fn reward_context(&self) -> RewardContext {
        RewardContext {
            weights: RewardWeights {
                discomfort: self.reward.w_discomfort,
                cost: self.reward.w_cost,
            },
            band: self.comfort_band(),
            floor_area_m2: self.plant.floor_area_m2,
            dt_hours: f64::from(self.exogenous.profile.step_minutes) / 60.0,
        }
    }

    pub fn env_config(&self, start_step: u64) -> EnvConfig {
        EnvConfig {
            episode_len: EPISODE_LEN,
            start_step,
            initial_zone_temp_k: self.env.initial_zone_temp_k,
            reset_between_episodes: self.env.reset_between_episodes,
            substeps: self.env.substeps,
        }
    }

    pub fn ppo_hyper(&self) -> PpoHyper {
        PpoHyper {
            lr: self.ppo.lr,
            gamma: self.ppo.gamma,
            batch_size: self.ppo.batch_size,
            n_steps: self.ppo.n_steps,
            n_epochs: self.ppo.n_epochs,
            clip: self.ppo.clip,
            entropy_coef: self.ppo.entropy_coef,
            value_coef: self.ppo.value_coef,
            gae_lambda: self.ppo.gae_lambda,
            max_grad_norm: self.ppo.max_grad_norm,
            normalize_advantage: self.ppo.normalize_advantage,
            hidden: self.ppo.hidden.clone(),
        }
    }

    pub fn csm_settings(&self) -> CsmSettings {
        CsmSettings {
            hyper: CsmHyper {
                hidden: self.csm.hidden.clone(),
                epochs: self.csm.epochs,
                batch_size: self.csm.batch_size,
                lr: self.csm.lr,
            },
            decomposition: if self.csm.reward_model_full {
                RewardDecomposition::Full
            } else {
                RewardDecomposition::CostOnly
            },
        }
    }

    pub fn schedule(&self, n_episodes: usize) -> Result<DynaSchedule> {
        DynaSchedule::new(n_episodes, EPISODE_LEN, self.dyna.rollout_len, self.dyna.synth_ratio)
    }

    /// Series length implied by the configured year count, with margin for
    /// the forecast horizon and the terminal next-state.
    pub fn series_horizon_steps(&self) -> usize {
        self.exogenous.years.max(1) * STEPS_PER_YEAR + 8
    }
}
