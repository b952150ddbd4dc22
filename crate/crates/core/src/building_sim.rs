//! The real environment: a deterministic discrete-time 1R1C thermal zone
//! heated by an on/off heat pump whose COP degrades with cold ambient air.
//!
//! Episodes advance in strict chronological order: episode n starts at the
//! global step where episode n-1 ended, and by default the zone temperature
//! carries over as well (continuous operation). A config flag restores
//! fixed-temperature resets at episode boundaries for comparison.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exogenous::{DisturbanceVector, ExogenousSeries, TimeIndex, DISTURBANCE_DIM};
use crate::kpi_reward::{KpiLedger, RewardContext};

/// Episode length in control steps: one week at 60-minute steps.
pub const EPISODE_LEN: usize = 168;

/// Physical parameters of the thermal zone and heat pump.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PlantParams {
    /// Zone thermal capacitance, J/K.
    pub c_zone_j_per_k: f64,
    /// Envelope resistance to ambient, K/W.
    pub r_env_k_per_w: f64,
    /// Thermal power delivered at full activation, kW.
    pub hp_thermal_kw: f64,
    /// COP = max(1, cop_base + cop_slope * (T_ambient - 273.15 K)).
    pub cop_base: f64,
    pub cop_slope_per_k: f64,
    pub floor_area_m2: f64,
    /// Constant occupant/equipment gain, kW.
    pub internal_gain_kw: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        // Zone time constant C*R ~= 42 h; full heating raises the zone
        // ~1.4 K per hour. Frozen as the reference plant for all experiments.
        Self {
            c_zone_j_per_k: 1.5e7,
            r_env_k_per_w: 0.010,
            hp_thermal_kw: 6.0,
            cop_base: 3.0,
            cop_slope_per_k: 0.06,
            floor_area_m2: 120.0,
            internal_gain_kw: 0.2,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        if self.c_zone_j_per_k <= 0.0
            || self.r_env_k_per_w <= 0.0
            || self.hp_thermal_kw <= 0.0
            || self.floor_area_m2 <= 0.0
        {
            return Err(Error::InvalidArgument(
                "plant capacitance, resistance, heat pump power and floor area must be positive"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Coefficient of performance at the given ambient temperature, clipped at 1.
    pub fn cop(&self, ambient_k: f64) -> f64 {
        (self.cop_base + self.cop_slope_per_k * (ambient_k - 273.15)).max(1.0)
    }

    /// Electric draw of the heat pump for the given activation.
    pub fn electric_power_kw(&self, action: HeatPumpAction, ambient_k: f64) -> f64 {
        action.signal() * self.hp_thermal_kw / self.cop(ambient_k)
    }

    /// Zone time constant in seconds.
    pub fn time_constant_s(&self) -> f64 {
        self.c_zone_j_per_k * self.r_env_k_per_w
    }
}

/// Discrete heat pump activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatPumpAction {
    Off,
    On,
}

impl HeatPumpAction {
    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Self::Off),
            1 => Ok(Self::On),
            other => Err(Error::InvalidArgument(format!("action index {other} not in {{0,1}}"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Self::Off => 0,
            Self::On => 1,
        }
    }

    pub fn signal(self) -> f64 {
        self.index() as f64
    }
}

/// The agent observation: controllable zone temperature plus the
/// action-invariant disturbances.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub zone_temp_k: f64,
    pub disturbances: DisturbanceVector,
}

impl EnvState {
    /// Flat feature dimension: zone temperature plus the disturbance block.
    pub const FEATURE_DIM: usize = 1 + DISTURBANCE_DIM;

    /// Feature layout: `[zone, time_enc(4), ambient(7), price(7)]`.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::FEATURE_DIM);
        out.push(self.zone_temp_k);
        out.extend(self.disturbances.features());
        out
    }
}

/// One environment interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub action: HeatPumpAction,
    pub next_state: EnvState,
    pub reward: f64,
}

/// Where the environment currently sits in global time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvClock {
    pub global_step: TimeIndex,
    pub episode_index: usize,
    pub step_in_episode: usize,
}

/// One explicit-Euler update of the RC zone.
///
/// Returns the next zone temperature and the electric power drawn over the
/// interval. Deterministic in its inputs.
pub fn plant_step(
    params: &PlantParams,
    zone_temp_k: f64,
    ambient_k: f64,
    action: HeatPumpAction,
    dt_seconds: f64,
) -> Result<(f64, f64)> {
    if !zone_temp_k.is_finite() || !ambient_k.is_finite() || !dt_seconds.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite plant input: zone {zone_temp_k}, ambient {ambient_k}, dt {dt_seconds}"
        )));
    }
    if dt_seconds <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt_seconds}")));
    }
    let heat_w = (ambient_k - zone_temp_k) / params.r_env_k_per_w
        + 1000.0 * (params.internal_gain_kw + action.signal() * params.hp_thermal_kw);
    let next = zone_temp_k + dt_seconds / params.c_zone_j_per_k * heat_w;
    let power_kw = params.electric_power_kw(action, ambient_k);
    Ok((next, power_kw))
}

/// Environment configuration beyond the plant physics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub episode_len: usize,
    /// Global step at which episode 0 begins.
    pub start_step: u64,
    pub initial_zone_temp_k: f64,
    /// Restore fixed-temperature resets at episode boundaries.
    pub reset_between_episodes: bool,
    /// Euler sub-steps per control step, for stiffness headroom.
    pub substeps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_len: EPISODE_LEN,
            start_step: 0,
            initial_zone_temp_k: 294.65,
            reset_between_episodes: false,
            substeps: 1,
        }
    }
}

/// The simulated building, stepped through chronological episodes.
#[derive(Debug, Clone)]
pub struct BuildingEnv {
    params: PlantParams,
    reward_ctx: RewardContext,
    series: Arc<ExogenousSeries>,
    cfg: EnvConfig,
    zone_temp_k: f64,
    episode_index: usize,
    step_in_episode: usize,
    in_episode: bool,
    episode_ledger: KpiLedger,
}

impl BuildingEnv {
    pub fn new(
        params: PlantParams,
        series: Arc<ExogenousSeries>,
        reward_ctx: RewardContext,
        cfg: EnvConfig,
    ) -> Result<Self> {
        params.validate()?;
        if cfg.episode_len == 0 || cfg.substeps == 0 {
            return Err(Error::InvalidArgument("episode_len and substeps must be positive".into()));
        }
        let dt_sub = step_seconds(&series) / cfg.substeps as f64;
        if dt_sub >= params.time_constant_s() {
            return Err(Error::Config(format!(
                "explicit Euler unstable: substep {dt_sub} s exceeds zone time constant {} s",
                params.time_constant_s()
            )));
        }
        Ok(Self {
            params,
            reward_ctx,
            series,
            cfg,
            zone_temp_k: 0.0,
            episode_index: 0,
            step_in_episode: 0,
            in_episode: false,
            episode_ledger: KpiLedger::default(),
        })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn reward_context(&self) -> &RewardContext {
        &self.reward_ctx
    }

    pub fn series(&self) -> &Arc<ExogenousSeries> {
        &self.series
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn clock(&self) -> EnvClock {
        EnvClock {
            global_step: self.series.time_index(self.global_step()),
            episode_index: self.episode_index,
            step_in_episode: self.step_in_episode,
        }
    }

    fn global_step(&self) -> u64 {
        self.cfg.start_step
            + (self.episode_index * self.cfg.episode_len + self.step_in_episode) as u64
    }

    /// KPI totals accumulated within the current episode.
    pub fn episode_ledger(&self) -> &KpiLedger {
        &self.episode_ledger
    }

    /// Begin the next chronological episode and return its initial state.
    ///
    /// Episode 0 starts at the configured initial zone temperature. Later
    /// episodes carry the zone temperature over from the previous episode
    /// unless `reset_between_episodes` is set.
    pub fn reset(&mut self) -> Result<EnvState> {
        if self.in_episode {
            return Err(Error::Protocol(format!(
                "reset during episode {} at step {}",
                self.episode_index, self.step_in_episode
            )));
        }
        if self.episode_index == 0 || self.cfg.reset_between_episodes {
            self.zone_temp_k = self.cfg.initial_zone_temp_k;
        }
        self.step_in_episode = 0;
        self.episode_ledger = KpiLedger::default();
        // Fail early if the series cannot cover this episode plus the
        // forecast margin of its final next-state.
        let last_needed = self.cfg.start_step
            + ((self.episode_index + 1) * self.cfg.episode_len) as u64;
        self.series.disturbance_at(self.series.time_index(last_needed))?;
        self.in_episode = true;
        self.state()
    }

    /// The observation at the current clock position.
    pub fn state(&self) -> Result<EnvState> {
        let d = self.series.disturbance_at(self.series.time_index(self.global_step()))?;
        Ok(EnvState { zone_temp_k: self.zone_temp_k, disturbances: d })
    }

    /// Apply one action: advance the plant, the clock and the KPI ledger.
    pub fn step(&mut self, action: HeatPumpAction) -> Result<Transition> {
        if !self.in_episode || self.step_in_episode >= self.cfg.episode_len {
            return Err(Error::Protocol(format!(
                "step on finished episode {} (t = {})",
                self.episode_index, self.step_in_episode
            )));
        }
        let state = self.state()?;
        let global = self.global_step() as usize;
        let ambient = self.series.ambient[global];
        let price = self.series.price[global];

        let dt = step_seconds(&self.series);
        let dt_sub = dt / self.cfg.substeps as f64;
        let mut zone = self.zone_temp_k;
        let mut power_kw = 0.0;
        for _ in 0..self.cfg.substeps {
            let (z, p) = plant_step(&self.params, zone, ambient, action, dt_sub)?;
            zone = z;
            power_kw = p;
        }
        self.zone_temp_k = zone;

        let reward = self.reward_ctx.reward_of_step(zone, power_kw, price);
        let (discomfort, cost) = self.reward_ctx.step_kpis(zone, power_kw, price);
        self.episode_ledger.add_step(discomfort, cost);

        self.step_in_episode += 1;
        if self.step_in_episode == self.cfg.episode_len {
            self.in_episode = false;
            self.episode_index += 1;
            self.step_in_episode = 0;
        }

        let next_step = if self.in_episode {
            self.global_step()
        } else {
            self.cfg.start_step + (self.episode_index * self.cfg.episode_len) as u64
        };
        let next_d = self.series.disturbance_at(self.series.time_index(next_step))?;
        let next_state = EnvState { zone_temp_k: zone, disturbances: next_d };

        Ok(Transition { state, action, next_state, reward })
    }
}

fn step_seconds(series: &ExogenousSeries) -> f64 {
    f64::from(series.step_minutes) * 60.0
}

/// One row of the trajectory dump. `zone_K` is the pre-step zone temperature
/// (the state in which the action was taken).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub global_step: u64,
    pub episode: usize,
    pub t: usize,
    pub zone_k: f64,
    pub ambient_k: f64,
    pub price: f64,
    pub action: u8,
    pub power_kw: f64,
    pub reward: f64,
}

pub const TRAJECTORY_CSV_HEADER: &str =
    "global_step,episode,t,zone_K,ambient_K,price,action,power_kw,reward";

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{TRAJECTORY_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{}",
            r.global_step, r.episode, r.t, r.zone_k, r.ambient_k, r.price, r.action, r.power_kw, r.reward
        )?;
    }
    Ok(())
}
