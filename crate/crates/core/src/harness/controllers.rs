//! Baseline controllers and the greedy policy wrapper used at test time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::building_sim::{EnvState, HeatPumpAction};
use crate::error::Result;
use crate::ppo::PolicyValueNets;

/// A closed-loop controller: a function of the current state plus whatever
/// internal memory the controller keeps. No access to the future beyond the
/// forecasts already contained in the state.
pub trait Controller {
    fn act(&mut self, state: &EnvState) -> Result<HeatPumpAction>;
    fn reset(&mut self) {}
}

/// Bang-bang tracking of a fixed setpoint: on strictly below, off otherwise
/// (a zone exactly at the setpoint leaves the pump off).
#[derive(Debug, Clone)]
pub struct RuleBased {
    pub setpoint_k: f64,
}

impl Default for RuleBased {
    fn default() -> Self {
        Self { setpoint_k: 294.65 } // 21.5 C
    }
}

impl Controller for RuleBased {
    fn act(&mut self, state: &EnvState) -> Result<HeatPumpAction> {
        Ok(if state.zone_temp_k < self.setpoint_k {
            HeatPumpAction::On
        } else {
            HeatPumpAction::Off
        })
    }
}

/// PI on the band-midpoint tracking error with anti-windup clamping of the
/// integral; the continuous output is thresholded at 0.5 into {0, 1}.
#[derive(Debug, Clone)]
pub struct PiController {
    pub target_k: f64,
    pub kp: f64,
    pub ki: f64,
    pub integral_limit: f64,
    pub dt_hours: f64,
    integral: f64,
}

impl PiController {
    pub fn new(target_k: f64, kp: f64, ki: f64, integral_limit: f64, dt_hours: f64) -> Self {
        Self { target_k, kp, ki, integral_limit, dt_hours, integral: 0.0 }
    }

    /// Reference gains for the default plant; see the step-response test.
    pub fn with_default_gains(target_k: f64) -> Self {
        Self::new(target_k, 1.0, 0.15, 10.0, 1.0)
    }

    pub fn control_signal(&mut self, zone_temp_k: f64) -> f64 {
        let error = self.target_k - zone_temp_k;
        self.integral = (self.integral + error * self.dt_hours)
            .clamp(-self.integral_limit, self.integral_limit);
        self.kp * error + self.ki * self.integral
    }
}

impl Controller for PiController {
    fn act(&mut self, state: &EnvState) -> Result<HeatPumpAction> {
        let u = self.control_signal(state.zone_temp_k);
        Ok(if u > 0.5 { HeatPumpAction::On } else { HeatPumpAction::Off })
    }

    fn reset(&mut self) {
        self.integral = 0.0;
    }
}

/// Argmax wrapper around trained policy nets for deterministic evaluation.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub nets: PolicyValueNets,
}

impl Controller for GreedyPolicy {
    fn act(&mut self, state: &EnvState) -> Result<HeatPumpAction> {
        self.nets.greedy_action(state)
    }
}

/// Seeded random on/off controller. Used as the "new action sequence" source
/// for out-of-sample surrogate queries.
#[derive(Debug, Clone)]
pub struct RandomBangBang {
    pub on_probability: f64,
    rng: ChaCha8Rng,
}

impl RandomBangBang {
    pub fn new(on_probability: f64, rng: ChaCha8Rng) -> Self {
        Self { on_probability, rng }
    }
}

impl Controller for RandomBangBang {
    fn act(&mut self, _state: &EnvState) -> Result<HeatPumpAction> {
        Ok(if self.rng.random::<f64>() < self.on_probability {
            HeatPumpAction::On
        } else {
            HeatPumpAction::Off
        })
    }
}
