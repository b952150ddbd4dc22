//! Thermal-discomfort and operational-cost KPIs and the weighted step reward.
//!
//! Discomfort is the time integral of the comfort-band slack in Kelvin-hours;
//! cost is the floor-area-normalized integral of price times electric power
//! in EUR/m2. Both use the rectangle rule at control-step resolution, with
//! the slack evaluated on the post-step zone temperature.

use crate::error::{Error, Result};

/// Comfort band in Kelvin. Defaults to 21-24 degrees Celsius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComfortBand {
    pub lower_k: f64,
    pub upper_k: f64,
}

impl Default for ComfortBand {
    fn default() -> Self {
        Self { lower_k: 294.15, upper_k: 297.15 }
    }
}

impl ComfortBand {
    pub fn new(lower_k: f64, upper_k: f64) -> Result<Self> {
        if !(lower_k < upper_k) {
            return Err(Error::InvalidArgument(format!(
                "comfort band lower {lower_k} must be below upper {upper_k}"
            )));
        }
        Ok(Self { lower_k, upper_k })
    }

    pub fn midpoint_k(&self) -> f64 {
        0.5 * (self.lower_k + self.upper_k)
    }
}

/// Nonnegative weights of the two reward terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub discomfort: f64,
    pub cost: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { discomfort: 1.0, cost: 100.0 }
    }
}

/// Running KPI totals over a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KpiLedger {
    pub discomfort_kh: f64,
    pub cost_eur_m2: f64,
    pub steps: u64,
}

impl KpiLedger {
    pub fn add_step(&mut self, discomfort_kh: f64, cost_eur_m2: f64) {
        self.discomfort_kh += discomfort_kh;
        self.cost_eur_m2 += cost_eur_m2;
        self.steps += 1;
    }
}

/// Component-wise sum of two ledgers. Associative and commutative with the
/// zero ledger as identity.
pub fn ledger_merge(a: &KpiLedger, b: &KpiLedger) -> KpiLedger {
    KpiLedger {
        discomfort_kh: a.discomfort_kh + b.discomfort_kh,
        cost_eur_m2: a.cost_eur_m2 + b.cost_eur_m2,
        steps: a.steps + b.steps,
    }
}

/// Comfort-band slack: zero inside the band, distance to the nearest band
/// edge outside it. Always nonnegative.
pub fn slack(zone_temp_k: f64, band: &ComfortBand) -> f64 {
    (band.lower_k - zone_temp_k).max(0.0) + (zone_temp_k - band.upper_k).max(0.0)
}

/// Kelvin-hours of discomfort accumulated over one step.
pub fn discomfort_increment(zone_temp_k: f64, band: &ComfortBand, dt_hours: f64) -> f64 {
    slack(zone_temp_k, band) * dt_hours
}

/// EUR/m2 of operational cost accumulated over one step. Negative prices
/// yield negative increments (being paid to consume).
pub fn cost_increment(
    electric_power_kw: f64,
    price_eur_per_kwh: f64,
    floor_area_m2: f64,
    dt_hours: f64,
) -> f64 {
    price_eur_per_kwh * electric_power_kw * dt_hours / floor_area_m2
}

/// Everything needed to turn one step outcome into KPIs and a reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub weights: RewardWeights,
    pub band: ComfortBand,
    pub floor_area_m2: f64,
    pub dt_hours: f64,
}

impl RewardContext {
    /// KPI increments for one step, evaluated on the post-step zone temperature.
    pub fn step_kpis(&self, zone_after_k: f64, power_kw: f64, price: f64) -> (f64, f64) {
        let discomfort = discomfort_increment(zone_after_k, &self.band, self.dt_hours);
        let cost = cost_increment(power_kw, price, self.floor_area_m2, self.dt_hours);
        (discomfort, cost)
    }

    /// Negative weighted sum of the step's discomfort and cost increments.
    pub fn reward_of_step(&self, zone_after_k: f64, power_kw: f64, price: f64) -> f64 {
        let (discomfort, cost) = self.step_kpis(zone_after_k, power_kw, price);
        -(self.weights.discomfort * discomfort + self.weights.cost * cost)
    }
}
