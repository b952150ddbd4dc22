//! Test-period selection: the peak heating period is the coldest stretch of
//! consecutive weeks in the evaluation year, the typical heating period a
//! fixed spring fortnight. Both are pure functions of the series, so they
//! are frozen per weather seed.

use crate::error::{Error, Result};
use crate::exogenous::{ExogenousSeries, STEPS_PER_WEEK, STEPS_PER_YEAR};

/// Length of each test period: two weeks.
pub const TEST_PERIOD_STEPS: usize = 2 * STEPS_PER_WEEK;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestPeriod {
    pub name: String,
    pub start_step: u64,
    pub len_steps: usize,
}

impl TestPeriod {
    pub fn end_step(&self) -> u64 {
        self.start_step + self.len_steps as u64
    }

    pub fn overlaps(&self, other: &TestPeriod) -> bool {
        self.start_step < other.end_step() && other.start_step < self.end_step()
    }
}

/// First step of the year the test periods live in: the last whole year of
/// the series, so that long chronological trainings fit before it.
pub fn evaluation_year_start(series: &ExogenousSeries) -> u64 {
    let years = series.len() / STEPS_PER_YEAR;
    if years >= 2 {
        ((years - 1) * STEPS_PER_YEAR) as u64
    } else {
        0
    }
}

/// The two evaluation windows: (peak, typical).
pub fn find_test_periods(
    series: &ExogenousSeries,
    typical_start_day: u32,
) -> Result<(TestPeriod, TestPeriod)> {
    let year_start = evaluation_year_start(series) as usize;
    let margin = 8; // forecast horizon + terminal next-state
    let search_end = (year_start + STEPS_PER_YEAR).min(series.len().saturating_sub(margin));
    if search_end <= year_start + TEST_PERIOD_STEPS {
        return Err(Error::Range(format!(
            "series too short for a {TEST_PERIOD_STEPS}-step test period"
        )));
    }

    // Coldest two consecutive weeks by summed ambient temperature.
    let mut window: f64 = series.ambient[year_start..year_start + TEST_PERIOD_STEPS].iter().sum();
    let mut best_sum = window;
    let mut best_start = year_start;
    for start in year_start + 1..=search_end - TEST_PERIOD_STEPS {
        window += series.ambient[start + TEST_PERIOD_STEPS - 1] - series.ambient[start - 1];
        if window < best_sum {
            best_sum = window;
            best_start = start;
        }
    }
    let peak = TestPeriod {
        name: "peak".into(),
        start_step: best_start as u64,
        len_steps: TEST_PERIOD_STEPS,
    };

    let typical_start = year_start as u64 + u64::from(typical_start_day) * 24;
    let typical = TestPeriod {
        name: "typical".into(),
        start_step: typical_start,
        len_steps: TEST_PERIOD_STEPS,
    };
    if typical.end_step() as usize + margin > series.len() {
        return Err(Error::Range("typical test period exceeds the series".into()));
    }
    // Chronological trainings end at the peak boundary, so the peak window
    // must close before the typical one opens or test isolation breaks.
    if peak.end_step() > typical.start_step {
        return Err(Error::Config(format!(
            "peak period (steps {}..{}) does not precede typical period (start {})",
            peak.start_step,
            peak.end_step(),
            typical.start_step
        )));
    }
    Ok((peak, typical))
}
