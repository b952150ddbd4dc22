//! Ablation grids: vary one Dyna hyperparameter at a time (synth:real ratio,
//! rollout length, cost weight) while holding the others at their baseline
//! values. Cells shared between axes run once and are reused.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exogenous::STEPS_PER_WEEK;

use super::config::Config;
use super::experiments::{execute_run, ExperimentId, RunKind};
use super::periods::find_test_periods;
use super::report;

/// The evaluated settings: one-at-a-time sweeps around the baseline cell
/// (ratio 20, rollout length 24, cost weight 100), five episodes, three seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub synth_ratios: Vec<f64>,
    pub rollout_lens: Vec<usize>,
    pub cost_weights: Vec<f64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            episodes: 5,
            synth_ratios: vec![10.0, 20.0, 30.0, 50.0, 100.0],
            rollout_lens: vec![6, 12, 24, 48, 96],
            cost_weights: vec![10.0, 50.0, 100.0, 200.0],
        }
    }
}

impl AblationGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// All distinct cells across the three axes, baseline deduplicated.
    fn cells(&self, base: &Config) -> Vec<AblationCell> {
        let base_ratio = base.dyna.synth_ratio;
        let base_len = base.dyna.rollout_len;
        let base_w_cost = base.reward.w_cost;
        let mut seen = BTreeSet::new();
        let mut cells = Vec::new();
        let mut push = |axis: &str, ratio: f64, len: usize, w_cost: f64, cells: &mut Vec<AblationCell>| {
            let key = (format!("{ratio}"), len, format!("{w_cost}"));
            if seen.insert(key) {
                cells.push(AblationCell {
                    axis: axis.to_string(),
                    synth_ratio: ratio,
                    rollout_len: len,
                    w_cost,
                });
            }
        };
        for &ratio in &self.synth_ratios {
            push("ratio", ratio, base_len, base_w_cost, &mut cells);
        }
        for &len in &self.rollout_lens {
            push("rollout", base_ratio, len, base_w_cost, &mut cells);
        }
        for &w in &self.cost_weights {
            push("w_cost", base_ratio, base_len, w, &mut cells);
        }
        cells
    }
}

#[derive(Debug, Clone)]
struct AblationCell {
    axis: String,
    synth_ratio: f64,
    rollout_len: usize,
    w_cost: f64,
}

impl AblationCell {
    fn label(&self) -> String {
        format!("ratio{}_len{}_wc{}", self.synth_ratio, self.rollout_len, self.w_cost)
    }
}

/// Run the grid and aggregate per-cell learning curves and KPI scatter data.
pub fn run_ablations(base: &Config, grid: &AblationGrid, out_dir: &Path) -> Result<()> {
    if grid.seeds.is_empty() || grid.episodes == 0 {
        return Err(Error::Config("ablation grid needs seeds and a positive episode count".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let series = super::experiments::build_series(base)?;
    let (peak, typical) = find_test_periods(&series, base.experiment.typical_start_day)?;
    let experiment = ExperimentId { kind: RunKind::CounterDyna, episodes: grid.episodes };

    let cells = grid.cells(base);
    let mut rows: Vec<String> = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();

    for cell in &cells {
        // Rollout lengths must fit the episode: L <= T - 1.
        if cell.rollout_len + 1 > STEPS_PER_WEEK {
            return Err(Error::Config(format!(
                "rollout length {} does not fit a {STEPS_PER_WEEK}-step episode",
                cell.rollout_len
            )));
        }
        let mut config = base.clone();
        config.dyna.synth_ratio = cell.synth_ratio;
        config.dyna.rollout_len = cell.rollout_len;
        config.reward.w_cost = cell.w_cost;
        config.schedule(grid.episodes)?;

        for &seed in &grid.seeds {
            let run_id = format!("{}_seed{seed}", cell.label());
            let run_dir = out_dir.join(&run_id);
            if run_dir.join("kpi_summary.csv").exists() {
                // Cell already produced by an earlier axis or run: reuse.
            } else if let Err(e) =
                execute_run(&config, &series, &peak, &typical, experiment, seed, &run_dir)
            {
                warn!("ablation run {run_id} failed: {e}");
                failures.push((run_id, e.to_string()));
                continue;
            }
            for (period, cost, discomfort) in report::read_kpi_summary(&run_dir)? {
                rows.push(format!(
                    "{},{},{},{},{seed},{period},{cost},{discomfort}",
                    cell.axis, cell.synth_ratio, cell.rollout_len, cell.w_cost
                ));
            }
        }
    }

    let scatter_path = out_dir.join("ablation_scatter.csv");
    let mut file = std::io::BufWriter::new(std::fs::File::create(scatter_path)?);
    writeln!(file, "axis,synth_ratio,rollout_len,w_cost,seed,period,cost_eur_m2,discomfort_kh")?;
    for row in &rows {
        writeln!(file, "{row}")?;
    }
    drop(file);

    if !failures.is_empty() {
        let mut file =
            std::io::BufWriter::new(std::fs::File::create(out_dir.join("failures.txt"))?);
        for (run_id, message) in &failures {
            writeln!(file, "{run_id}: {message}")?;
        }
    }

    report::aggregate(out_dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_matches_reference_values() {
        let grid = AblationGrid::default();
        assert_eq!(grid.synth_ratios, vec![10.0, 20.0, 30.0, 50.0, 100.0]);
        assert_eq!(grid.rollout_lens, vec![6, 12, 24, 48, 96]);
        assert_eq!(grid.episodes, 5);
        assert_eq!(grid.seeds.len(), 3);
    }

    #[test]
    fn baseline_cell_is_deduplicated() {
        let grid = AblationGrid::default();
        let base = Config::default();
        let cells = grid.cells(&base);
        // 5 ratios + 5 lens + 4 weights, with (20, 24, 100) appearing on all
        // three axes: 14 - 2 = 12 distinct cells.
        assert_eq!(cells.len(), 12);
        let baseline: Vec<_> = cells
            .iter()
            .filter(|c| c.synth_ratio == 20.0 && c.rollout_len == 24 && c.w_cost == 100.0)
            .collect();
        assert_eq!(baseline.len(), 1);
    }

    #[test]
    fn largest_rollout_len_fits_episode() {
        // L = 96 against T = 168: anchor range {0, ..., 71} stays valid.
        assert!(96 + 1 <= STEPS_PER_WEEK);
    }
}
