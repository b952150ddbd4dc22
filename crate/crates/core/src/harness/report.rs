//! Aggregation over finished run directories. Everything is recomputed from
//! the per-run CSV files rather than in-memory state, so `counterdyna report`
//! on an output directory reproduces exactly what the suite wrote.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Discomfort filters (Kelvin-hours) for best-run selection: the strict
/// peak-period threshold and the looser savings-comparison threshold are
/// reported separately.
pub const BEST_RUN_FILTERS_KH: [f64; 2] = [30.0, 100.0];

#[derive(Debug, Clone)]
struct RunFiles {
    experiment: String,
    seed: u64,
    dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Kpis {
    cost: f64,
    discomfort: f64,
}

#[derive(Debug, Clone)]
struct ParsedRun {
    experiment: String,
    seed: u64,
    curve: Vec<(usize, f64)>,
    peak: Kpis,
    typical: Kpis,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: format!("{}: {}", path.display(), message.into()) }
}

fn read_csv_rows(path: &Path, expected_header: &str) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != expected_header {
                return Err(parse_error(path, 1, format!("unexpected header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(line.split(',').map(str::to_string).collect());
    }
    Ok(rows)
}

fn discover_runs(out_dir: &Path) -> Result<Vec<RunFiles>> {
    let mut runs = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(out_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for dir in entries {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if !dir.join("kpi_summary.csv").exists() {
            continue;
        }
        if name.starts_with("baseline_") {
            continue;
        }
        let Some((experiment, seed_part)) = name.rsplit_once("_seed") else {
            continue;
        };
        let Ok(seed) = seed_part.parse::<u64>() else {
            continue;
        };
        runs.push(RunFiles { experiment: experiment.to_string(), seed, dir });
    }
    Ok(runs)
}

fn parse_run(files: &RunFiles) -> Result<ParsedRun> {
    let curve_path = files.dir.join("learning_curve.csv");
    let curve_rows = read_csv_rows(&curve_path, crate::dyna::LEARNING_CURVE_CSV_HEADER)?;
    let mut curve = Vec::with_capacity(curve_rows.len());
    for (i, row) in curve_rows.iter().enumerate() {
        if row.len() != 5 {
            return Err(parse_error(&curve_path, i + 2, "expected 5 columns"));
        }
        let episode: usize =
            row[0].parse().map_err(|_| parse_error(&curve_path, i + 2, "bad episode"))?;
        let reward: f64 =
            row[1].parse().map_err(|_| parse_error(&curve_path, i + 2, "bad reward"))?;
        curve.push((episode, reward));
    }

    let kpi_path = files.dir.join("kpi_summary.csv");
    let kpi_rows = read_csv_rows(&kpi_path, super::experiments::KPI_SUMMARY_CSV_HEADER)?;
    let mut peak = None;
    let mut typical = None;
    for (i, row) in kpi_rows.iter().enumerate() {
        if row.len() != 5 {
            return Err(parse_error(&kpi_path, i + 2, "expected 5 columns"));
        }
        let cost: f64 = row[3].parse().map_err(|_| parse_error(&kpi_path, i + 2, "bad cost"))?;
        let discomfort: f64 =
            row[4].parse().map_err(|_| parse_error(&kpi_path, i + 2, "bad discomfort"))?;
        match row[2].as_str() {
            "peak" => peak = Some(Kpis { cost, discomfort }),
            "typical" => typical = Some(Kpis { cost, discomfort }),
            other => return Err(parse_error(&kpi_path, i + 2, format!("bad period `{other}`"))),
        }
    }
    Ok(ParsedRun {
        experiment: files.experiment.clone(),
        seed: files.seed,
        curve,
        peak: peak.ok_or_else(|| parse_error(&kpi_path, 0, "missing peak row"))?,
        typical: typical.ok_or_else(|| parse_error(&kpi_path, 0, "missing typical row"))?,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate all run directories under `out_dir`. Writes
/// `aggregate_learning_curves.csv`, `kpi_distributions.csv`,
/// `best_runs.csv`, `best_runs_scatter.csv` and `summary.txt`.
pub fn aggregate(out_dir: &Path) -> Result<()> {
    let files = discover_runs(out_dir)?;
    let mut parsed = Vec::with_capacity(files.len());
    for f in &files {
        parsed.push(parse_run(f)?);
    }
    parsed.sort_by(|a, b| (&a.experiment, a.seed).cmp(&(&b.experiment, b.seed)));

    let mut by_experiment: BTreeMap<String, Vec<&ParsedRun>> = BTreeMap::new();
    for run in &parsed {
        by_experiment.entry(run.experiment.clone()).or_default().push(run);
    }

    // Learning curves: mean and population std across seeds, per episode.
    {
        let path = out_dir.join("aggregate_learning_curves.csv");
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "experiment,episode,mean_reward,std_reward,n_seeds")?;
        for (experiment, runs) in &by_experiment {
            let max_len = runs.iter().map(|r| r.curve.len()).max().unwrap_or(0);
            for episode in 0..max_len {
                let values: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.curve.get(episode).map(|&(_, reward)| reward))
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&values);
                writeln!(file, "{experiment},{episode},{mean},{std},{}", values.len())?;
            }
        }
    }

    // KPI distributions: one row per run and period (box-plot source data).
    {
        let path = out_dir.join("kpi_distributions.csv");
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "experiment,seed,period,cost_eur_m2,discomfort_kh")?;
        for run in &parsed {
            writeln!(
                file,
                "{},{},peak,{},{}",
                run.experiment, run.seed, run.peak.cost, run.peak.discomfort
            )?;
            writeln!(
                file,
                "{},{},typical,{},{}",
                run.experiment, run.seed, run.typical.cost, run.typical.discomfort
            )?;
        }
    }

    // Best-run selection per experiment and filter: lowest peak-period cost
    // among runs whose peak discomfort stays below the filter.
    let mut best_rows: Vec<String> = Vec::new();
    let mut empty_selections: Vec<String> = Vec::new();
    for (experiment, runs) in &by_experiment {
        for filter in BEST_RUN_FILTERS_KH {
            let mut eligible: Vec<&&ParsedRun> =
                runs.iter().filter(|r| r.peak.discomfort < filter).collect();
            eligible.sort_by(|a, b| a.peak.cost.total_cmp(&b.peak.cost));
            if eligible.is_empty() {
                empty_selections.push(format!("{experiment} (filter {filter} Kh)"));
            }
            for (rank, run) in eligible.iter().take(4).enumerate() {
                best_rows.push(format!(
                    "{experiment},{filter},{},{},{},{},{},{}",
                    rank + 1,
                    run.seed,
                    run.peak.cost,
                    run.peak.discomfort,
                    run.typical.cost,
                    run.typical.discomfort
                ));
            }
        }
    }
    {
        let path = out_dir.join("best_runs.csv");
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            file,
            "experiment,filter_kh,rank,seed,peak_cost,peak_discomfort,typical_cost,typical_discomfort"
        )?;
        for row in &best_rows {
            writeln!(file, "{row}")?;
        }
    }

    // Scatter source: the best run per experiment under the strict filter,
    // plus the baselines, for both periods.
    {
        let path = out_dir.join("best_runs_scatter.csv");
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "label,period,cost_eur_m2,discomfort_kh")?;
        for (experiment, runs) in &by_experiment {
            let best = runs
                .iter()
                .filter(|run| run.peak.discomfort < BEST_RUN_FILTERS_KH[0])
                .min_by(|a, b| a.peak.cost.total_cmp(&b.peak.cost));
            if let Some(run) = best {
                writeln!(
                    file,
                    "{experiment},peak,{},{}",
                    run.peak.cost, run.peak.discomfort
                )?;
                writeln!(
                    file,
                    "{experiment},typical,{},{}",
                    run.typical.cost, run.typical.discomfort
                )?;
            }
        }
        for (label, kpis_by_period) in baseline_kpis(out_dir)? {
            for (period, kpis) in kpis_by_period {
                writeln!(file, "{label},{period},{},{}", kpis.cost, kpis.discomfort)?;
            }
        }
    }

    // Human-readable summary with the savings comparison.
    {
        let path = out_dir.join("summary.txt");
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "runs aggregated: {}", parsed.len())?;
        for (experiment, runs) in &by_experiment {
            let peak_costs: Vec<f64> = runs.iter().map(|r| r.peak.cost).collect();
            let peak_disc: Vec<f64> = runs.iter().map(|r| r.peak.discomfort).collect();
            let (cost_mean, cost_std) = mean_std(&peak_costs);
            let (disc_mean, disc_std) = mean_std(&peak_disc);
            writeln!(
                file,
                "{experiment}: {} seeds, peak cost {cost_mean:.4} +- {cost_std:.4} EUR/m2, \
                 peak discomfort {disc_mean:.2} +- {disc_std:.2} Kh",
                runs.len()
            )?;
        }
        for selection in &empty_selections {
            writeln!(file, "EMPTY SELECTION: no runs passed the filter for {selection}")?;
        }
        for (cd, mf) in [("counter-dyna-10", "mf-10"), ("counter-dyna-5", "mf-10")] {
            if let (Some(cd_runs), Some(mf_runs)) = (by_experiment.get(cd), by_experiment.get(mf))
            {
                let pickers: [(&str, fn(&ParsedRun) -> Kpis); 2] =
                    [("peak", |r| r.peak), ("typical", |r| r.typical)];
                for (period, pick) in pickers {
                    let filter = BEST_RUN_FILTERS_KH[1];
                    let cd_costs: Vec<f64> = cd_runs
                        .iter()
                        .filter(|r| pick(r).discomfort < filter)
                        .map(|r| pick(r).cost)
                        .collect();
                    let mf_costs: Vec<f64> = mf_runs
                        .iter()
                        .filter(|r| pick(r).discomfort < filter)
                        .map(|r| pick(r).cost)
                        .collect();
                    if cd_costs.is_empty() || mf_costs.is_empty() {
                        continue;
                    }
                    let cd_mean = cd_costs.iter().sum::<f64>() / cd_costs.len() as f64;
                    let mf_mean = mf_costs.iter().sum::<f64>() / mf_costs.len() as f64;
                    let savings = 100.0 * (mf_mean - cd_mean) / mf_mean;
                    writeln!(
                        file,
                        "cost savings {cd} vs {mf}, {period} period (runs under {filter} Kh): \
                         {savings:.1}%"
                    )?;
                }
            }
        }
    }

    Ok(())
}

fn baseline_kpis(out_dir: &Path) -> Result<Vec<(String, Vec<(String, Kpis)>)>> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(out_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("baseline_"))
        })
        .collect();
    entries.sort();
    for dir in entries {
        let label = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let path = dir.join("kpi_summary.csv");
        if !path.exists() {
            continue;
        }
        let rows = read_csv_rows(&path, super::experiments::KPI_SUMMARY_CSV_HEADER)?;
        let mut periods = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != 5 {
                return Err(parse_error(&path, i + 2, "expected 5 columns"));
            }
            let cost: f64 =
                row[3].parse().map_err(|_| parse_error(&path, i + 2, "bad cost"))?;
            let discomfort: f64 =
                row[4].parse().map_err(|_| parse_error(&path, i + 2, "bad discomfort"))?;
            periods.push((row[2].clone(), Kpis { cost, discomfort }));
        }
        out.push((label, periods));
    }
    Ok(out)
}

/// Recompute the aggregate learning-curve statistics directly from the
/// per-run files, for consistency checks against the written aggregate.
pub fn recompute_curve_stats(out_dir: &Path) -> Result<Vec<(String, usize, f64, f64, usize)>> {
    let files = discover_runs(out_dir)?;
    let mut parsed = Vec::with_capacity(files.len());
    for f in &files {
        parsed.push(parse_run(f)?);
    }
    parsed.sort_by(|a, b| (&a.experiment, a.seed).cmp(&(&b.experiment, b.seed)));
    let mut by_experiment: BTreeMap<String, Vec<&ParsedRun>> = BTreeMap::new();
    for run in &parsed {
        by_experiment.entry(run.experiment.clone()).or_default().push(run);
    }
    let mut out = Vec::new();
    for (experiment, runs) in &by_experiment {
        let max_len = runs.iter().map(|r| r.curve.len()).max().unwrap_or(0);
        for episode in 0..max_len {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.curve.get(episode).map(|&(_, reward)| reward))
                .collect();
            if values.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&values);
            out.push((experiment.clone(), episode, mean, std, values.len()));
        }
    }
    Ok(out)
}

/// Parsed view of a run's KPI summary, used by tests and the CLI report path.
pub fn read_kpi_summary(run_dir: &Path) -> Result<Vec<(String, f64, f64)>> {
    let path = run_dir.join("kpi_summary.csv");
    let rows = read_csv_rows(&path, super::experiments::KPI_SUMMARY_CSV_HEADER)?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != 5 {
                return Err(parse_error(&path, i + 2, "expected 5 columns"));
            }
            let cost: f64 =
                row[3].parse().map_err(|_| parse_error(&path, i + 2, "bad cost"))?;
            let discomfort: f64 =
                row[4].parse().map_err(|_| parse_error(&path, i + 2, "bad discomfort"))?;
            Ok((row[2].clone(), cost, discomfort))
        })
        .collect()
}
