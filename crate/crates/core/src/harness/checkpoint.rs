//! Checkpoint layout for trained runs: policy/value networks, the shared
//! state normalizer, and the surrogate (building model, its input
//! normalizer, reward coefficients). All files are plain text and round-trip
//! bit-exactly.

use std::path::Path;

use crate::building_sim::{EnvState, Transition};
use crate::dyna::{EpisodeBuffer, ExperienceStore};
use crate::error::{Error, Result};
use crate::exogenous::ExogenousSeries;
use crate::neural::Mlp;
use crate::ppo::PolicyValueNets;
use crate::surrogate::{BuildingModel, Csm, Normalizer, RewardDecomposition, RewardModel};

const POLICY_FILE: &str = "policy.mlp";
const VALUE_FILE: &str = "value.mlp";
const STATE_NORM_FILE: &str = "state_normalizer.txt";
const BUILDING_FILE: &str = "building.mlp";
const CSM_NORM_FILE: &str = "csm_normalizer.txt";
const REWARD_FILE: &str = "reward.txt";

/// Compact real-experience dump: enough, together with the series, to
/// reconstruct the full transition store.
pub const D_ENV_FILE: &str = "d_env.csv";
const D_ENV_HEADER: &str = "global_step,episode,t,zone_pre_K,action,zone_post_K,reward";

pub fn save_policy(dir: &Path, nets: &PolicyValueNets) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    nets.policy.save(&dir.join(POLICY_FILE))?;
    nets.value.save(&dir.join(VALUE_FILE))?;
    nets.normalizer.save(&dir.join(STATE_NORM_FILE))?;
    Ok(())
}

pub fn load_policy(dir: &Path) -> Result<PolicyValueNets> {
    Ok(PolicyValueNets {
        policy: Mlp::load(&dir.join(POLICY_FILE))?,
        value: Mlp::load(&dir.join(VALUE_FILE))?,
        normalizer: Normalizer::load(&dir.join(STATE_NORM_FILE))?,
    })
}

pub fn save_csm(dir: &Path, csm: &Csm) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    csm.building.net().save(&dir.join(BUILDING_FILE))?;
    csm.building.normalizer().save(&dir.join(CSM_NORM_FILE))?;
    let reward = &csm.reward;
    let text = format!(
        "reward-v1\ndecomposition {}\ntrained_on_episodes {}\nbeta {} {} {} {}\n",
        reward.decomposition.name(),
        csm.building.trained_on_episodes(),
        reward.beta[0],
        reward.beta[1],
        reward.beta[2],
        reward.beta[3]
    );
    std::fs::write(dir.join(REWARD_FILE), text)?;
    Ok(())
}

pub fn load_csm(dir: &Path) -> Result<Csm> {
    let net = Mlp::load(&dir.join(BUILDING_FILE))?;
    let normalizer = Normalizer::load(&dir.join(CSM_NORM_FILE))?;

    let text = std::fs::read_to_string(dir.join(REWARD_FILE))?;
    let mut lines = text.lines();
    if lines.next() != Some("reward-v1") {
        return Err(Error::Parse { line: 1, message: "expected `reward-v1`".into() });
    }
    let decomposition = lines
        .next()
        .and_then(|l| l.strip_prefix("decomposition "))
        .ok_or_else(|| Error::Parse { line: 2, message: "expected decomposition".into() })
        .and_then(RewardDecomposition::parse)?;
    let trained_on_episodes = lines
        .next()
        .and_then(|l| l.strip_prefix("trained_on_episodes "))
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| Error::Parse { line: 3, message: "expected trained_on_episodes".into() })?;
    let beta_line = lines
        .next()
        .and_then(|l| l.strip_prefix("beta "))
        .ok_or_else(|| Error::Parse { line: 4, message: "expected beta".into() })?;
    let values = beta_line
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse { line: 4, message: e.to_string() })?;
    if values.len() != 4 {
        return Err(Error::Parse { line: 4, message: "expected 4 beta values".into() });
    }

    Ok(Csm {
        building: BuildingModel::from_parts(net, normalizer, trained_on_episodes)?,
        reward: RewardModel {
            beta: [values[0], values[1], values[2], values[3]],
            decomposition,
        },
    })
}

/// Write the real-experience store in the compact per-transition format.
pub fn save_d_env(path: &Path, store: &ExperienceStore) -> Result<()> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{D_ENV_HEADER}")?;
    for (episode, buffer) in store.episodes().iter().enumerate() {
        for (t, tr) in buffer.transitions.iter().enumerate() {
            writeln!(
                file,
                "{},{},{},{},{},{},{}",
                buffer.first_global_step + t as u64,
                episode,
                t,
                tr.state.zone_temp_k,
                tr.action.index(),
                tr.next_state.zone_temp_k,
                tr.reward
            )?;
        }
    }
    Ok(())
}

/// Rebuild the real-experience store from the compact dump, recomputing the
/// disturbance vectors from the series.
pub fn load_d_env(path: &Path, series: &ExogenousSeries) -> Result<ExperienceStore> {
    use crate::building_sim::HeatPumpAction;
    let text = std::fs::read_to_string(path)?;
    let mut store = ExperienceStore::default();
    let mut current: Vec<Transition> = Vec::new();
    let mut current_episode = 0usize;
    let mut first_step = 0u64;

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line_no == 1 {
            if line.trim() != D_ENV_HEADER {
                return Err(Error::Parse { line: 1, message: format!("bad header `{line}`") });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(Error::Parse { line: line_no, message: "expected 7 columns".into() });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })
        };
        let global_step: u64 = cells[0]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::Parse { line: line_no, message: e.to_string() })?;
        let episode: usize = cells[1]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::Parse { line: line_no, message: e.to_string() })?;
        let zone_pre = parse_f(cells[3])?;
        let action_idx: usize = cells[4]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::Parse { line: line_no, message: e.to_string() })?;
        let zone_post = parse_f(cells[5])?;
        let reward = parse_f(cells[6])?;

        if episode != current_episode && !current.is_empty() {
            store.push_episode(EpisodeBuffer {
                first_global_step: first_step,
                transitions: std::mem::take(&mut current),
            })?;
            current_episode = episode;
        }
        if current.is_empty() {
            first_step = global_step;
        }
        let d_pre = series.disturbance_at(series.time_index(global_step))?;
        let d_post = series.disturbance_at(series.time_index(global_step + 1))?;
        current.push(Transition {
            state: EnvState { zone_temp_k: zone_pre, disturbances: d_pre },
            action: HeatPumpAction::from_index(action_idx)?,
            next_state: EnvState { zone_temp_k: zone_post, disturbances: d_post },
            reward,
        });
    }
    if !current.is_empty() {
        store.push_episode(EpisodeBuffer { first_global_step: first_step, transitions: current })?;
    }
    Ok(store)
}
