//! The Counter-Dyna orchestrator: alternates one real chronological episode
//! with a batch of synthetic rollouts, manages the real and synthetic
//! experience buffers, refits the surrogate after every episode, and
//! schedules policy updates at a uniform cadence.
//!
//! Per episode n: (a) run one real episode with the current policy, (b)
//! update the policy on that fresh episode, (c) refit the surrogate on all
//! real data, (d) generate K rollouts, updating the policy every `n_steps`
//! accumulated synthetic steps. The surrogate is first fitted after episode
//! one, so episode one has no synthetic phase preceding it.

use log::warn;

use crate::building_sim::{BuildingEnv, EnvState, Transition};
use crate::error::{Error, Result};
use crate::kpi_reward::KpiLedger;
use crate::ppo::{PpoAgent, PpoHyper, TrajectorySegment, UpdateDiagnostics, UpdateSource};
use crate::seeding;
use crate::surrogate::{
    fit_building_model, fit_reward_model, generate_rollout, Csm, CsmHyper, Normalizer,
    RewardDecomposition, SyntheticRollout,
};

/// The two experience buffers: real episodes and synthetic rollouts.
///
/// Real episodes must arrive in chronological order; synthetic rollouts must
/// reference a stored episode.
#[derive(Debug, Clone, Default)]
pub struct ExperienceStore {
    env_episodes: Vec<EpisodeBuffer>,
    model_rollouts: Vec<SyntheticRollout>,
}

/// One complete real episode.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    pub first_global_step: u64,
    pub transitions: Vec<Transition>,
}

impl ExperienceStore {
    pub fn push_episode(&mut self, episode: EpisodeBuffer) -> Result<()> {
        if episode.transitions.is_empty() {
            return Err(Error::InvalidArgument("episode buffer is empty".into()));
        }
        if let Some(prev) = self.env_episodes.last() {
            let expected = prev.first_global_step + prev.transitions.len() as u64;
            if episode.first_global_step != expected {
                return Err(Error::Protocol(format!(
                    "episode starts at global step {}, expected {expected} (chronology)",
                    episode.first_global_step
                )));
            }
        }
        self.env_episodes.push(episode);
        Ok(())
    }

    pub fn push_rollout(&mut self, rollout: SyntheticRollout) -> Result<()> {
        let n = self.env_episodes.len();
        if rollout.source_episode >= n {
            return Err(Error::InvalidArgument(format!(
                "rollout references episode {} but only {n} are stored",
                rollout.source_episode
            )));
        }
        let t = self.env_episodes[rollout.source_episode].transitions.len();
        if rollout.start_offset + rollout.transitions.len() > t {
            return Err(Error::InvalidArgument(format!(
                "rollout window {}..{} exceeds episode length {t}",
                rollout.start_offset,
                rollout.start_offset + rollout.transitions.len()
            )));
        }
        self.model_rollouts.push(rollout);
        Ok(())
    }

    pub fn n_episodes(&self) -> usize {
        self.env_episodes.len()
    }

    pub fn episode(&self, index: usize) -> &EpisodeBuffer {
        &self.env_episodes[index]
    }

    pub fn episodes(&self) -> &[EpisodeBuffer] {
        &self.env_episodes
    }

    pub fn rollouts(&self) -> &[SyntheticRollout] {
        &self.model_rollouts
    }

    pub fn env_transition_count(&self) -> usize {
        self.env_episodes.iter().map(|e| e.transitions.len()).sum()
    }

    pub fn model_step_count(&self) -> usize {
        self.model_rollouts.iter().map(|r| r.transitions.len()).sum()
    }

    pub fn iter_env_transitions(&self) -> impl Iterator<Item = &Transition> {
        self.env_episodes.iter().flat_map(|e| e.transitions.iter())
    }
}

/// How much real and synthetic experience a run consumes.
///
/// `synth_ratio` is synthetic steps per real step; the rollout count per
/// episode K follows from `ratio = K L / T` and must come out integral.
#[derive(Debug, Clone, PartialEq)]
pub struct DynaSchedule {
    pub n_episodes: usize,
    pub episode_len: usize,
    pub rollout_len: usize,
    pub synth_ratio: f64,
}

impl DynaSchedule {
    pub fn new(
        n_episodes: usize,
        episode_len: usize,
        rollout_len: usize,
        synth_ratio: f64,
    ) -> Result<Self> {
        let schedule = Self { n_episodes, episode_len, rollout_len, synth_ratio };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 || self.episode_len == 0 {
            return Err(Error::InvalidArgument(
                "n_episodes and episode_len must be positive".into(),
            ));
        }
        if self.rollout_len == 0 || self.rollout_len > self.episode_len - 1 {
            return Err(Error::InvalidArgument(format!(
                "rollout_len must be in 1..={}, got {}",
                self.episode_len - 1,
                self.rollout_len
            )));
        }
        if !(self.synth_ratio >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "synth_ratio must be nonnegative, got {}",
                self.synth_ratio
            )));
        }
        let k = self.synth_ratio * self.episode_len as f64 / self.rollout_len as f64;
        if (k - k.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "synth_ratio {} with T = {} and L = {} gives non-integral K = {k}",
                self.synth_ratio, self.episode_len, self.rollout_len
            )));
        }
        Ok(())
    }

    /// K = ratio * T / L.
    pub fn rollouts_per_episode(&self) -> usize {
        (self.synth_ratio * self.episode_len as f64 / self.rollout_len as f64).round() as usize
    }
}

impl Default for DynaSchedule {
    fn default() -> Self {
        Self { n_episodes: 5, episode_len: 168, rollout_len: 24, synth_ratio: 20.0 }
    }
}

/// Surrogate-fitting settings used by the orchestrator.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmSettings {
    pub hyper: CsmHyper,
    pub decomposition: RewardDecomposition,
}

impl Default for CsmSettings {
    fn default() -> Self {
        Self { hyper: CsmHyper::default(), decomposition: RewardDecomposition::CostOnly }
    }
}

/// One learning-curve point: statistics of a single real episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub real_steps_so_far: usize,
    pub synth_steps_so_far: usize,
    pub kpis: KpiLedger,
}

pub const LEARNING_CURVE_CSV_HEADER: &str =
    "episode,mean_episodic_reward,std_within_episode,real_steps_so_far,synth_steps_so_far";

impl EpisodeRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode,
            self.mean_reward,
            self.std_reward,
            self.real_steps_so_far,
            self.synth_steps_so_far
        )
    }
}

/// Everything a finished training run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub learning_curve: Vec<EpisodeRecord>,
    pub agent: PpoAgent,
    pub csm: Option<Csm>,
    pub store: ExperienceStore,
    pub updates: Vec<UpdateDiagnostics>,
}

/// Training start so that `n_episodes` chronological weeks end exactly at
/// `test_start_step`. Different training lengths therefore start at
/// different times.
pub fn align_training_window(
    n_episodes: usize,
    episode_len: usize,
    test_start_step: u64,
) -> Result<u64> {
    let span = (n_episodes * episode_len) as u64;
    test_start_step.checked_sub(span).ok_or_else(|| {
        Error::Range(format!(
            "training window of {span} steps precedes the series origin (test start {test_start_step})"
        ))
    })
}

/// Run the full Counter-Dyna loop.
pub fn run_counter_dyna(
    env: &mut BuildingEnv,
    schedule: &DynaSchedule,
    ppo: &PpoHyper,
    csm_cfg: &CsmSettings,
    seed: u64,
) -> Result<RunResult> {
    schedule.validate()?;
    let rollouts_per_episode = schedule.rollouts_per_episode();
    let mut agent = PpoAgent::new(EnvState::FEATURE_DIM, ppo.clone(), seed)?;
    agent.set_normalizer(Normalizer::state_prior())?;
    let mut rollout_rng = seeding::child_rng(seed, "rollout-anchors");

    let mut store = ExperienceStore::default();
    let mut csm: Option<Csm> = None;
    let mut learning_curve = Vec::with_capacity(schedule.n_episodes);
    let mut updates = Vec::new();
    let mut synth_steps_total = 0usize;
    let reward_ctx = *env.reward_context();

    for episode in 0..schedule.n_episodes {
        // (a) one real chronological episode with the current policy.
        let (buffer, segment, kpis) = run_real_episode(env, &mut agent, schedule.episode_len)?;
        learning_curve.push(episode_record(
            episode,
            &segment,
            kpis,
            (episode + 1) * schedule.episode_len,
            synth_steps_total,
        ));
        store.push_episode(buffer)?;

        // (b) policy update on the fresh real experience.
        updates.push(agent.update(&[segment], UpdateSource::Real)?);

        if rollouts_per_episode == 0 {
            continue;
        }

        // (c) refit the surrogate from scratch on all real data. The policy
        // shares the refreshed input statistics (action feature dropped).
        match fit_csm(&store, csm_cfg, seed, episode, &reward_ctx) {
            Ok(new_csm) => {
                agent.set_normalizer(
                    new_csm.building.normalizer().truncated(EnvState::FEATURE_DIM),
                )?;
                csm = Some(new_csm);
            }
            Err(Error::FitDegenerate(msg)) => match csm.as_mut() {
                // Keep the previous reward model, but refresh the building
                // model, which cannot degenerate on nonempty data.
                Some(existing) => {
                    warn!("reward model fit degenerate in episode {episode}: {msg}; keeping previous model");
                    existing.building =
                        fit_building_model(&store, &csm_cfg.hyper, csm_fit_seed(seed, episode))?;
                }
                None => {
                    warn!("surrogate fit degenerate in episode {episode}: {msg}; skipping synthetic phase");
                }
            },
            Err(other) => return Err(other),
        }

        // (d) synthetic rollouts, updating every `n_steps` synthetic steps.
        if let Some(csm) = &csm {
            let mut pending: Vec<TrajectorySegment> = Vec::new();
            let mut pending_steps = 0usize;
            for _ in 0..rollouts_per_episode {
                let (rollout, log_probs) = generate_rollout(
                    csm,
                    &store,
                    &mut agent,
                    schedule.rollout_len,
                    &reward_ctx,
                    &mut rollout_rng,
                )?;
                pending.push(TrajectorySegment::from_transitions(&rollout.transitions, log_probs));
                pending_steps += rollout.transitions.len();
                synth_steps_total += rollout.transitions.len();
                store.push_rollout(rollout)?;

                if pending_steps >= ppo.n_steps {
                    updates.push(agent.update(&pending, UpdateSource::Synthetic)?);
                    pending.clear();
                    pending_steps = 0;
                }
            }
            if !pending.is_empty() {
                updates.push(agent.update(&pending, UpdateSource::Synthetic)?);
            }
            if let Some(record) = learning_curve.last_mut() {
                record.synth_steps_so_far = synth_steps_total;
            }
        }
    }

    Ok(RunResult { learning_curve, agent, csm, store, updates })
}

/// Plain model-free PPO over chronological episodes: no surrogate, no
/// synthetic phase. Uses the same seed derivation as the Dyna loop, so a
/// ratio-0 Dyna run reproduces it exactly.
pub fn run_model_free(
    env: &mut BuildingEnv,
    n_episodes: usize,
    ppo: &PpoHyper,
    seed: u64,
) -> Result<RunResult> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be positive".into()));
    }
    let episode_len = env.config().episode_len;
    let mut agent = PpoAgent::new(EnvState::FEATURE_DIM, ppo.clone(), seed)?;
    agent.set_normalizer(Normalizer::state_prior())?;
    let mut store = ExperienceStore::default();
    let mut learning_curve = Vec::with_capacity(n_episodes);
    let mut updates = Vec::new();

    for episode in 0..n_episodes {
        let (buffer, segment, kpis) = run_real_episode(env, &mut agent, episode_len)?;
        learning_curve.push(episode_record(
            episode,
            &segment,
            kpis,
            (episode + 1) * episode_len,
            0,
        ));
        store.push_episode(buffer)?;
        updates.push(agent.update(&[segment], UpdateSource::Real)?);
    }

    Ok(RunResult { learning_curve, agent, csm: None, store, updates })
}

fn run_real_episode(
    env: &mut BuildingEnv,
    agent: &mut PpoAgent,
    episode_len: usize,
) -> Result<(EpisodeBuffer, TrajectorySegment, KpiLedger)> {
    let mut state = env.reset()?;
    let first_global_step = env.clock().global_step.step;
    let mut transitions = Vec::with_capacity(episode_len);
    let mut log_probs = Vec::with_capacity(episode_len);
    for _ in 0..episode_len {
        let (action, log_prob) = agent.sample_action(&state)?;
        let transition = env.step(action)?;
        state = transition.next_state.clone();
        transitions.push(transition);
        log_probs.push(log_prob);
    }
    let kpis = *env.episode_ledger();
    let segment = TrajectorySegment::from_transitions(&transitions, log_probs);
    Ok((EpisodeBuffer { first_global_step, transitions }, segment, kpis))
}

fn episode_record(
    episode: usize,
    segment: &TrajectorySegment,
    kpis: KpiLedger,
    real_steps_so_far: usize,
    synth_steps_so_far: usize,
) -> EpisodeRecord {
    let n = segment.rewards.len() as f64;
    let mean = segment.rewards.iter().sum::<f64>() / n;
    let var = segment.rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    EpisodeRecord {
        episode,
        mean_reward: mean,
        std_reward: var.sqrt(),
        real_steps_so_far,
        synth_steps_so_far,
        kpis,
    }
}

fn csm_fit_seed(seed: u64, episode: usize) -> u64 {
    seeding::child_seed(seed, &format!("csm-fit-{episode}"))
}

fn fit_csm(
    store: &ExperienceStore,
    cfg: &CsmSettings,
    seed: u64,
    episode: usize,
    reward_ctx: &crate::kpi_reward::RewardContext,
) -> Result<Csm> {
    // Fit the reward model first: its degenerate-fit error must not waste a
    // building-model training run.
    let reward = fit_reward_model(store, cfg.decomposition, reward_ctx)?;
    let building = fit_building_model(store, &cfg.hyper, csm_fit_seed(seed, episode))?;
    Ok(Csm { building, reward })
}
