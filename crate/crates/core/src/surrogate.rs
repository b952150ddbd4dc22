//! The counterfactual surrogate model: a delta-temperature MLP that predicts
//! how the zone responds to arbitrary actions, and a piecewise-linear
//! least-squares reward model. Together they generate synthetic rollouts in
//! which disturbances are replayed bit-for-bit from recorded history — only
//! the controllable zone temperature is ever predicted.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::building_sim::{EnvState, HeatPumpAction, Transition};
use crate::dyna::ExperienceStore;
use crate::error::{Error, Result};
use crate::exogenous::DisturbanceVector;
use crate::kpi_reward::{discomfort_increment, RewardContext};
use crate::neural::{fit_regression, Activation, FitConfig, Mlp};
use crate::seeding;

/// Building-model input dimension: state features plus the action.
pub const CSM_INPUT_DIM: usize = EnvState::FEATURE_DIM + 1;

/// Per-feature standardization fitted from recorded data.
///
/// Near-constant features keep a unit scale so that unseen values cannot
/// blow up after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("cannot fit normalizer on empty data".into()));
        }
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for i in 0..dim {
                let d = row[i] - mean[i];
                var[i] += d * d;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let std = (v / n).sqrt();
                if std < 1e-6 {
                    1.0
                } else {
                    std
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Restriction to the first `dim` features. The policy state shares the
    /// building-model statistics this way (the action feature is dropped).
    pub fn truncated(&self, dim: usize) -> Self {
        Self { mean: self.mean[..dim].to_vec(), scale: self.scale[..dim].to_vec() }
    }

    /// Fixed prior over the 19 state features, used by the policy before the
    /// first episode of data exists: zone in Kelvin, unit-circle time
    /// encoding, Kelvin ambient forecasts, EUR/kWh price forecasts.
    pub fn state_prior() -> Self {
        let mut mean = vec![294.65];
        let mut scale = vec![3.0];
        mean.extend(std::iter::repeat_n(0.0, 4));
        scale.extend(std::iter::repeat_n(0.75, 4));
        mean.extend(std::iter::repeat_n(278.0, 7));
        scale.extend(std::iter::repeat_n(8.0, 7));
        mean.extend(std::iter::repeat_n(0.12, 7));
        scale.extend(std::iter::repeat_n(0.10, 7));
        Self { mean, scale }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "normalizer-v1")?;
        write_line(&mut file, "mean", &self.mean)?;
        write_line(&mut file, "scale", &self.scale)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some("normalizer-v1") {
            return Err(Error::Parse { line: 1, message: "expected `normalizer-v1`".into() });
        }
        let mean = parse_line(lines.next(), "mean", 2)?;
        let scale = parse_line(lines.next(), "scale", 3)?;
        if mean.len() != scale.len() {
            return Err(Error::Shape("normalizer mean/scale length mismatch".into()));
        }
        Ok(Self { mean, scale })
    }
}

fn write_line<W: std::io::Write>(file: &mut W, tag: &str, values: &[f64]) -> Result<()> {
    write!(file, "{tag}")?;
    for v in values {
        write!(file, " {v}")?;
    }
    writeln!(file)?;
    Ok(())
}

fn parse_line(line: Option<&str>, tag: &str, line_no: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| Error::Parse {
        line: line_no,
        message: format!("missing `{tag}` line"),
    })?;
    line.strip_prefix(tag)
        .ok_or_else(|| Error::Parse { line: line_no, message: format!("expected `{tag}` line") })?
        .split_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })
        })
        .collect()
}

/// Training settings for the building model. Defaults follow the reference
/// hyperparameters: three 512-unit LeakyReLU layers, 500 epochs, batch 256,
/// learning rate 1e-3.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmHyper {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for CsmHyper {
    fn default() -> Self {
        Self { hidden: vec![512, 512, 512], epochs: 500, batch_size: 256, lr: 0.001 }
    }
}

impl CsmHyper {
    /// Reduced profile for CI and the acceptance suite.
    pub fn fast() -> Self {
        Self { hidden: vec![64, 64], ..Self::default() }
    }
}

/// The delta-temperature regressor: predicts `z_{t+1} - z_t` from the
/// normalized (zone, disturbances, action) input.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingModel {
    net: Mlp,
    normalizer: Normalizer,
    trained_on_episodes: usize,
}

impl BuildingModel {
    pub fn from_parts(net: Mlp, normalizer: Normalizer, trained_on_episodes: usize) -> Result<Self> {
        if net.input_dim() != CSM_INPUT_DIM || net.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "building model must map {CSM_INPUT_DIM} -> 1, got {} -> {}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        if normalizer.dim() != CSM_INPUT_DIM {
            return Err(Error::Shape(format!(
                "normalizer dim {} does not match input dim {CSM_INPUT_DIM}",
                normalizer.dim()
            )));
        }
        Ok(Self { net, normalizer, trained_on_episodes })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn trained_on_episodes(&self) -> usize {
        self.trained_on_episodes
    }

    /// Delta-form prediction: `z + net(normalize([z, d, a]))`.
    pub fn predict_next_zone(
        &self,
        zone_temp_k: f64,
        disturbances: &DisturbanceVector,
        action: HeatPumpAction,
    ) -> f64 {
        let input = csm_input_features(zone_temp_k, disturbances, action);
        let out = self
            .net
            .forward(&self.normalizer.normalize(&input))
            .expect("building model input dimension is fixed by construction");
        zone_temp_k + out[0]
    }
}

/// Feature layout of the building-model input: state features then action.
pub fn csm_input_features(
    zone_temp_k: f64,
    disturbances: &DisturbanceVector,
    action: HeatPumpAction,
) -> Vec<f64> {
    let mut input = Vec::with_capacity(CSM_INPUT_DIM);
    input.push(zone_temp_k);
    input.extend(disturbances.features());
    input.push(action.signal());
    input
}

/// Retrain the delta-temperature regressor from scratch on all recorded real
/// transitions. The normalizer is recomputed from the same data on each call.
pub fn fit_building_model(
    store: &ExperienceStore,
    hyper: &CsmHyper,
    seed: u64,
) -> Result<BuildingModel> {
    if store.n_episodes() == 0 {
        return Err(Error::InvalidArgument("experience store holds no episodes".into()));
    }
    let mut raw_inputs = Vec::with_capacity(store.env_transition_count());
    let mut targets = Vec::with_capacity(store.env_transition_count());
    for tr in store.iter_env_transitions() {
        raw_inputs.push(csm_input_features(tr.state.zone_temp_k, &tr.state.disturbances, tr.action));
        targets.push(vec![tr.next_state.zone_temp_k - tr.state.zone_temp_k]);
    }
    let normalizer = Normalizer::fit(&raw_inputs)?;
    let inputs: Vec<Vec<f64>> = raw_inputs.iter().map(|r| normalizer.normalize(r)).collect();

    let mut dims = vec![CSM_INPUT_DIM];
    dims.extend_from_slice(&hyper.hidden);
    dims.push(1);
    let mut rng = seeding::child_rng(seed, "building-model-init");
    let mut net = Mlp::new(&dims, Activation::LeakyRelu, &mut rng)?;
    let cfg = FitConfig {
        epochs: hyper.epochs,
        batch_size: hyper.batch_size,
        lr: hyper.lr,
        seed: seeding::child_seed(seed, "building-model-fit"),
    };
    fit_regression(&mut net, &inputs, &targets, &cfg)?;
    BuildingModel::from_parts(net, normalizer, store.n_episodes())
}

/// Which part of the reward the linear model is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardDecomposition {
    /// Learn only the cost term; the discomfort term is computed analytically
    /// from the predicted zone temperature. Default.
    CostOnly,
    /// Fit the whole reward on (a, price, a*price) as a single regression.
    Full,
}

impl RewardDecomposition {
    pub fn name(self) -> &'static str {
        match self {
            Self::CostOnly => "cost_only",
            Self::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cost_only" => Ok(Self::CostOnly),
            "full" => Ok(Self::Full),
            other => Err(Error::InvalidArgument(format!("unknown reward decomposition `{other}`"))),
        }
    }
}

/// Piecewise-linear reward model: exactly zero when the heat pump is off,
/// `b0 + b1 a + b2 p + b3 (a p)` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub beta: [f64; 4],
    pub decomposition: RewardDecomposition,
}

impl RewardModel {
    /// The learned branch. The off branch is hard-coded to zero, not learned.
    pub fn learned_part(&self, action: HeatPumpAction, price: f64) -> f64 {
        match action {
            HeatPumpAction::Off => 0.0,
            HeatPumpAction::On => {
                let a = action.signal();
                self.beta[0] + self.beta[1] * a + self.beta[2] * price + self.beta[3] * a * price
            }
        }
    }

    /// Synthetic reward for one rollout step. `discomfort_part` is the
    /// analytic `-w_D * discomfort` term computed from the predicted zone
    /// temperature; it is ignored when the model was fitted on full rewards.
    pub fn predict_reward(&self, action: HeatPumpAction, price: f64, discomfort_part: f64) -> f64 {
        match self.decomposition {
            RewardDecomposition::CostOnly => discomfort_part + self.learned_part(action, price),
            RewardDecomposition::Full => self.learned_part(action, price),
        }
    }
}

/// Minimum number of active-action samples for the least-squares fit.
const MIN_ACTIVE_SAMPLES: usize = 4;
/// Ridge damping added to the Gram matrix diagonal.
const RIDGE_DAMPING: f64 = 1e-8;

/// One regression row for the reward fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRow {
    pub action: f64,
    pub price: f64,
    pub target: f64,
}

/// Ordinary least squares for `target ~ b0 + b1 a + b2 p + b3 (a p)` via the
/// normal equations with ridge damping on the Gram matrix.
pub fn fit_reward_ols(rows: &[RewardRow]) -> Result<[f64; 4]> {
    if rows.len() < MIN_ACTIVE_SAMPLES {
        return Err(Error::FitDegenerate(format!(
            "need at least {MIN_ACTIVE_SAMPLES} active-action samples, got {}",
            rows.len()
        )));
    }
    let mut gram = nalgebra::Matrix4::<f64>::zeros();
    let mut rhs = nalgebra::Vector4::<f64>::zeros();
    for row in rows {
        let x = nalgebra::Vector4::new(1.0, row.action, row.price, row.action * row.price);
        gram += x * x.transpose();
        rhs += x * row.target;
    }
    for i in 0..4 {
        gram[(i, i)] += RIDGE_DAMPING;
    }
    let solution = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::FitDegenerate("normal equations singular beyond damping".into()))?;
    let beta = [solution[0], solution[1], solution[2], solution[3]];
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::FitDegenerate("non-finite reward coefficients".into()));
    }
    Ok(beta)
}

/// Fit the reward model on the store's active-action transitions (`a != 0`;
/// the off branch is the hard-coded zero case and contributes no rows).
///
/// For the cost-only decomposition the target is the reward with the
/// analytic discomfort term removed, i.e. the `-w_C * cost` remainder.
pub fn fit_reward_model(
    store: &ExperienceStore,
    decomposition: RewardDecomposition,
    reward_ctx: &RewardContext,
) -> Result<RewardModel> {
    let rows: Vec<RewardRow> = store
        .iter_env_transitions()
        .filter(|tr| tr.action != HeatPumpAction::Off)
        .map(|tr| RewardRow {
            action: tr.action.signal(),
            price: tr.state.disturbances.current_price(),
            target: reward_target(tr, decomposition, reward_ctx),
        })
        .collect();
    let beta = fit_reward_ols(&rows)?;
    Ok(RewardModel { beta, decomposition })
}

fn reward_target(
    tr: &Transition,
    decomposition: RewardDecomposition,
    ctx: &RewardContext,
) -> f64 {
    match decomposition {
        RewardDecomposition::Full => tr.reward,
        RewardDecomposition::CostOnly => {
            let discomfort =
                discomfort_increment(tr.next_state.zone_temp_k, &ctx.band, ctx.dt_hours);
            tr.reward + ctx.weights.discomfort * discomfort
        }
    }
}

/// Building and reward model, fitted together each episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Csm {
    pub building: BuildingModel,
    pub reward: RewardModel,
}

/// An action source for rollout generation. Returns the sampled action and
/// its log-probability under the sampling distribution.
pub trait ActionSampler {
    fn sample_action(&mut self, state: &EnvState) -> Result<(HeatPumpAction, f64)>;
}

/// An L-step synthetic trajectory anchored at a recorded state.
///
/// Disturbances at every rollout position are the recorded historical ones
/// from the source episode, copied bit-for-bit; only zone temperatures and
/// rewards come from the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRollout {
    pub source_episode: usize,
    pub start_offset: usize,
    pub transitions: Vec<Transition>,
}

/// Generate one synthetic rollout of `rollout_len` steps.
///
/// The anchor episode and offset are sampled uniformly; the offset range
/// `{0, ..., T-L-1}` keeps the replayed disturbance window inside the source
/// episode. Also returns the per-step log-probabilities of the sampled
/// actions, aligned with the transitions.
pub fn generate_rollout(
    csm: &Csm,
    store: &ExperienceStore,
    policy: &mut dyn ActionSampler,
    rollout_len: usize,
    reward_ctx: &RewardContext,
    rng: &mut ChaCha8Rng,
) -> Result<(SyntheticRollout, Vec<f64>)> {
    let n_episodes = store.n_episodes();
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("experience store holds no episodes".into()));
    }
    if rollout_len == 0 {
        return Err(Error::InvalidArgument("rollout length must be positive".into()));
    }
    let episode_len = store.episode(0).transitions.len();
    if rollout_len + 1 > episode_len {
        return Err(Error::InvalidArgument(format!(
            "rollout length {rollout_len} exceeds episode length {episode_len} - 1"
        )));
    }

    let source_episode = rng.random_range(0..n_episodes);
    let start_offset = rng.random_range(0..=(episode_len - rollout_len - 1));
    let episode = store.episode(source_episode);

    let mut zone = episode.transitions[start_offset].state.zone_temp_k;
    let mut state = EnvState {
        zone_temp_k: zone,
        disturbances: episode.transitions[start_offset].state.disturbances.clone(),
    };

    let mut transitions = Vec::with_capacity(rollout_len);
    let mut log_probs = Vec::with_capacity(rollout_len);
    for l in 0..rollout_len {
        let (action, log_prob) = policy.sample_action(&state)?;
        let next_zone = csm.building.predict_next_zone(zone, &state.disturbances, action);
        if !next_zone.is_finite() {
            return Err(Error::Numeric(format!(
                "building model produced non-finite zone temperature at rollout step {l}"
            )));
        }
        let next_disturbances =
            episode.transitions[start_offset + l].next_state.disturbances.clone();
        let price = state.disturbances.current_price();
        let discomfort_part = -reward_ctx.weights.discomfort
            * discomfort_increment(next_zone, &reward_ctx.band, reward_ctx.dt_hours);
        let reward = csm.reward.predict_reward(action, price, discomfort_part);

        let next_state = EnvState { zone_temp_k: next_zone, disturbances: next_disturbances };
        transitions.push(Transition {
            state: state.clone(),
            action,
            next_state: next_state.clone(),
            reward,
        });
        log_probs.push(log_prob);
        zone = next_zone;
        state = next_state;
    }

    Ok((SyntheticRollout { source_episode, start_offset, transitions }, log_probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::building_sim::{BuildingEnv, EnvConfig, PlantParams, EPISODE_LEN};
    use crate::dyna::EpisodeBuffer;
    use crate::exogenous::{synthesize_series, SynthesisProfile};
    use crate::kpi_reward::{ComfortBand, RewardWeights};
    use std::sync::Arc;

    fn reward_ctx() -> RewardContext {
        RewardContext {
            weights: RewardWeights::default(),
            band: ComfortBand::default(),
            floor_area_m2: PlantParams::default().floor_area_m2,
            dt_hours: 1.0,
        }
    }

    /// Run `n_episodes` weeks on the reference plant with a deterministic
    /// duty-cycling action pattern and store the transitions.
    fn collect_store(n_episodes: usize, pattern: &[usize]) -> ExperienceStore {
        collect_store_with(PlantParams::default(), n_episodes, pattern)
    }

    fn collect_store_with(
        plant: PlantParams,
        n_episodes: usize,
        pattern: &[usize],
    ) -> ExperienceStore {
        let series = Arc::new(
            synthesize_series(
                5,
                (n_episodes + 1) * EPISODE_LEN + 16,
                &SynthesisProfile::default(),
            )
            .unwrap(),
        );
        let mut env = BuildingEnv::new(
            plant,
            series,
            reward_ctx(),
            EnvConfig::default(),
        )
        .unwrap();
        let mut store = ExperienceStore::default();
        for _ in 0..n_episodes {
            env.reset().unwrap();
            let first = env.clock().global_step.step;
            let mut transitions = Vec::with_capacity(EPISODE_LEN);
            for t in 0..EPISODE_LEN {
                let a = HeatPumpAction::from_index(pattern[t % pattern.len()]).unwrap();
                transitions.push(env.step(a).unwrap());
            }
            store.push_episode(EpisodeBuffer { first_global_step: first, transitions }).unwrap();
        }
        store
    }

    struct FixedPolicy(HeatPumpAction);
    impl ActionSampler for FixedPolicy {
        fn sample_action(&mut self, _state: &EnvState) -> Result<(HeatPumpAction, f64)> {
            Ok((self.0, 0.0))
        }
    }

    /// Replays the source episode's historical actions.
    struct ReplayPolicy {
        actions: Vec<HeatPumpAction>,
        cursor: usize,
    }
    impl ActionSampler for ReplayPolicy {
        fn sample_action(&mut self, _state: &EnvState) -> Result<(HeatPumpAction, f64)> {
            let a = self.actions[self.cursor];
            self.cursor += 1;
            Ok((a, 0.0))
        }
    }

    fn zero_building_model() -> BuildingModel {
        BuildingModel::from_parts(
            Mlp::zeros(&[CSM_INPUT_DIM, 4, 1], Activation::LeakyRelu).unwrap(),
            Normalizer::identity(CSM_INPUT_DIM),
            1,
        )
        .unwrap()
    }

    #[test]
    fn normalizer_guards_constant_features() {
        let rows = vec![vec![5.0, 1.0], vec![5.0, 3.0]];
        let norm = Normalizer::fit(&rows).unwrap();
        assert_eq!(norm.scale[0], 1.0);
        let out = norm.normalize(&[5.0, 2.0]);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn normalizer_round_trips() {
        let norm = Normalizer::state_prior();
        let dir = std::env::temp_dir().join("counterdyna-surrogate-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("norm.txt");
        norm.save(&path).unwrap();
        assert_eq!(Normalizer::load(&path).unwrap(), norm);
    }

    #[test]
    fn zero_net_predicts_identity() {
        let bm = zero_building_model();
        let store = collect_store(1, &[0, 1]);
        let tr = &store.episode(0).transitions[3];
        let z = bm.predict_next_zone(tr.state.zone_temp_k, &tr.state.disturbances, tr.action);
        assert_eq!(z, tr.state.zone_temp_k);
    }

    #[test]
    fn building_model_fits_action_independent_plant() {
        // A plant whose dynamics ignore the action (negligible heat pump):
        // the regressor must learn the pure linear RC response. Actions in
        // the data still vary, so the action column is pure distractor.
        // The bound is frozen from the reference oracle run (0.085 K on an
        // unseen week after five training weeks); tighter generalization is
        // blocked by calendar-feature memorization, the same in-sample vs
        // out-of-sample gap the evaluation report quantifies.
        let plant = PlantParams { hp_thermal_kw: 1e-9, ..PlantParams::default() };
        let store = collect_store_with(plant, 5, &[1, 0, 0, 1, 0, 1, 1, 0]);
        let bm = fit_building_model(&store, &CsmHyper::fast(), 3).unwrap();
        assert_eq!(bm.trained_on_episodes(), 5);

        // Held-out week: same plant, later period via a sixth episode.
        let holdout = collect_store_with(plant, 6, &[1, 0, 0, 1, 0, 1, 1, 0]);
        let mut sq_err = 0.0;
        let mut n = 0.0;
        for tr in holdout.episode(5).transitions.iter() {
            let pred = bm.predict_next_zone(tr.state.zone_temp_k, &tr.state.disturbances, tr.action);
            sq_err += (pred - tr.next_state.zone_temp_k).powi(2);
            n += 1.0;
        }
        let rmse = (sq_err / n).sqrt();
        assert!(rmse < 0.15, "held-out one-step RMSE {rmse}");
    }

    #[test]
    fn constant_temperature_data_predicts_zero_delta() {
        // Hand-built store with no dynamics: zone pinned, alternating actions.
        let series =
            Arc::new(synthesize_series(2, EPISODE_LEN + 16, &SynthesisProfile::default()).unwrap());
        let mut transitions = Vec::new();
        for t in 0..EPISODE_LEN as u64 {
            let d0 = series.disturbance_at(series.time_index(t)).unwrap();
            let d1 = series.disturbance_at(series.time_index(t + 1)).unwrap();
            transitions.push(Transition {
                state: EnvState { zone_temp_k: 295.0, disturbances: d0 },
                action: if t % 2 == 0 { HeatPumpAction::On } else { HeatPumpAction::Off },
                next_state: EnvState { zone_temp_k: 295.0, disturbances: d1 },
                reward: 0.0,
            });
        }
        let mut store = ExperienceStore::default();
        store.push_episode(EpisodeBuffer { first_global_step: 0, transitions }).unwrap();

        let hyper = CsmHyper { lr: 0.003, ..CsmHyper::fast() };
        let bm = fit_building_model(&store, &hyper, 1).unwrap();
        for tr in store.episode(0).transitions.iter().step_by(7) {
            let pred = bm.predict_next_zone(295.0, &tr.state.disturbances, tr.action);
            assert!((pred - 295.0).abs() < 1e-3, "delta {}", pred - 295.0);
        }
    }

    #[test]
    fn building_fit_is_deterministic() {
        let store = collect_store(1, &[1, 0, 0]);
        let hyper = CsmHyper { epochs: 30, ..CsmHyper::fast() };
        let a = fit_building_model(&store, &hyper, 9).unwrap();
        let b = fit_building_model(&store, &hyper, 9).unwrap();
        assert_eq!(a.net(), b.net());
    }

    #[test]
    fn empty_store_rejected() {
        let store = ExperienceStore::default();
        assert!(matches!(
            fit_building_model(&store, &CsmHyper::fast(), 0).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn ols_recovers_exact_linear_data() {
        // Non-binary activations identify all four coefficients.
        let mut rows = Vec::new();
        for i in 0..40 {
            let a = 0.25 + (i % 8) as f64 * 0.25;
            let p = -0.05 + (i % 11) as f64 * 0.04;
            rows.push(RewardRow { action: a, price: p, target: 0.5 + 2.0 * a - 3.0 * p + 7.0 * a * p });
        }
        let beta = fit_reward_ols(&rows).unwrap();
        let expected = [0.5, 2.0, -3.0, 7.0];
        for (b, e) in beta.iter().zip(&expected) {
            assert!((b - e).abs() < 1e-6, "beta {beta:?}");
        }
    }

    #[test]
    fn ols_zero_targets_give_zero_beta() {
        let rows: Vec<RewardRow> = (0..10)
            .map(|i| RewardRow { action: 1.0, price: i as f64 * 0.03, target: 0.0 })
            .collect();
        let beta = fit_reward_ols(&rows).unwrap();
        assert!(beta.iter().all(|b| b.abs() < 1e-9), "beta {beta:?}");
    }

    #[test]
    fn ols_needs_four_samples() {
        let rows = vec![RewardRow { action: 1.0, price: 0.1, target: 1.0 }; 3];
        assert!(matches!(fit_reward_ols(&rows).unwrap_err(), Error::FitDegenerate(_)));
    }

    #[test]
    fn binary_actions_identify_predictions_not_coefficients() {
        // With a in {0,1} only a=1 rows enter the fit; b0+b1 and b2+b3 are
        // identified while the individual coefficients are not. Predictions
        // on a=1 inputs must still be exact for exactly-linear data.
        let rows: Vec<RewardRow> = (0..30)
            .map(|i| {
                let p = -0.06 + i as f64 * 0.02;
                RewardRow { action: 1.0, price: p, target: 0.5 + 2.0 - 3.0 * p + 7.0 * p }
            })
            .collect();
        let beta = fit_reward_ols(&rows).unwrap();
        assert!((beta[0] + beta[1] - 2.5).abs() < 1e-6, "beta {beta:?}");
        assert!((beta[2] + beta[3] - 4.0).abs() < 1e-6, "beta {beta:?}");
        let model = RewardModel { beta, decomposition: RewardDecomposition::Full };
        for row in &rows {
            let pred = model.learned_part(HeatPumpAction::On, row.price);
            assert!((pred - row.target).abs() < 1e-6);
        }
    }

    #[test]
    fn reward_model_off_branch_is_zero() {
        let model = RewardModel {
            beta: [3.0, -1.0, 2.0, 5.0],
            decomposition: RewardDecomposition::CostOnly,
        };
        assert_eq!(model.learned_part(HeatPumpAction::Off, 0.4), 0.0);
        // In-band predicted zone and idle pump: synthetic reward is exactly 0.
        assert_eq!(model.predict_reward(HeatPumpAction::Off, 0.4, 0.0), 0.0);
    }

    #[test]
    fn fitted_reward_model_reproduces_env_rewards() {
        let store = collect_store(2, &[1, 0, 1, 1, 0, 0]);
        let ctx = reward_ctx();
        let model = fit_reward_model(&store, RewardDecomposition::CostOnly, &ctx).unwrap();
        // With the exact next zone temperature, prediction error comes only
        // from the COP dependence on ambient that the features cannot see.
        let mut worst: f64 = 0.0;
        for tr in store.iter_env_transitions() {
            let discomfort_part = -ctx.weights.discomfort
                * discomfort_increment(tr.next_state.zone_temp_k, &ctx.band, ctx.dt_hours);
            let pred = model.predict_reward(
                tr.action,
                tr.state.disturbances.current_price(),
                discomfort_part,
            );
            worst = worst.max((pred - tr.reward).abs());
        }
        assert!(worst < 0.2, "worst reward error {worst}");
    }

    #[test]
    fn rollout_replays_disturbances_bitwise() {
        let store = collect_store(2, &[1, 0]);
        let csm = Csm {
            building: zero_building_model(),
            reward: RewardModel { beta: [0.0; 4], decomposition: RewardDecomposition::CostOnly },
        };
        let mut rng = seeding::child_rng(1, "rollout-test");
        let mut policy = FixedPolicy(HeatPumpAction::On);
        for _ in 0..50 {
            let (rollout, log_probs) =
                generate_rollout(&csm, &store, &mut policy, 24, &reward_ctx(), &mut rng).unwrap();
            assert_eq!(rollout.transitions.len(), 24);
            assert_eq!(log_probs.len(), 24);
            assert!(rollout.start_offset <= EPISODE_LEN - 24 - 1);
            let source = store.episode(rollout.source_episode);
            assert_eq!(
                rollout.transitions[0].state.zone_temp_k,
                source.transitions[rollout.start_offset].state.zone_temp_k
            );
            for (l, tr) in rollout.transitions.iter().enumerate() {
                let src = &source.transitions[rollout.start_offset + l];
                assert_eq!(tr.state.disturbances, src.state.disturbances);
                assert_eq!(tr.next_state.disturbances, src.next_state.disturbances);
            }
        }
    }

    #[test]
    fn rollout_length_validation() {
        let store = collect_store(1, &[0]);
        let csm = Csm {
            building: zero_building_model(),
            reward: RewardModel { beta: [0.0; 4], decomposition: RewardDecomposition::CostOnly },
        };
        let mut rng = seeding::child_rng(2, "rollout-test");
        let mut policy = FixedPolicy(HeatPumpAction::Off);
        let err = generate_rollout(&csm, &store, &mut policy, EPISODE_LEN, &reward_ctx(), &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn replay_policy_with_trained_model_tracks_history() {
        let store = collect_store(2, &[1, 0, 0, 1, 0, 1, 1, 0]);
        let building = fit_building_model(&store, &CsmHyper::fast(), 3).unwrap();
        let ctx = reward_ctx();
        let reward = fit_reward_model(&store, RewardDecomposition::CostOnly, &ctx).unwrap();
        let csm = Csm { building, reward };

        // Peek the anchor the stream will draw, then hand the policy exactly
        // the historical actions of that segment.
        let mut rng = seeding::child_rng(4, "replay");
        let (episode, offset) = {
            let mut probe = rng.clone();
            let ep = probe.random_range(0..store.n_episodes());
            let off = probe.random_range(0..=(EPISODE_LEN - 24 - 1));
            (ep, off)
        };
        let actions: Vec<HeatPumpAction> = store.episode(episode).transitions
            [offset..offset + 24]
            .iter()
            .map(|tr| tr.action)
            .collect();
        let mut policy = ReplayPolicy { actions, cursor: 0 };
        let (rollout, _) =
            generate_rollout(&csm, &store, &mut policy, 24, &ctx, &mut rng).unwrap();
        assert_eq!((rollout.source_episode, rollout.start_offset), (episode, offset));

        let source = store.episode(rollout.source_episode);
        let mut worst: f64 = 0.0;
        for (l, tr) in rollout.transitions.iter().enumerate() {
            let src = &source.transitions[rollout.start_offset + l];
            assert_eq!(tr.action, src.action);
            worst = worst.max((tr.next_state.zone_temp_k - src.next_state.zone_temp_k).abs());
        }
        assert!(worst < 0.25, "replay drift {worst} K over 24 steps");
    }
}
