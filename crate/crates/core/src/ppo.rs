//! Proximal policy optimization with two discrete actions: categorical
//! policy head, value head, GAE(lambda), and the clipped surrogate objective
//! with entropy and value terms.
//!
//! Each update consumes only trajectory segments gathered by the current
//! policy since the previous update (the fresh real episode, or the fresh
//! batch of synthetic rollouts), which is what the importance ratios assume.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::building_sim::{EnvState, HeatPumpAction, Transition};
use crate::error::{Error, Result};
use crate::neural::{Activation, Adam, Gradients, Mlp};
use crate::seeding;
use crate::surrogate::{ActionSampler, Normalizer};

/// PPO hyperparameters. Defaults are the reference values used by all
/// headline experiments; `gae_lambda` and `max_grad_norm` follow the common
/// library defaults the reference implementation relied on.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoHyper {
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub n_steps: usize,
    pub n_epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gae_lambda: f64,
    /// Global L2 clip on the combined policy/value gradients per minibatch.
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    pub hidden: Vec<usize>,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            gamma: 0.95,
            batch_size: 21,
            n_steps: 168,
            n_epochs: 10,
            clip: 0.3,
            entropy_coef: 0.01,
            value_coef: 0.25,
            gae_lambda: 0.95,
            max_grad_norm: 0.5,
            normalize_advantage: true,
            hidden: vec![128, 128, 128],
        }
    }
}

impl PpoHyper {
    /// Reduced profile for CI and the acceptance suite.
    pub fn fast() -> Self {
        Self { hidden: vec![64, 64], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip <= 0.0 {
            return Err(Error::InvalidArgument("clip range must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument("gamma must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::InvalidArgument("gae_lambda must be in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.n_epochs == 0 || self.n_steps == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, n_epochs and n_steps must be positive".into(),
            ));
        }
        if self.max_grad_norm <= 0.0 {
            return Err(Error::InvalidArgument("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Policy and value networks plus the shared state normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueNets {
    pub policy: Mlp,
    pub value: Mlp,
    pub normalizer: Normalizer,
}

impl PolicyValueNets {
    pub fn new(state_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut policy_dims = vec![state_dim];
        policy_dims.extend_from_slice(hidden);
        policy_dims.push(2);
        let mut value_dims = vec![state_dim];
        value_dims.extend_from_slice(hidden);
        value_dims.push(1);
        let mut policy = Mlp::new(&policy_dims, Activation::Tanh, rng)?;
        // Scale the action head down so the initial policy is near uniform
        // for every seed, as the reference library does.
        let head = policy_dims.len() - 2;
        for w in policy.layer_weights_mut(head) {
            *w *= 0.01;
        }
        Ok(Self {
            policy,
            value: Mlp::new(&value_dims, Activation::Tanh, rng)?,
            normalizer: Normalizer::identity(state_dim),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.policy.input_dim()
    }

    fn normalized_features(&self, state: &EnvState) -> Vec<f64> {
        self.normalizer.normalize(&state.features())
    }

    /// Action probabilities from the softmax of the policy logits.
    pub fn action_distribution(&self, state: &EnvState) -> Result<[f64; 2]> {
        let logits = self.policy.forward(&self.normalized_features(state))?;
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric(format!("non-finite policy logits: {logits:?}")));
        }
        Ok(softmax2(logits[0], logits[1]))
    }

    /// Deterministic argmax action for test-time evaluation.
    pub fn greedy_action(&self, state: &EnvState) -> Result<HeatPumpAction> {
        let probs = self.action_distribution(state)?;
        Ok(if probs[0] >= probs[1] { HeatPumpAction::Off } else { HeatPumpAction::On })
    }

    pub fn value(&self, state: &EnvState) -> Result<f64> {
        Ok(self.value.forward(&self.normalized_features(state))?[0])
    }
}

fn softmax2(a: f64, b: f64) -> [f64; 2] {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let z = ea + eb;
    [ea / z, eb / z]
}

fn entropy2(probs: &[f64; 2]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Clipped surrogate for one sample: `min(r A, clip(r, 1-e, 1+e) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

/// d(surrogate)/d(log pi_new) for one sample. Zero where clipping binds and
/// the clipped term is the smaller one; `ratio * advantage` otherwise.
pub fn surrogate_grad_coeff(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        unclipped
    } else {
        0.0
    }
}

/// Standard GAE(lambda) recursion with an explicit bootstrap value for the
/// state after the final step. Returns (advantages, returns) where
/// `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "rewards and values must align");
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next_value - values[t];
        gae = delta + gamma * lambda * gae;
        advantages[t] = gae;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// One on-policy trajectory segment: aligned states, actions, sampling
/// log-probabilities and rewards, plus the state the segment ended in.
#[derive(Debug, Clone)]
pub struct TrajectorySegment {
    pub states: Vec<EnvState>,
    pub actions: Vec<HeatPumpAction>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub bootstrap_state: EnvState,
}

impl TrajectorySegment {
    pub fn from_transitions(transitions: &[Transition], log_probs: Vec<f64>) -> Self {
        assert_eq!(transitions.len(), log_probs.len());
        assert!(!transitions.is_empty(), "segment must be nonempty");
        Self {
            states: transitions.iter().map(|t| t.state.clone()).collect(),
            actions: transitions.iter().map(|t| t.action).collect(),
            log_probs,
            rewards: transitions.iter().map(|t| t.reward).collect(),
            bootstrap_state: transitions.last().unwrap().next_state.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Whether an update consumed real or synthetic experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateSource {
    Real,
    Synthetic,
}

impl std::fmt::Display for UpdateSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Real => write!(f, "real"),
            Self::Synthetic => write!(f, "synthetic"),
        }
    }
}

/// Loss diagnostics for one update, averaged over all minibatch passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    pub update_idx: usize,
    pub source: UpdateSource,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub samples: usize,
}

pub const UPDATE_CSV_HEADER: &str =
    "update_idx,source,mean_reward,policy_loss,value_loss,entropy,clip_fraction";

impl UpdateDiagnostics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.update_idx,
            self.source,
            self.mean_reward,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_fraction
        )
    }
}

/// The PPO learner: networks, optimizers, and the sampling RNG stream.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    nets: PolicyValueNets,
    hyper: PpoHyper,
    policy_opt: Adam,
    value_opt: Adam,
    rng: ChaCha8Rng,
    updates_done: usize,
}

impl PpoAgent {
    pub fn new(state_dim: usize, hyper: PpoHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = seeding::child_rng(seed, "ppo-init");
        let nets = PolicyValueNets::new(state_dim, &hyper.hidden, &mut rng)?;
        let policy_opt = Adam::new(&nets.policy, hyper.lr);
        let value_opt = Adam::new(&nets.value, hyper.lr);
        Ok(Self {
            nets,
            hyper,
            policy_opt,
            value_opt,
            rng: seeding::child_rng(seed, "ppo-sample"),
            updates_done: 0,
        })
    }

    pub fn nets(&self) -> &PolicyValueNets {
        &self.nets
    }

    pub fn hyper(&self) -> &PpoHyper {
        &self.hyper
    }

    pub fn updates_done(&self) -> usize {
        self.updates_done
    }

    /// Swap in a refreshed state normalizer (shared with the surrogate).
    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        if normalizer.dim() != self.nets.state_dim() {
            return Err(Error::Shape(format!(
                "normalizer dim {} does not match state dim {}",
                normalizer.dim(),
                self.nets.state_dim()
            )));
        }
        self.nets.normalizer = normalizer;
        Ok(())
    }

    /// Sample an action from the categorical policy; returns the action and
    /// its log-probability under the current policy.
    pub fn sample_action(&mut self, state: &EnvState) -> Result<(HeatPumpAction, f64)> {
        let probs = self.nets.action_distribution(state)?;
        let u: f64 = self.rng.random();
        let action = if u < probs[0] { HeatPumpAction::Off } else { HeatPumpAction::On };
        Ok((action, probs[action.index()].ln()))
    }

    /// One PPO update over freshly gathered segments.
    pub fn update(
        &mut self,
        segments: &[TrajectorySegment],
        source: UpdateSource,
    ) -> Result<UpdateDiagnostics> {
        let total: usize = segments.iter().map(TrajectorySegment::len).sum();
        if total < self.hyper.batch_size {
            return Err(Error::InvalidArgument(format!(
                "update needs at least batch_size = {} samples, got {total}",
                self.hyper.batch_size
            )));
        }

        // GAE per segment under the current value function, then flatten.
        let mut states = Vec::with_capacity(total);
        let mut actions = Vec::with_capacity(total);
        let mut log_probs_old = Vec::with_capacity(total);
        let mut advantages = Vec::with_capacity(total);
        let mut returns = Vec::with_capacity(total);
        let mut reward_sum = 0.0;
        for seg in segments {
            let values: Vec<f64> =
                seg.states.iter().map(|s| self.nets.value(s)).collect::<Result<_>>()?;
            let bootstrap = self.nets.value(&seg.bootstrap_state)?;
            let (adv, ret) = compute_gae(
                &seg.rewards,
                &values,
                bootstrap,
                self.hyper.gamma,
                self.hyper.gae_lambda,
            );
            states.extend(seg.states.iter().map(|s| self.nets.normalizer.normalize(&s.features())));
            actions.extend(seg.actions.iter().copied());
            log_probs_old.extend(seg.log_probs.iter().copied());
            advantages.extend(adv);
            returns.extend(ret);
            reward_sum += seg.rewards.iter().sum::<f64>();
        }

        let mut policy_loss_acc = 0.0;
        let mut value_loss_acc = 0.0;
        let mut entropy_acc = 0.0;
        let mut clip_count = 0usize;
        let mut sample_passes = 0usize;
        let mut minibatches = 0usize;

        let mut order: Vec<usize> = (0..total).collect();
        for _ in 0..self.hyper.n_epochs {
            order.shuffle(&mut self.rng);
            for batch in order.chunks(self.hyper.batch_size) {
                let b = batch.len() as f64;

                let (adv_mean, adv_std) = if self.hyper.normalize_advantage {
                    let mean = batch.iter().map(|&i| advantages[i]).sum::<f64>() / b;
                    let var =
                        batch.iter().map(|&i| (advantages[i] - mean).powi(2)).sum::<f64>() / b;
                    (mean, var.sqrt().max(1e-8))
                } else {
                    (0.0, 1.0)
                };

                let mut policy_grads = Gradients::zeros_like(&self.nets.policy);
                let mut value_grads = Gradients::zeros_like(&self.nets.value);
                let mut batch_policy_loss = 0.0;
                let mut batch_value_loss = 0.0;
                let mut batch_entropy = 0.0;

                for &i in batch {
                    let adv = (advantages[i] - adv_mean) / adv_std;
                    let features = &states[i];
                    let action_idx = actions[i].index();

                    let trace = self.nets.policy.forward_traced(features)?;
                    let logits = trace.output();
                    if logits.iter().any(|l| !l.is_finite()) {
                        return Err(Error::Numeric("non-finite logits in PPO update".into()));
                    }
                    let probs = softmax2(logits[0], logits[1]);
                    let log_prob_new = probs[action_idx].ln();
                    let ratio = (log_prob_new - log_probs_old[i]).exp();
                    let entropy = entropy2(&probs);

                    batch_policy_loss -= clipped_surrogate(ratio, adv, self.hyper.clip);
                    batch_entropy += entropy;
                    if (ratio - 1.0).abs() > self.hyper.clip {
                        clip_count += 1;
                    }

                    // Maximize surrogate + c2 * entropy; gradients w.r.t. the
                    // two logits, negated for minimization.
                    let coeff = surrogate_grad_coeff(ratio, adv, self.hyper.clip);
                    let mut logit_grad = [0.0; 2];
                    for j in 0..2 {
                        let indicator = if j == action_idx { 1.0 } else { 0.0 };
                        let d_logp = indicator - probs[j];
                        let d_entropy = -probs[j] * (probs[j].ln() + entropy);
                        logit_grad[j] =
                            -(coeff * d_logp + self.hyper.entropy_coef * d_entropy) / b;
                    }
                    policy_grads.add_assign(&self.nets.policy.backward(&trace, &logit_grad)?);

                    let vtrace = self.nets.value.forward_traced(features)?;
                    let v = vtrace.output()[0];
                    let err = v - returns[i];
                    batch_value_loss += err * err;
                    let v_grad = [self.hyper.value_coef * 2.0 * err / b];
                    value_grads.add_assign(&self.nets.value.backward(&vtrace, &v_grad)?);

                    sample_passes += 1;
                }

                // Global gradient-norm clip over both heads together.
                let norm = (policy_grads.squared_norm() + value_grads.squared_norm()).sqrt();
                if norm > self.hyper.max_grad_norm {
                    let factor = self.hyper.max_grad_norm / norm;
                    policy_grads.scale(factor);
                    value_grads.scale(factor);
                }
                self.policy_opt.apply(&mut self.nets.policy, &policy_grads)?;
                self.value_opt.apply(&mut self.nets.value, &value_grads)?;

                policy_loss_acc += batch_policy_loss / b;
                value_loss_acc += batch_value_loss / b;
                entropy_acc += batch_entropy / b;
                minibatches += 1;
            }
        }

        self.updates_done += 1;
        Ok(UpdateDiagnostics {
            update_idx: self.updates_done - 1,
            source,
            mean_reward: reward_sum / total as f64,
            policy_loss: policy_loss_acc / minibatches as f64,
            value_loss: value_loss_acc / minibatches as f64,
            entropy: entropy_acc / minibatches as f64,
            clip_fraction: clip_count as f64 / sample_passes as f64,
            samples: total,
        })
    }
}

impl ActionSampler for PpoAgent {
    fn sample_action(&mut self, state: &EnvState) -> Result<(HeatPumpAction, f64)> {
        PpoAgent::sample_action(self, state)
    }
}
