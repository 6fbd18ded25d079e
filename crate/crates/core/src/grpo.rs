//! Softmax-weighted ranking loss over groups of sampled questions, its exact
//! gradient for the template policy, AdamW, and the self-play training loop.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{
    extract_turn_samples, run_episode, EpisodeConfig, EpisodeError, Interviewer, PatientFactory, Trajectory,
};
use crate::policy::{
    action_distribution, log_action_distribution, softmax, PolicyError, PolicyParameters, SoftmaxPolicy,
};
use crate::reward::{RewardError, RewardModel};
use crate::seed::{derive_rng, derive_seed};
use crate::vignette::VignetteCase;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("group has no candidates")]
    EmptyGroup,
    #[error("group rewards must be finite")]
    NonFiniteReward,
    #[error("non-finite gradient entry {index} ({value}); optimizer step aborted")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("gradient has {got} entries, parameters have {expected}")]
    Shape { expected: usize, got: usize },
    #[error("no training cases")]
    NoCases,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("training observer failed: {0}")]
    Observer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    /// Candidates sampled per state (K).
    pub group_size: usize,
    /// Ranking temperature.
    pub tau: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Turn states per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Fresh self-play episodes generated per step.
    pub episodes_per_step: usize,
    /// Discount on per-turn rewards when summing over an episode.
    pub discount: f64,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 2,
            tau: 1.0,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 150,
            steps_per_epoch: 10,
            episodes_per_step: 2,
            discount: 1.0,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    /// Short run sized for a single laptop core.
    pub fn desk() -> Self {
        Self { epochs: 30, learning_rate: 0.05, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: String| Err(GrpoError::Config(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        for (name, v) in
            [("learning_rate", self.learning_rate), ("weight_decay", self.weight_decay), ("epsilon", self.epsilon)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.episodes_per_step == 0 {
            return bad("batch_size, steps_per_epoch and episodes_per_step must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad(format!("discount must lie in [0, 1], got {}", self.discount));
        }
        Ok(())
    }
}

/// u_i = softmax(r / τ)_i.
pub fn ranking_weights(rewards: &[f64], tau: f64) -> Result<Vec<f64>, GrpoError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GrpoError::Config(format!("tau must be positive, got {tau}")));
    }
    if rewards.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward);
    }
    Ok(softmax(&rewards.iter().map(|r| r / tau).collect::<Vec<_>>()))
}

/// K candidates drawn at one state, with their rewards and ranking weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub features: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GroupSample {
    pub fn new(
        features: Vec<f64>,
        actions: Vec<usize>,
        log_probs: Vec<f64>,
        rewards: Vec<f64>,
        tau: f64,
    ) -> Result<Self, GrpoError> {
        if actions.len() != log_probs.len() || actions.len() != rewards.len() {
            return Err(GrpoError::Config("actions, log_probs and rewards differ in length".into()));
        }
        let weights = ranking_weights(&rewards, tau)?;
        Ok(Self { features, actions, log_probs, rewards, weights })
    }

    /// Builds a group whose log-probabilities come from `params`.
    pub fn at_params(
        params: &PolicyParameters,
        features: Vec<f64>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        tau: f64,
    ) -> Result<Self, GrpoError> {
        let lp = log_action_distribution(params, &features)?;
        let log_probs = actions
            .iter()
            .map(|&a| lp.get(a).copied().ok_or(PolicyError::Template { index: a, len: lp.len() }))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(features, actions, log_probs, rewards, tau)
    }
}

/// L = -Σ u_i log π(a_i | s), using the recorded log-probabilities.
pub fn grpo_loss(group: &GroupSample) -> f64 {
    -group.weights.iter().zip(&group.log_probs).map(|(u, l)| u * l).sum::<f64>()
}

/// The same loss with log-probabilities recomputed under `params`.
pub fn grpo_loss_at(group: &GroupSample, params: &PolicyParameters) -> Result<f64, GrpoError> {
    let lp = log_action_distribution(params, &group.features)?;
    let mut loss = 0.0;
    for (u, &a) in group.weights.iter().zip(&group.actions) {
        let l = lp.get(a).ok_or(PolicyError::Template { index: a, len: lp.len() })?;
        loss -= u * l;
    }
    Ok(loss)
}

/// ∂L/∂θ and ∂L/∂b, shaped like the parameters. With π the current action
/// distribution, the logit gradient is π - Σ_i u_i e_{a_i}.
pub fn grpo_gradient(group: &GroupSample, params: &PolicyParameters) -> Result<PolicyParameters, GrpoError> {
    let pi = action_distribution(params, &group.features)?;
    let total_u: f64 = group.weights.iter().sum();
    let mut coef: Vec<f64> = pi.iter().map(|p| p * total_u).collect();
    for (u, &a) in group.weights.iter().zip(&group.actions) {
        let len = coef.len();
        *coef.get_mut(a).ok_or(PolicyError::Template { index: a, len })? -= u;
    }
    let mut grad = PolicyParameters::zeros(params.templates, params.features);
    for (k, c) in coef.iter().enumerate() {
        grad.bias[k] = *c;
        for (j, x) in group.features.iter().enumerate() {
            grad.theta[k * params.features + j] = c * x;
        }
    }
    Ok(grad)
}

/// First and second moment estimates for AdamW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One decoupled-weight-decay Adam update of `values` in place. Leaves
/// everything untouched if the gradient has a non-finite entry.
pub fn adamw_update(
    values: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    config: &GrpoConfig,
) -> Result<(), GrpoError> {
    if grad.len() != values.len() || state.m.len() != values.len() || state.v.len() != values.len() {
        return Err(GrpoError::Shape { expected: values.len(), got: grad.len() });
    }
    if let Some((index, &value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        log::error!("aborting optimizer step: gradient entry {index} is {value}");
        return Err(GrpoError::NonFiniteGradient { index, value });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for i in 0..values.len() {
        let g = grad[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] -= config.learning_rate * (m_hat / (v_hat.sqrt() + config.epsilon) + config.weight_decay * values[i]);
    }
    Ok(())
}

pub fn optimizer_step(
    params: &PolicyParameters,
    grad: &PolicyParameters,
    config: &GrpoConfig,
    state: &AdamState,
) -> Result<(PolicyParameters, AdamState), GrpoError> {
    let mut values = params.flat();
    let mut next = state.clone();
    adamw_update(&mut values, &grad.flat(), &mut next, config)?;
    Ok((PolicyParameters::from_flat(params.templates, params.features, &values)?, next))
}

/// Cases, reward model and patients shared by training and rollouts.
#[derive(Clone, Copy)]
pub struct SelfPlay<'a> {
    pub cases: &'a [VignetteCase],
    pub model: &'a RewardModel,
    pub patients: &'a dyn PatientFactory,
    pub episode: EpisodeConfig,
}

impl SelfPlay<'_> {
    /// One episode on `case` with patient and sampling streams derived from
    /// `seed` and `path`.
    pub fn play(
        &self,
        interviewer: &dyn Interviewer,
        case: &VignetteCase,
        seed: u64,
        path: &[u64],
    ) -> Result<Trajectory, EpisodeError> {
        let mut patient_path = path.to_vec();
        patient_path.push(0);
        let patient = self.patients.create(case, derive_seed(seed, &patient_path));
        let mut rng_path = path.to_vec();
        rng_path.push(1);
        let mut rng = derive_rng(seed, &rng_path);
        run_episode(interviewer, patient.as_ref(), case, self.model, &self.episode, &mut rng)
    }

    /// One episode per case, in case order.
    pub fn rollout(&self, interviewer: &dyn Interviewer, seed: u64) -> Result<Vec<Trajectory>, EpisodeError> {
        self.cases
            .iter()
            .enumerate()
            .map(|(i, case)| self.play(interviewer, case, seed, &[u64::MAX, i as u64]))
            .collect()
    }
}

pub fn mean_cumulative_ig(trajectories: &[Trajectory]) -> f64 {
    mean(trajectories.iter().map(Trajectory::cumulative_ig))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: usize,
    /// Mean reward over every scored candidate in the step.
    pub mean_reward: f64,
    /// Mean group loss before the update.
    pub loss: f64,
    /// Mean discounted expected weighted IG of the step's episodes.
    pub mean_episode_ig: f64,
    pub mean_episode_reward: f64,
    /// Mean category weight actually revealed per episode.
    pub mean_episode_revealed: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub policy: SoftmaxPolicy,
    pub optimizer: AdamState,
    pub epochs_completed: usize,
}

impl TrainState {
    pub fn fresh(policy: SoftmaxPolicy) -> Self {
        let n = policy.params.len();
        Self { policy, optimizer: AdamState::new(n), epochs_completed: 0 }
    }
}

/// Hooks for persisting progress while training runs.
pub trait TrainObserver {
    fn on_step(&mut self, _metrics: &StepMetrics) -> Result<(), String> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _state: &TrainState) -> Result<(), String> {
        Ok(())
    }

    /// Called with the last consistent state before training aborts.
    fn on_abort(&mut self, _state: &TrainState, _error: &GrpoError) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<StepMetrics>,
}

/// Runs the remaining epochs of `state` up to `config.epochs`. Every step
/// draws its randomness from `(seed, epoch, step)`, so resuming from a saved
/// state replays the uninterrupted run exactly.
pub fn train(
    play: &SelfPlay<'_>,
    mut state: TrainState,
    config: &GrpoConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, GrpoError> {
    config.validate()?;
    if play.cases.is_empty() {
        return Err(GrpoError::NoCases);
    }
    let mut history = Vec::new();
    for epoch in state.epochs_completed..config.epochs {
        for step in 0..config.steps_per_epoch {
            let result = train_step(play, &state, config, epoch, step).and_then(|(next, metrics)| {
                observer.on_step(&metrics).map_err(GrpoError::Observer)?;
                Ok((next, metrics))
            });
            match result {
                Ok(((policy, optimizer), metrics)) => {
                    state.policy = policy;
                    state.optimizer = optimizer;
                    history.push(metrics);
                }
                Err(e) => {
                    observer.on_abort(&state, &e);
                    return Err(e);
                }
            }
        }
        state.epochs_completed = epoch + 1;
        if let Err(msg) = observer.on_epoch_end(&state) {
            let e = GrpoError::Observer(msg);
            observer.on_abort(&state, &e);
            return Err(e);
        }
    }
    Ok(TrainOutcome { state, history })
}

type StepResult = ((SoftmaxPolicy, AdamState), StepMetrics);

fn train_step(
    play: &SelfPlay<'_>,
    state: &TrainState,
    config: &GrpoConfig,
    epoch: usize,
    step: usize,
) -> Result<StepResult, GrpoError> {
    let policy = &state.policy;
    let global = (epoch * config.steps_per_epoch + step) as u64;
    let n = play.cases.len() as u64;
    let mut trajectories = Vec::with_capacity(config.episodes_per_step);
    for i in 0..config.episodes_per_step as u64 {
        let case = &play.cases[((global * config.episodes_per_step as u64 + i) % n) as usize];
        trajectories.push(play.play(policy, case, config.seed, &[epoch as u64, step as u64, i])?);
    }
    let samples: Vec<_> = trajectories.iter().flat_map(extract_turn_samples).collect();

    let mut rng = derive_rng(config.seed, &[epoch as u64, step as u64, u64::MAX]);
    let picks: Vec<usize> = if samples.len() >= config.batch_size {
        index::sample(&mut rng, samples.len(), config.batch_size).into_vec()
    } else {
        (0..config.batch_size).map(|_| rng.gen_range(0..samples.len())).collect()
    };

    let mut grad_sum = vec![0.0; policy.params.len()];
    let mut loss_sum = 0.0;
    let mut rewards = Vec::new();
    for &pick in &picks {
        let s = &samples[pick].state;
        let candidates = policy.candidates(s, config.group_size, &mut rng)?;
        let mut group_rewards = Vec::with_capacity(candidates.len());
        for c in &candidates {
            group_rewards.push(s.score(play.model, &c.text)?.reward.total);
        }
        rewards.extend_from_slice(&group_rewards);
        let group = GroupSample::new(
            policy.features(s),
            candidates.iter().map(|c| c.template).collect(),
            candidates.iter().map(|c| c.log_prob).collect(),
            group_rewards,
            config.tau,
        )?;
        loss_sum += grpo_loss(&group);
        for (acc, g) in grad_sum.iter_mut().zip(grpo_gradient(&group, &policy.params)?.flat()) {
            *acc += g;
        }
    }
    let scale = 1.0 / picks.len() as f64;
    grad_sum.iter_mut().for_each(|g| *g *= scale);
    let grad = PolicyParameters::from_flat(policy.params.templates, policy.params.features, &grad_sum)?;
    let (params, optimizer) = optimizer_step(&policy.params, &grad, config, &state.optimizer)?;

    let metrics = StepMetrics {
        epoch,
        step,
        mean_reward: mean(rewards.iter().copied()),
        loss: loss_sum * scale,
        mean_episode_ig: mean_cumulative_ig(&trajectories),
        mean_episode_reward: mean(trajectories.iter().map(|t| t.total_reward)),
        mean_episode_revealed: mean(trajectories.iter().map(Trajectory::revealed_mass)),
        grad_norm: grad_sum.iter().map(|g| g * g).sum::<f64>().sqrt(),
    };
    Ok(((policy.with_params(params)?, optimizer), metrics))
}
