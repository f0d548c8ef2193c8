//! The actor-critic agent.
//!
//! One actor network is shared by all scale levels: each sub-state yields a
//! softmax over the five actions and the policy is their arithmetic mean.
//! The critic scores each sub-state and averages as well (or reads the
//! concatenated sub-states, see [`CriticInput`]).

mod check;
mod refine;
mod supervised;
mod train;

pub use check::{check_gradients, GradCheckReport};
pub use refine::{apply_offsets, noisy_box, refinement_gain, train_refiner, RefineOutcome, Refiner, RefinerConfig};
pub use supervised::{covering_region, supervised_label, train_supervised, SupervisedConfig};
pub use train::{train_rl, MetricsRecord, Schedule};

use crate::env::{Action, AgentState, EnvError, ShrinkEnv, NUM_ACTIONS};
use crate::geometry::iou;
use crate::nets::{softmax, Activation, Adam, ForwardCache, Head, Mlp, NetError};
use crate::task::TaskError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("state has {got} sub-states, agent expects {expected}")]
    Scales { expected: usize, got: usize },
    #[error("action {0:?} has zero probability")]
    ZeroProbability(Action),
    #[error("value estimate {value} exceeds bound {bound} at episode {episode}")]
    Diverged { episode: usize, value: f64, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticInput {
    /// Critic applied per sub-state, outputs averaged.
    MeanOverScales,
    /// Critic applied once to the concatenated sub-states.
    Concatenated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sample from the averaged distribution.
    Train,
    /// Most probable action, lowest index on ties.
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_coef: f64,
    pub critic_input: CriticInput,
    /// Training aborts when a value estimate grows beyond this.
    pub value_bound: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            activation: Activation::Tanh,
            gamma: 0.5,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            entropy_coef: 0.0,
            critic_input: CriticInput::MeanOverScales,
            value_bound: 1e4,
        }
    }
}

/// Actor forward passes for every sub-state of one state.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub per_scale: Vec<[f64; NUM_ACTIONS]>,
    pub probs: [f64; NUM_ACTIONS],
    caches: Vec<ForwardCache>,
}

fn to_array(v: &[f64]) -> [f64; NUM_ACTIONS] {
    let mut a = [0.0; NUM_ACTIONS];
    a.copy_from_slice(v);
    a
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Draw an index from a probability vector.
pub fn sample_index(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

/// Evaluate the shared actor on each sub-state and average the softmaxes.
pub fn policy(actor: &Mlp, state: &AgentState) -> Result<PolicyOutput, AgentError> {
    let mut caches = Vec::with_capacity(state.sub_states.len());
    let mut per_scale = Vec::with_capacity(state.sub_states.len());
    let mut probs = [0.0; NUM_ACTIONS];
    for s in &state.sub_states {
        let cache = actor.forward_cached(s)?;
        let p = to_array(&softmax(cache.output()));
        probs.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        per_scale.push(p);
        caches.push(cache);
    }
    let n = state.sub_states.len() as f64;
    probs.iter_mut().for_each(|a| *a /= n);
    Ok(PolicyOutput {
        per_scale,
        probs,
        caches,
    })
}

pub fn choose(probs: &[f64; NUM_ACTIONS], mode: Mode, rng: &mut ChaCha8Rng) -> Action {
    let i = match mode {
        Mode::Train => sample_index(probs, rng),
        Mode::Infer => argmax(probs),
    };
    Action::from_index(i).expect("index below NUM_ACTIONS")
}

/// Accumulate `scale * d log(pbar[action]) / d(actor params)` into `grads`,
/// where `pbar` is the scale-averaged policy. Returns `log pbar[action]`.
pub fn accumulate_log_prob_grad(
    actor: &Mlp,
    out: &PolicyOutput,
    action: Action,
    scale: f64,
    grads: &mut [f64],
) -> Result<f64, AgentError> {
    let a = action.index();
    let pbar = out.probs[a];
    if pbar <= 0.0 {
        return Err(AgentError::ZeroProbability(action));
    }
    let n = out.per_scale.len() as f64;
    for (p, cache) in out.per_scale.iter().zip(&out.caches) {
        // d pbar_a / d z_j = p_a (1[j=a] - p_j) / n
        let coef = scale * p[a] / (n * pbar);
        let upstream: Vec<f64> = (0..NUM_ACTIONS)
            .map(|j| coef * (if j == a { 1.0 } else { 0.0 } - p[j]))
            .collect();
        actor.backward_params(cache, &upstream, grads)?;
    }
    Ok(pbar.ln())
}

/// Accumulate `scale * d H(pbar) / d(actor params)` (entropy of the mean policy).
fn accumulate_entropy_grad(actor: &Mlp, out: &PolicyOutput, scale: f64, grads: &mut [f64]) -> Result<(), AgentError> {
    let n = out.per_scale.len() as f64;
    let g: Vec<f64> = out.probs.iter().map(|p| -(p.max(1e-300).ln() + 1.0)).collect();
    for (p, cache) in out.per_scale.iter().zip(&out.caches) {
        let mean_g: f64 = p.iter().zip(&g).map(|(pi, gi)| pi * gi).sum();
        let upstream: Vec<f64> = (0..NUM_ACTIONS).map(|j| scale * p[j] * (g[j] - mean_g) / n).collect();
        actor.backward_params(cache, &upstream, grads)?;
    }
    Ok(())
}

/// `delta = r + gamma * v_next - v_now`, without the bootstrap term at episode end.
pub fn td_advantage(reward: f64, v_next: f64, v_now: f64, gamma: f64, terminal: bool) -> f64 {
    if terminal {
        reward - v_now
    } else {
        reward + gamma * v_next - v_now
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub critic_input: CriticInput,
    pub value_bound: f64,
    num_scales: usize,
    actor_opt: Adam,
    critic_opt: Adam,
}

/// Diagnostics of one actor-then-critic iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub delta: f64,
    pub v_now: f64,
    pub v_next: f64,
}

impl ActorCritic {
    pub fn new(state_dim: usize, num_scales: usize, cfg: &AgentConfig, seed: u64) -> Result<Self, AgentError> {
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(NUM_ACTIONS);
        let critic_in = match cfg.critic_input {
            CriticInput::MeanOverScales => state_dim,
            CriticInput::Concatenated => state_dim * num_scales,
        };
        let mut critic_sizes = vec![critic_in];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, cfg.activation, Head::Logits, crate::task::derive_seed(seed, 10, 0))?;
        let critic = Mlp::new(&critic_sizes, cfg.activation, Head::Scalar, crate::task::derive_seed(seed, 11, 0))?;
        Ok(Self::from_parts(actor, critic, num_scales, cfg))
    }

    pub fn from_parts(actor: Mlp, critic: Mlp, num_scales: usize, cfg: &AgentConfig) -> Self {
        Self {
            actor_opt: Adam::new(actor.num_params(), cfg.actor_lr),
            critic_opt: Adam::new(critic.num_params(), cfg.critic_lr),
            actor,
            critic,
            gamma: cfg.gamma,
            entropy_coef: cfg.entropy_coef,
            critic_input: cfg.critic_input,
            value_bound: cfg.value_bound,
            num_scales,
        }
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    fn check_scales(&self, state: &AgentState) -> Result<(), AgentError> {
        if state.sub_states.len() != self.num_scales {
            return Err(AgentError::Scales {
                expected: self.num_scales,
                got: state.sub_states.len(),
            });
        }
        Ok(())
    }

    pub fn policy(&self, state: &AgentState) -> Result<PolicyOutput, AgentError> {
        self.check_scales(state)?;
        policy(&self.actor, state)
    }

    pub fn select_action(
        &self,
        state: &AgentState,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Action, [f64; NUM_ACTIONS]), AgentError> {
        let out = self.policy(state)?;
        Ok((choose(&out.probs, mode, rng), out.probs))
    }

    fn critic_caches(&self, state: &AgentState) -> Result<Vec<ForwardCache>, AgentError> {
        self.check_scales(state)?;
        Ok(match self.critic_input {
            CriticInput::MeanOverScales => state
                .sub_states
                .iter()
                .map(|s| self.critic.forward_cached(s))
                .collect::<Result<_, _>>()?,
            CriticInput::Concatenated => vec![self.critic.forward_cached(&state.sub_states.concat())?],
        })
    }

    fn value_from(caches: &[ForwardCache]) -> f64 {
        caches.iter().map(|c| c.output()[0]).sum::<f64>() / caches.len() as f64
    }

    pub fn value(&self, state: &AgentState) -> Result<f64, AgentError> {
        Ok(Self::value_from(&self.critic_caches(state)?))
    }

    fn value_grad_from(&self, caches: &[ForwardCache], scale: f64) -> Result<Vec<f64>, AgentError> {
        let mut grads = vec![0.0; self.critic.num_params()];
        let up = [scale / caches.len() as f64];
        for c in caches {
            self.critic.backward_params(c, &up, &mut grads)?;
        }
        Ok(grads)
    }

    /// `V(state)` and its gradient with respect to the critic parameters.
    pub fn value_gradient(&self, state: &AgentState) -> Result<(f64, Vec<f64>), AgentError> {
        let caches = self.critic_caches(state)?;
        Ok((Self::value_from(&caches), self.value_grad_from(&caches, 1.0)?))
    }

    /// `log pi(state, action)` and its gradient with respect to the actor parameters.
    pub fn log_prob_gradient(&self, state: &AgentState, action: Action) -> Result<(f64, Vec<f64>), AgentError> {
        let out = self.policy(state)?;
        let mut grads = vec![0.0; self.actor.num_params()];
        let lp = accumulate_log_prob_grad(&self.actor, &out, action, 1.0, &mut grads)?;
        Ok((lp, grads))
    }

    fn actor_step(&mut self, out: &PolicyOutput, action: Action, delta: f64) -> Result<(), AgentError> {
        if delta == 0.0 && self.entropy_coef == 0.0 {
            return Ok(());
        }
        // Adam minimizes, so ascend on delta * log pi (+ entropy) by negating.
        let mut grads = vec![0.0; self.actor.num_params()];
        accumulate_log_prob_grad(&self.actor, out, action, -delta, &mut grads)?;
        if self.entropy_coef != 0.0 {
            accumulate_entropy_grad(&self.actor, out, -self.entropy_coef, &mut grads)?;
        }
        self.actor.apply_gradients(&mut self.actor_opt, &grads)?;
        Ok(())
    }

    /// Move the actor along `delta * grad log pi(state, action)`.
    pub fn actor_update(&mut self, state: &AgentState, action: Action, delta: f64) -> Result<(), AgentError> {
        let out = self.policy(state)?;
        self.actor_step(&out, action, delta)
    }

    /// Move the critic along `delta * grad V(state)`.
    pub fn critic_update(&mut self, state: &AgentState, delta: f64) -> Result<(), AgentError> {
        if delta == 0.0 {
            return Ok(());
        }
        let caches = self.critic_caches(state)?;
        let grads = self.value_grad_from(&caches, -delta)?;
        self.critic.apply_gradients(&mut self.critic_opt, &grads)?;
        Ok(())
    }

    /// One training iteration on a transition: the TD error and the critic
    /// gradient are both computed with the pre-update critic, then the actor
    /// is updated, then the critic.
    ///
    /// `policy_out` must come from the current actor on `state` (the pass used
    /// to select `action`).
    pub fn iterate(
        &mut self,
        state: &AgentState,
        policy_out: &PolicyOutput,
        action: Action,
        reward: f64,
        next_state: &AgentState,
        terminal: bool,
    ) -> Result<IterationStats, AgentError> {
        let caches = self.critic_caches(state)?;
        let v_now = Self::value_from(&caches);
        let v_next = if terminal { 0.0 } else { self.value(next_state)? };
        let delta = td_advantage(reward, v_next, v_now, self.gamma, terminal);
        let critic_grads = if delta == 0.0 {
            None
        } else {
            Some(self.value_grad_from(&caches, -delta)?)
        };

        self.actor_step(policy_out, action, delta)?;
        if let Some(g) = critic_grads {
            self.critic.apply_gradients(&mut self.critic_opt, &g)?;
        }
        Ok(IterationStats { delta, v_now, v_next })
    }
}

/// Anything that picks actions in an episode.
pub trait Policy: Sync {
    fn act(&self, env: &ShrinkEnv<'_>, rng: &mut ChaCha8Rng) -> Result<Action, AgentError>;
}

/// Argmax of the averaged actor distribution.
#[derive(Debug, Clone, Copy)]
pub struct GreedyActor<'a>(pub &'a Mlp);

impl Policy for GreedyActor<'_> {
    fn act(&self, env: &ShrinkEnv<'_>, rng: &mut ChaCha8Rng) -> Result<Action, AgentError> {
        let out = policy(self.0, env.state())?;
        Ok(choose(&out.probs, Mode::Infer, rng))
    }
}

/// Uniform over all five actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandom;

impl Policy for UniformRandom {
    fn act(&self, _env: &ShrinkEnv<'_>, rng: &mut ChaCha8Rng) -> Result<Action, AgentError> {
        Ok(Action::ALL[rng.random_range(0..NUM_ACTIONS)])
    }
}

/// Looks at the ground truth: takes the direction with the largest next-step
/// IoU, stopping when no direction improves it.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleGreedy;

impl Policy for OracleGreedy {
    fn act(&self, env: &ShrinkEnv<'_>, _rng: &mut ChaCha8Rng) -> Result<Action, AgentError> {
        let gt = env.gt_box();
        let mut best = (Action::Stop, env.current_iou());
        for a in &Action::ALL[..4] {
            if let Some(p) = env.preview(*a) {
                let v = iou(&p, &gt);
                if v > best.1 {
                    best = (*a, v);
                }
            }
        }
        Ok(best.0)
    }
}
