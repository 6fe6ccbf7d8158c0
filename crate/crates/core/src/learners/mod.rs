//! Trainable decision-makers: the actor-critic used for Craft, a tabular
//! SMDP Q-learner, replay memory and exploration.

pub mod explore;
pub mod gradcheck;
pub mod mlp;
pub mod replay;
pub mod tabular;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smdp::SimRng;

pub use gradcheck::{finite_difference_check, random_instance, GradientReport};
pub use explore::{epsilon_greedy_masked, epsilon_greedy_select, sample_with_exploration, EpsilonSchedule};
pub use mlp::{check_gradient, MlpParams, MlpShape, TrainSample};
pub use replay::ReplayBuffer;
pub use tabular::{observation_key, smdp_q_update, QTable};

pub const HIDDEN_UNITS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    ActorCritic,
    Tabular,
}

impl LearnerKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "actor_critic" | "ac" => Some(LearnerKind::ActorCritic),
            "tabular" | "q" => Some(LearnerKind::Tabular),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    /// Expected task horizon `d`; teleported templates are discounted by γ^d.
    pub horizon: usize,
    pub epsilon: EpsilonSchedule,
    /// Environment decisions between gradient steps.
    pub learn_frequency: usize,
    /// Memory capacity in transitions.
    pub memory_size: usize,
    /// Fraction of the memory used per gradient step (1.0 = whole memory).
    pub batch_fraction: f64,
    pub optimizer: OptimizerKind,
    pub hidden: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self::for_horizon(100)
    }
}

impl LearnerConfig {
    /// Defaults for a task with expected horizon `d`: lr 0.001, γ 0.99,
    /// memory and learning frequency of 20·d.
    pub fn for_horizon(d: usize) -> Self {
        Self {
            learning_rate: 0.001,
            gamma: 0.99,
            horizon: d,
            epsilon: EpsilonSchedule::default(),
            learn_frequency: 20 * d,
            memory_size: 20 * d,
            batch_fraction: 1.0,
            optimizer: OptimizerKind::Adam,
            hidden: HIDDEN_UNITS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::validation("learning_rate", "must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::validation("gamma", "must lie in [0, 1)"));
        }
        let e = &self.epsilon;
        if !(e.floor > 0.0 && e.floor <= e.start && e.start <= 1.0) {
            return Err(Error::validation("epsilon", "need 0 < floor <= start <= 1"));
        }
        if e.half_life <= 0.0 {
            return Err(Error::validation("epsilon.half_life", "must be positive"));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::validation("batch_fraction", "must lie in (0, 1]"));
        }
        if self.learn_frequency == 0 || self.memory_size == 0 || self.hidden == 0 || self.horizon == 0 {
            return Err(Error::validation(
                "learn_frequency/memory_size/hidden/horizon",
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Partial overrides applied on top of [`LearnerConfig::for_horizon`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerOverrides {
    pub learning_rate: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<EpsilonSchedule>,
    pub learn_frequency: Option<usize>,
    pub memory_size: Option<usize>,
    pub batch_fraction: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub hidden: Option<usize>,
}

impl LearnerOverrides {
    pub fn resolve(&self, horizon: usize) -> LearnerConfig {
        let mut c = LearnerConfig::for_horizon(horizon);
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.learn_frequency {
            c.learn_frequency = v;
        }
        if let Some(v) = self.memory_size {
            c.memory_size = v;
        }
        if let Some(v) = self.batch_fraction {
            c.batch_fraction = v;
        }
        if let Some(v) = self.optimizer {
            c.optimizer = v;
        }
        if let Some(v) = self.hidden {
            c.hidden = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; params],
                v: vec![0.0; params],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = B1 * m[i] + (1.0 - B1) * g;
                    v[i] = B2 * v[i] + (1.0 - B2) * g * g;
                    if m[i] != 0.0 {
                        params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// One gradient step on `−mean(log π·Â) + mean((G − V)²)`, with Â = G − V
/// computed before the step.
pub fn actor_critic_update<B: std::borrow::Borrow<TrainSample>>(
    params: &mut MlpParams,
    optimizer: &mut Optimizer,
    batch: &[B],
    learning_rate: f64,
) -> Result<()> {
    assert!(!batch.is_empty(), "empty training batch");
    let advantages = params.advantages(batch)?;
    let mut grad = params.actor_gradient(batch, &advantages)?;
    let critic = params.critic_gradient(batch)?;
    for (g, c) in grad.iter_mut().zip(critic) {
        *g += c;
    }
    check_gradient(&grad)?;
    optimizer.step(params.flat_mut(), &grad, learning_rate);
    Ok(())
}

/// A trained (or training) decision function over an action set.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    ActorCritic(MlpParams),
    Tabular { q: QTable, outputs: usize },
}

impl Policy {
    pub fn outputs(&self) -> usize {
        match self {
            Policy::ActorCritic(p) => p.shape().outputs,
            Policy::Tabular { outputs, .. } => *outputs,
        }
    }

    /// Chooses an available entry. The actor-critic samples from its softmax
    /// (mixed with ε-uniform); the tabular policy is ε-greedy on Q.
    pub fn act(&self, obs: &[f64], mask: &[bool], epsilon: f64, rng: &mut SimRng) -> Result<usize> {
        if mask.len() != self.outputs() {
            return Err(Error::ShapeMismatch {
                expected: self.outputs(),
                got: mask.len(),
            });
        }
        if !mask.contains(&true) {
            return Err(Error::NoAvailableAction);
        }
        match self {
            Policy::ActorCritic(p) => {
                let f = p.forward(obs, Some(mask))?;
                Ok(sample_with_exploration(&f.probs, mask, epsilon, rng))
            }
            Policy::Tabular { q, outputs } => {
                let key = observation_key(obs);
                let values: Vec<f64> = (0..*outputs).map(|o| q.get(key, o)).collect();
                Ok(epsilon_greedy_masked(&values, mask, epsilon, rng))
            }
        }
    }

    /// Most probable available entry (highest Q for the tabular policy),
    /// ties to the lowest index.
    pub fn act_greedy(&self, obs: &[f64], mask: &[bool]) -> Result<usize> {
        if mask.len() != self.outputs() {
            return Err(Error::ShapeMismatch {
                expected: self.outputs(),
                got: mask.len(),
            });
        }
        let scores: Vec<f64> = match self {
            Policy::ActorCritic(p) => p.forward(obs, Some(mask))?.probs,
            Policy::Tabular { q, outputs } => {
                let key = observation_key(obs);
                (0..*outputs).map(|o| q.get(key, o)).collect()
            }
        };
        let mut best = None;
        for (i, &v) in scores.iter().enumerate() {
            if mask[i] && best.is_none_or(|b: usize| v > scores[b]) {
                best = Some(i);
            }
        }
        best.ok_or(Error::NoAvailableAction)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        match self {
            Policy::ActorCritic(p) => p.save(w),
            Policy::Tabular { q, outputs } => {
                writeln!(w, "tabular outputs={} count={}", outputs, q.len())?;
                for ((s, o), v) in q.entries() {
                    writeln!(w, "{s} {o} {v}")?;
                }
                Ok(())
            }
        }
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header".into(),
        })??;
        if header.starts_with("mlp") {
            return Ok(Policy::ActorCritic(MlpParams::load_body(&header, lines)?));
        }
        let fields = mlp::parse_header(&header, "tabular")?;
        let outputs = fields
            .iter()
            .find(|(k, _)| k == "outputs")
            .map(|(_, v)| *v as usize)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "header lacks `outputs`".into(),
            })?;
        let mut q = QTable::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: i + 2,
                message: format!("expected `state choice value`, got `{line}`"),
            };
            let mut parts = line.split_whitespace();
            let s: u64 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let o: usize = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let v: f64 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            q.set(s, o, v);
        }
        Ok(Policy::Tabular { q, outputs })
    }
}

/// One decision recorded while training: `(s, choice, r_c, k, s', done)`
/// plus the return-to-go target filled in when the segment closes.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub sample: TrainSample,
    pub reward: f64,
    /// Discount exponent: 1 for primitives, the true duration for executed
    /// options, the horizon `d` for teleported templates.
    pub discount_exponent: usize,
    pub next_obs: Vec<f64>,
    pub next_mask: Vec<bool>,
    pub done: bool,
}

impl Transition {
    pub fn new(
        obs: Vec<f64>,
        mask: Vec<bool>,
        choice: usize,
        reward: f64,
        discount_exponent: usize,
        next_obs: Vec<f64>,
        next_mask: Vec<bool>,
        done: bool,
    ) -> Self {
        Self {
            sample: TrainSample {
                obs,
                mask,
                action: choice,
                target: 0.0,
            },
            reward,
            discount_exponent,
            next_obs,
            next_mask,
            done,
        }
    }
}

/// Monte-Carlo return-to-go with per-record discounts `γ^{k_t}`:
/// `G_t = r_t + γ^{k_t} G_{t+1}`, `G_T = 0`.
pub fn returns_to_go(rewards_and_exponents: &[(f64, usize)], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards_and_exponents.len()];
    let mut g = 0.0;
    for (i, &(r, k)) in rewards_and_exponents.iter().enumerate().rev() {
        g = r + gamma.powi(k as i32) * g;
        out[i] = g;
    }
    out
}

/// A policy under training together with its optimiser and memory.
#[derive(Debug, Clone)]
pub struct Trainer {
    policy: Policy,
    optimizer: Optimizer,
    memory: ReplayBuffer<Transition>,
    cfg: LearnerConfig,
    since_update: usize,
    updates: usize,
    episode: usize,
}

impl Trainer {
    pub fn new(kind: LearnerKind, input: usize, outputs: usize, cfg: LearnerConfig, seed: u64) -> Self {
        let policy = match kind {
            LearnerKind::ActorCritic => Policy::ActorCritic(MlpParams::new(
                MlpShape {
                    input,
                    hidden: cfg.hidden,
                    outputs,
                },
                seed,
            )),
            LearnerKind::Tabular => Policy::Tabular {
                q: QTable::new(),
                outputs,
            },
        };
        let params = match &policy {
            Policy::ActorCritic(p) => p.flat().len(),
            Policy::Tabular { .. } => 0,
        };
        Self {
            policy,
            optimizer: Optimizer::new(cfg.optimizer, params),
            memory: ReplayBuffer::new(cfg.memory_size),
            cfg,
            since_update: 0,
            updates: 0,
            episode: 0,
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Episode index driving the exploration schedule.
    pub fn set_episode(&mut self, episode: usize) {
        self.episode = episode;
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon.at(self.episode)
    }

    pub fn select(&self, obs: &[f64], mask: &[bool], rng: &mut SimRng) -> Result<usize> {
        self.policy.act(obs, mask, self.epsilon(), rng)
    }

    /// Feeds one finished segment. The actor-critic stores it and takes a
    /// gradient step whenever `learn_frequency` decisions have accumulated;
    /// the tabular learner applies SMDP Q-updates immediately.
    /// Returns whether parameters changed.
    pub fn train_segment(&mut self, mut segment: Vec<Transition>, rng: &mut SimRng) -> Result<bool> {
        if segment.is_empty() {
            return Ok(false);
        }
        let gamma = self.cfg.gamma;
        match &mut self.policy {
            Policy::Tabular { q, .. } => {
                for t in &segment {
                    let candidates: Vec<usize> = if t.done {
                        Vec::new()
                    } else {
                        (0..t.next_mask.len()).filter(|&i| t.next_mask[i]).collect()
                    };
                    smdp_q_update(
                        q,
                        observation_key(&t.sample.obs),
                        t.sample.action,
                        t.reward,
                        t.discount_exponent,
                        observation_key(&t.next_obs),
                        &candidates,
                        self.cfg.learning_rate,
                        gamma,
                    );
                }
                self.updates += 1;
                Ok(true)
            }
            Policy::ActorCritic(params) => {
                let pairs: Vec<(f64, usize)> = segment.iter().map(|t| (t.reward, t.discount_exponent)).collect();
                for (t, g) in segment.iter_mut().zip(returns_to_go(&pairs, gamma)) {
                    t.sample.target = g;
                }
                self.since_update += segment.len();
                for t in segment {
                    self.memory.push(t);
                }
                if self.since_update < self.cfg.learn_frequency {
                    return Ok(false);
                }
                self.since_update = 0;
                let batch_size = ((self.memory.len() as f64) * self.cfg.batch_fraction).ceil() as usize;
                let batch: Vec<&TrainSample> = self
                    .memory
                    .sample(batch_size.max(1), rng)?
                    .into_iter()
                    .map(|t| &t.sample)
                    .collect();
                actor_critic_update(params, &mut self.optimizer, &batch, self.cfg.learning_rate)?;
                self.updates += 1;
                Ok(true)
            }
        }
    }
}
