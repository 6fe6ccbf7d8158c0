//! Top-down learning of option implementations from option templates.
//!
//! Levels are trained from the top. While a template is being learned, every
//! episode starts from the top-level option: options that already have an
//! implementation are executed through an explicit stack, options without
//! one are teleported, and control passes to the learner whenever the
//! target template is chosen.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::learners::{LearnerConfig, LearnerKind, LearnerOverrides, Policy, Trainer, Transition};
use crate::smdp::{
    check_termination, derive_seed, seeded_rng, teleport, ActionEntry, Environment, OptionImpl, OptionTemplate,
    SimRng, StatePredicate,
};

/// The set D of learned implementations, in insertion order. The first
/// entry is the top-level option.
pub struct ImplementationSet<S> {
    impls: Vec<OptionImpl<S>>,
    index: HashMap<String, usize>,
}

impl<S> Default for ImplementationSet<S> {
    fn default() -> Self {
        Self {
            impls: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<S> Clone for ImplementationSet<S> {
    fn clone(&self) -> Self {
        Self {
            impls: self.impls.clone(),
            index: self.index.clone(),
        }
    }
}

impl<S> fmt::Debug for ImplementationSet<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.ids()).finish()
    }
}

impl<S> ImplementationSet<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, imp: OptionImpl<S>) -> Result<()> {
        if self.index.contains_key(imp.id()) {
            return Err(Error::validation("implementation", format!("`{}` is already in D", imp.id())));
        }
        self.index.insert(imp.id().to_string(), self.impls.len());
        self.impls.push(imp);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&OptionImpl<S>> {
        self.index.get(id).map(|&i| &self.impls[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn at(&self, i: usize) -> &OptionImpl<S> {
        &self.impls[i]
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn top_level(&self) -> Option<&OptionImpl<S>> {
        self.impls.first()
    }

    pub fn len(&self) -> usize {
        self.impls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impls.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &OptionImpl<S>> {
        self.impls.iter()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.impls.iter().map(OptionImpl::id).collect()
    }

    /// Copy of the set without `id`.
    pub fn without(&self, id: &str) -> Self {
        let mut out = Self::new();
        for imp in self.impls.iter().filter(|i| i.id() != id) {
            out.insert(imp.clone()).expect("ids are unique");
        }
        out
    }
}

/// Reward used while training one template.
pub struct RewardSpec<S> {
    /// F_o; also the success criterion of a training segment.
    pub predicate: StatePredicate<S>,
    /// Maximum segment length k*.
    pub cap: usize,
    /// When set, rewards come from the base environment instead of F_o.
    pub environment_reward: bool,
}

impl<S> Clone for RewardSpec<S> {
    fn clone(&self) -> Self {
        Self {
            predicate: self.predicate.clone(),
            cap: self.cap,
            environment_reward: self.environment_reward,
        }
    }
}

impl<S> fmt::Debug for RewardSpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardSpec")
            .field("cap", &self.cap)
            .field("environment_reward", &self.environment_reward)
            .finish_non_exhaustive()
    }
}

impl<S> RewardSpec<S> {
    pub fn satisfied(&self, state: &S) -> bool {
        (self.predicate)(state)
    }

    pub fn reward<E: Environment<State = S>>(&self, env: &E, state: &S, next: &S) -> f64 {
        if self.environment_reward {
            env.reward(state, next)
        } else if self.satisfied(next) {
            1.0
        } else {
            0.0
        }
    }
}

/// Level 1 keeps the environment's reward and step limit; deeper levels are
/// rewarded by the template's own predicate and capped at its timeout.
pub fn build_reward<E: Environment>(template: &OptionTemplate<E::State>, level: usize, env: &E) -> RewardSpec<E::State> {
    if level <= 1 {
        RewardSpec {
            predicate: template.termination.predicate.clone(),
            cap: env.max_episode_steps(),
            environment_reward: true,
        }
    } else {
        RewardSpec {
            predicate: template.termination.predicate.clone(),
            cap: template.timeout(),
            environment_reward: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchDecision {
    TrainHere,
    Teleport,
    /// Execute the implementation at this index of D.
    Descend(usize),
    Primitive(usize),
}

/// Classifies a chosen entry. Pure in (entry, D, target).
pub fn dispatch<S>(
    entry: &ActionEntry<S>,
    d: &ImplementationSet<S>,
    target: Option<&OptionTemplate<S>>,
) -> DispatchDecision {
    match entry {
        ActionEntry::Primitive(a) => DispatchDecision::Primitive(*a),
        ActionEntry::Template(t) => {
            if target.is_some_and(|x| x.id == t.id) {
                DispatchDecision::TrainHere
            } else {
                match d.position(&t.id) {
                    Some(i) => DispatchDecision::Descend(i),
                    None => DispatchDecision::Teleport,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The episode's first frame was pushed.
    Root,
    TrainHere,
    Teleport,
    Descend,
    Primitive,
    /// A frame left the stack because its termination condition fired.
    Pop,
    /// A frame was discarded because the episode ended under it.
    Unwind,
}

/// One line of the execution trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub episode: usize,
    pub level: usize,
    /// Id of the frame that made the decision (or was popped).
    pub frame: String,
    /// Chosen entry; empty for pops.
    pub entry: String,
    pub kind: EventKind,
    pub state_hash: u64,
    /// Whether `entry` had an implementation in D when the event happened.
    pub in_d: bool,
    /// Descend into an implementation trained on the trainee's own level.
    pub sibling: bool,
    /// Stack depth after the event.
    pub depth: usize,
    /// For pops: primitive steps the frame ran and whether its goal held.
    pub elapsed: usize,
    pub goal: bool,
}

pub trait TraceSink {
    fn record(&mut self, event: TraceEvent);

    fn enabled(&self) -> bool {
        true
    }
}

impl TraceSink for Vec<TraceEvent> {
    fn record(&mut self, event: TraceEvent) {
        self.push(event);
    }
}

/// Discards every event.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoTrace;

impl TraceSink for NoTrace {
    fn record(&mut self, _event: TraceEvent) {}

    fn enabled(&self) -> bool {
        false
    }
}

pub fn state_hash<S: Hash>(state: &S) -> u64 {
    let mut h = DefaultHasher::new();
    state.hash(&mut h);
    h.finish()
}

fn entry_label<S>(entry: &ActionEntry<S>) -> String {
    match entry {
        ActionEntry::Primitive(a) => format!("primitive:{a}"),
        ActionEntry::Template(t) => t.id.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    /// An implementation from D, by index.
    Implemented(usize),
    /// The template under training.
    Trainee,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveFrame<S> {
    pub kind: FrameKind,
    pub start_state: S,
    start_clock: usize,
}

impl<S> ActiveFrame<S> {
    pub fn steps_elapsed(&self, clock: usize) -> usize {
        clock - self.start_clock
    }
}

/// Stack of active options; only the top frame chooses.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionStack<S> {
    frames: Vec<ActiveFrame<S>>,
    pushes: usize,
    pops: usize,
}

impl<S> Default for ExecutionStack<S> {
    fn default() -> Self {
        Self {
            frames: Vec::new(),
            pushes: 0,
            pops: 0,
        }
    }
}

impl<S> ExecutionStack<S> {
    pub fn push(&mut self, kind: FrameKind, start_state: S, clock: usize) {
        self.pushes += 1;
        self.frames.push(ActiveFrame {
            kind,
            start_state,
            start_clock: clock,
        });
    }

    pub fn pop(&mut self) -> Option<ActiveFrame<S>> {
        let f = self.frames.pop();
        if f.is_some() {
            self.pops += 1;
        }
        f
    }

    pub fn top(&self) -> Option<&ActiveFrame<S>> {
        self.frames.last()
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn contains_trainee(&self) -> bool {
        self.frames.iter().any(|f| f.kind == FrameKind::Trainee)
    }

    pub fn pushes(&self) -> usize {
        self.pushes
    }

    pub fn pops(&self) -> usize {
        self.pops
    }
}

/// What is being learned and from which action set.
pub struct Stage<S> {
    /// Task name; also names the stage's random streams.
    pub name: String,
    pub level: usize,
    pub template: OptionTemplate<S>,
    pub actions: Vec<ActionEntry<S>>,
    /// Expected horizon d, the discount exponent of a teleport.
    pub horizon: usize,
}

impl<S> Clone for Stage<S> {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            level: self.level,
            template: self.template.clone(),
            actions: self.actions.clone(),
            horizon: self.horizon,
        }
    }
}

impl<S> fmt::Debug for Stage<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stage")
            .field("name", &self.name)
            .field("level", &self.level)
            .field("template", &self.template.id)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

/// A base environment and its stages in learning order.
pub struct Curriculum<E: Environment> {
    pub env: E,
    pub stages: Vec<Stage<E::State>>,
}

/// How learned implementations choose when executed inside the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Greedy,
    #[default]
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learner: LearnerKind,
    pub overrides: LearnerOverrides,
    pub delta: f64,
    pub max_episodes: usize,
    pub window: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learner: LearnerKind::ActorCritic,
            overrides: LearnerOverrides::default(),
            delta: 0.2,
            max_episodes: 100_000,
            window: 100,
            execution: Execution::Sample,
        }
    }
}

impl TrainConfig {
    pub fn learner_config(&self, horizon: usize) -> LearnerConfig {
        self.overrides.resolve(horizon)
    }

    pub fn threshold(&self) -> f64 {
        1.0 - self.delta
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation("delta", "must lie in (0, 1)"));
        }
        if self.max_episodes == 0 {
            return Err(Error::validation("max_episodes", "must be positive"));
        }
        if self.window == 0 {
            return Err(Error::validation("window", "must be positive"));
        }
        self.learner_config(1).validate()
    }
}

/// Mean of the last `window` values pushed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrailingAverage {
    window: usize,
    values: VecDeque<f64>,
    sum: f64,
}

impl TrailingAverage {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            values: VecDeque::with_capacity(window),
            sum: 0.0,
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.window {
            self.sum -= self.values.pop_front().unwrap_or(0.0);
        }
        self.values.push_back(v);
        self.sum += v;
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.window
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            // Recomputed to avoid drift from the running sum.
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    pub fn reached(&self, threshold: f64) -> bool {
        self.is_full() && self.mean() >= threshold
    }
}

/// Per-episode training statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStat {
    /// 1-based episode index within the stage.
    pub episode: usize,
    /// Whether the target was reached by execution and trained on.
    pub invoked: bool,
    /// Mean segment success; 0 when not invoked.
    pub reward: f64,
    /// Primitive steps taken in the base environment.
    pub steps: usize,
    pub segments: usize,
    pub teleports: usize,
    /// Trailing average after this episode.
    pub average: f64,
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub policy: Policy,
    pub episodes: usize,
    pub converged: bool,
    pub final_average: f64,
    pub stats: Vec<EpisodeStat>,
}

struct Pending<S> {
    obs: Vec<f64>,
    mask: Vec<bool>,
    choice: usize,
    state: S,
    clock: usize,
    teleport: bool,
}

struct Trainee<'a, S> {
    trainer: &'a mut Trainer,
    stage: &'a Stage<S>,
    spec: &'a RewardSpec<S>,
    segment: Vec<Transition>,
    pending: Option<Pending<S>>,
    /// Success flag of every closed segment in this episode.
    outcomes: Vec<bool>,
    /// Learner updates draw from their own stream so that episode maps do
    /// not depend on how often the learner was updated.
    update_rng: &'a mut SimRng,
}

/// Runs one episode's execution stack.
struct Machine<'a, 'b, E: Environment> {
    env: &'a E,
    d: &'a ImplementationSet<E::State>,
    trainee: Option<Trainee<'a, E::State>>,
    trace: &'b mut dyn TraceSink,
    episode: usize,
    level: usize,
    stack: ExecutionStack<E::State>,
    clock: usize,
    steps: usize,
    teleports: usize,
    env_return: f64,
    max_decisions: usize,
    forbid_teleport: bool,
    execution: Execution,
}

impl<'a, 'b, E> Machine<'a, 'b, E>
where
    E: Environment,
    E::State: Hash,
{
    fn new(
        env: &'a E,
        d: &'a ImplementationSet<E::State>,
        trainee: Option<Trainee<'a, E::State>>,
        trace: &'b mut dyn TraceSink,
        episode: usize,
        level: usize,
    ) -> Self {
        Self {
            env,
            d,
            trainee,
            trace,
            episode,
            level,
            stack: ExecutionStack::default(),
            clock: 0,
            steps: 0,
            teleports: 0,
            env_return: 0.0,
            max_decisions: 4 * env.max_episode_steps() + 100,
            forbid_teleport: false,
            execution: Execution::Sample,
        }
    }

    fn frame_id(&self, kind: FrameKind) -> String {
        match kind {
            FrameKind::Implemented(i) => self.d.at(i).id().to_string(),
            FrameKind::Trainee => self.trainee.as_ref().map_or_else(String::new, |t| t.stage.template.id.clone()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(&mut self, frame: FrameKind, entry: String, kind: EventKind, state: &E::State, in_d: bool, sibling: bool, elapsed: usize, goal: bool) {
        if !self.trace.enabled() {
            return;
        }
        let ev = TraceEvent {
            episode: self.episode,
            level: self.level,
            frame: self.frame_id(frame),
            entry,
            kind,
            state_hash: state_hash(state),
            in_d,
            sibling,
            depth: self.stack.depth(),
            elapsed,
            goal,
        };
        self.trace.record(ev);
    }

    fn push(&mut self, kind: FrameKind, state: &E::State, event: EventKind, entry: String, in_d: bool, sibling: bool) {
        let parent = self.stack.top().map_or(kind, |f| f.kind);
        self.stack.push(kind, state.clone(), self.clock);
        self.emit(parent, entry, event, state, in_d, sibling, 0, false);
    }

    fn frame_done(&self, frame: &ActiveFrame<E::State>, state: &E::State) -> bool {
        let elapsed = frame.steps_elapsed(self.clock);
        match frame.kind {
            FrameKind::Implemented(i) => check_termination(&self.d.at(i).template.termination, state, elapsed + 1),
            FrameKind::Trainee => {
                let t = self.trainee.as_ref().expect("trainee frame without trainee");
                t.spec.satisfied(state) || elapsed >= t.spec.cap
            }
        }
    }

    fn frame_goal(&self, kind: FrameKind, state: &E::State) -> bool {
        match kind {
            FrameKind::Implemented(i) => self.d.at(i).template.goal_reached(state),
            FrameKind::Trainee => self.trainee.as_ref().is_some_and(|t| t.spec.satisfied(state)),
        }
    }

    /// Turns the trainee's outstanding decision into a transition ending at `state`.
    fn finalize_pending(&mut self, state: &E::State) {
        let env = self.env;
        let clock = self.clock;
        let Some(t) = self.trainee.as_mut() else { return };
        let Some(p) = t.pending.take() else { return };
        let exponent = if p.teleport {
            t.stage.horizon
        } else {
            (clock - p.clock).max(1)
        };
        let reward = t.spec.reward(env, &p.state, state);
        let next_obs = env.observe(state);
        let next_mask: Vec<bool> = t.stage.actions.iter().map(|a| a.is_available(state)).collect();
        t.segment.push(Transition::new(p.obs, p.mask, p.choice, reward, exponent, next_obs, next_mask, false));
    }

    fn close_segment(&mut self, state: &E::State) -> Result<()> {
        self.finalize_pending(state);
        let Some(t) = self.trainee.as_mut() else { return Ok(()) };
        let mut segment = std::mem::take(&mut t.segment);
        if let Some(last) = segment.last_mut() {
            last.done = true;
        }
        t.outcomes.push(t.spec.satisfied(state));
        t.trainer.train_segment(segment, t.update_rng)?;
        Ok(())
    }

    fn pop(&mut self, state: &E::State, kind: EventKind) -> Result<()> {
        let frame = self.stack.pop().expect("pop on empty stack");
        let elapsed = frame.steps_elapsed(self.clock);
        if frame.kind == FrameKind::Trainee {
            self.close_segment(state)?;
        }
        let goal = self.frame_goal(frame.kind, state);
        self.emit(frame.kind, String::new(), kind, state, false, false, elapsed, goal);
        Ok(())
    }

    /// Executes decisions until the stack empties or the base environment ends.
    fn drive(&mut self, mut state: E::State, rng: &mut SimRng) -> Result<E::State> {
        let mut decisions = 0usize;
        loop {
            if self.env.is_terminal(&state) || decisions >= self.max_decisions {
                break;
            }
            if self.stack.top().is_some_and(|f| f.kind == FrameKind::Trainee) {
                self.finalize_pending(&state);
            }
            while let Some(top) = self.stack.top() {
                if self.frame_done(top, &state) {
                    self.pop(&state, EventKind::Pop)?;
                    if self.stack.top().is_some_and(|f| f.kind == FrameKind::Trainee) {
                        self.finalize_pending(&state);
                    }
                } else {
                    break;
                }
            }
            let Some(top) = self.stack.top() else { break };
            let kind = top.kind;
            decisions += 1;

            let obs = self.env.observe(&state);
            let entry = match kind {
                FrameKind::Implemented(i) => {
                    let imp = self.d.at(i);
                    let mask: Vec<bool> = imp.actions.iter().map(|a| a.is_available(&state)).collect();
                    let c = match self.execution {
                        Execution::Greedy => imp.policy.act_greedy(&obs, &mask)?,
                        Execution::Sample => imp.policy.act(&obs, &mask, 0.0, rng)?,
                    };
                    imp.actions[c].clone()
                }
                FrameKind::Trainee => {
                    let t = self.trainee.as_mut().expect("trainee frame without trainee");
                    let mask: Vec<bool> = t.stage.actions.iter().map(|a| a.is_available(&state)).collect();
                    let c = t.trainer.select(&obs, &mask, rng)?;
                    let teleport = matches!(
                        dispatch(&t.stage.actions[c], self.d, Some(&t.stage.template)),
                        DispatchDecision::Teleport | DispatchDecision::TrainHere
                    );
                    t.pending = Some(Pending {
                        obs,
                        mask,
                        choice: c,
                        state: state.clone(),
                        clock: self.clock,
                        teleport,
                    });
                    t.stage.actions[c].clone()
                }
            };
            let target = self.trainee.as_ref().map(|t| &t.stage.template);
            let mut decision = dispatch(&entry, self.d, target);
            // The target can only be trained from one frame at a time; a
            // nested request for it is served by its terminal sampler.
            if decision == DispatchDecision::TrainHere && self.stack.contains_trainee() {
                decision = DispatchDecision::Teleport;
            }
            let label = entry_label(&entry);
            match decision {
                DispatchDecision::Primitive(a) => {
                    let next = self.env.transition(&state, a, rng);
                    self.env_return += self.env.reward(&state, &next);
                    self.clock += 1;
                    self.steps += 1;
                    self.emit(kind, label, EventKind::Primitive, &state, false, false, 0, false);
                    state = next;
                }
                DispatchDecision::Teleport => {
                    let t = entry.template().expect("teleport of a primitive");
                    if self.forbid_teleport {
                        return Err(Error::UnimplementedTemplate(t.id.clone()));
                    }
                    let next = teleport(t, &state, rng)?;
                    self.env_return += self.env.reward(&state, &next);
                    self.clock += 1;
                    self.teleports += 1;
                    self.emit(kind, label, EventKind::Teleport, &state, false, false, 0, false);
                    state = next;
                }
                DispatchDecision::Descend(i) => {
                    let sibling = self
                        .trainee
                        .as_ref()
                        .is_some_and(|t| self.d.at(i).template.level == t.stage.template.level);
                    self.push(FrameKind::Implemented(i), &state, EventKind::Descend, label, true, sibling);
                }
                DispatchDecision::TrainHere => {
                    self.push(FrameKind::Trainee, &state, EventKind::TrainHere, label, false, false);
                }
            }
        }
        while !self.stack.is_empty() {
            if self.stack.top().is_some_and(|f| f.kind == FrameKind::Trainee) {
                self.finalize_pending(&state);
            }
            self.pop(&state, EventKind::Unwind)?;
        }
        Ok(state)
    }
}

/// Result of one [`step_and_train`] call.
#[derive(Debug, Clone)]
pub struct Segment<S> {
    pub state: S,
    pub success: bool,
    /// Primitive steps plus teleports consumed.
    pub length: usize,
    pub steps: usize,
}

/// Hands control to the learner at `state`: runs the trainee until its
/// predicate holds or k* steps pass, then trains on the collected segment.
pub fn step_and_train<E>(
    env: &E,
    stage: &Stage<E::State>,
    spec: &RewardSpec<E::State>,
    trainer: &mut Trainer,
    d: &ImplementationSet<E::State>,
    state: E::State,
    rng: &mut SimRng,
    update_rng: &mut SimRng,
) -> Result<Segment<E::State>>
where
    E: Environment,
    E::State: Hash,
{
    if !stage.template.is_applicable(&state) {
        return Err(Error::InitiationViolation(stage.template.id.clone()));
    }
    let trainee = Trainee {
        trainer,
        stage,
        spec,
        segment: Vec::new(),
        pending: None,
        outcomes: Vec::new(),
        update_rng,
    };
    let mut trace = NoTrace;
    let mut m = Machine::new(env, d, Some(trainee), &mut trace, 0, stage.level);
    m.stack.push(FrameKind::Trainee, state.clone(), 0);
    let end = m.drive(state, rng)?;
    let success = m.trainee.as_ref().is_some_and(|t| t.outcomes.last() == Some(&true));
    Ok(Segment {
        state: end,
        success,
        length: m.clock,
        steps: m.steps,
    })
}

/// Observer hooks for long-running training.
pub struct Hooks<'a> {
    pub trace: &'a mut dyn TraceSink,
    /// Called after each episode with the stage name and level.
    pub on_episode: &'a mut dyn FnMut(&str, usize, &EpisodeStat),
}

impl Hooks<'_> {
    pub fn silent<R>(f: impl FnOnce(&mut Hooks<'_>) -> R) -> R {
        let mut trace = NoTrace;
        let mut cb = |_: &str, _: usize, _: &EpisodeStat| {};
        let mut hooks = Hooks {
            trace: &mut trace,
            on_episode: &mut cb,
        };
        f(&mut hooks)
    }
}

/// Where each training episode starts executing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EpisodeRoot {
    /// The top-level option of D, or the trainee while D is empty.
    #[default]
    TopLevel,
    /// The trainee itself, with every entry of D executed for real.
    Trainee,
}

/// Trains an implementation of `stage.template`. Episodes start from the
/// base environment's initial distribution and execute the top-level option
/// of `d` (or the trainee itself when `d` is empty) until the target is
/// called. Stops once the trailing average of per-episode success reaches
/// `1 − δ` or after `max_episodes`. Episodes in which the target is never
/// called are counted but do not enter the average.
pub fn learn_option_policy<E>(
    env: &E,
    stage: &Stage<E::State>,
    spec: &RewardSpec<E::State>,
    d: &ImplementationSet<E::State>,
    cfg: &TrainConfig,
    seed: u64,
    root: EpisodeRoot,
    hooks: &mut Hooks<'_>,
) -> Result<LearnOutcome>
where
    E: Environment,
    E::State: Hash,
{
    cfg.validate()?;
    let learner_cfg = cfg.learner_config(stage.horizon);
    learner_cfg.validate()?;
    let input = env.state_space().dimension;
    let mut trainer = Trainer::new(
        cfg.learner,
        input,
        stage.actions.len(),
        learner_cfg,
        derive_seed(seed, "init", 0),
    );
    let mut update_rng = seeded_rng(derive_seed(seed, "updates", 0));
    let mut window = TrailingAverage::new(cfg.window);
    let mut stats = Vec::new();
    let mut converged = false;

    for episode in 1..=cfg.max_episodes {
        let started = Instant::now();
        let mut rng = seeded_rng(derive_seed(seed, "episode", episode as u64));
        trainer.set_episode(episode - 1);
        let state = env.initial_state(&mut rng);
        let trainee = Trainee {
            trainer: &mut trainer,
            stage,
            spec,
            segment: Vec::new(),
            pending: None,
            outcomes: Vec::new(),
            update_rng: &mut update_rng,
        };
        let mut m = Machine::new(env, d, Some(trainee), &mut *hooks.trace, episode, stage.level);
        m.execution = cfg.execution;
        match d.top_level().filter(|_| root == EpisodeRoot::TopLevel) {
            Some(top) => {
                let label = top.id().to_string();
                m.push(FrameKind::Implemented(0), &state, EventKind::Root, label, true, false);
            }
            None => {
                if !stage.template.is_applicable(&state) {
                    return Err(Error::InitiationViolation(stage.template.id.clone()));
                }
                let label = stage.template.id.clone();
                m.push(FrameKind::Trainee, &state, EventKind::Root, label, false, false);
            }
        }
        m.drive(state, &mut rng)?;
        let outcomes = m.trainee.take().map(|t| t.outcomes).unwrap_or_default();
        let (steps, teleports) = (m.steps, m.teleports);
        drop(m);

        let invoked = !outcomes.is_empty();
        let reward = if invoked {
            outcomes.iter().filter(|&&o| o).count() as f64 / outcomes.len() as f64
        } else {
            0.0
        };
        if invoked {
            window.push(reward);
        }
        let stat = EpisodeStat {
            episode,
            invoked,
            reward,
            steps,
            segments: outcomes.len(),
            teleports,
            average: window.mean(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        (hooks.on_episode)(&stage.name, stage.level, &stat);
        stats.push(stat);
        if window.reached(cfg.threshold()) {
            converged = true;
            break;
        }
    }
    Ok(LearnOutcome {
        policy: trainer.into_policy(),
        episodes: stats.len(),
        converged,
        final_average: window.mean(),
        stats,
    })
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: String,
    pub template: String,
    pub level: usize,
    pub episodes: usize,
    pub converged: bool,
    pub final_average: f64,
    pub stats: Vec<EpisodeStat>,
}

pub struct PipelineRun<S> {
    pub implementations: ImplementationSet<S>,
    pub reports: Vec<StageReport>,
}

/// Trains every stage in order, adding each finished implementation to D
/// before the next stage starts.
pub fn run_pipeline<E>(
    curriculum: &Curriculum<E>,
    cfg: &TrainConfig,
    seed: u64,
    hooks: &mut Hooks<'_>,
) -> Result<PipelineRun<E::State>>
where
    E: Environment,
    E::State: Hash,
{
    if curriculum.stages.windows(2).any(|w| w[0].level > w[1].level) {
        return Err(Error::validation("curriculum", "stages must be ordered by level"));
    }
    let mut d = ImplementationSet::new();
    let mut reports = Vec::new();
    for stage in &curriculum.stages {
        let spec = build_reward(&stage.template, stage.level, &curriculum.env);
        let stage_seed = derive_seed(seed, &stage.name, 0);
        let out = learn_option_policy(&curriculum.env, stage, &spec, &d, cfg, stage_seed, EpisodeRoot::TopLevel, hooks)?;
        reports.push(StageReport {
            name: stage.name.clone(),
            template: stage.template.id.clone(),
            level: stage.level,
            episodes: out.episodes,
            converged: out.converged,
            final_average: out.final_average,
            stats: out.stats,
        });
        if !out.converged {
            return Err(Error::PipelineAborted {
                template: stage.template.id.clone(),
                source: Box::new(Error::DidNotConverge {
                    template: stage.template.id.clone(),
                    episodes: out.episodes,
                    final_average: out.final_average,
                }),
            });
        }
        d.insert(OptionImpl::new(stage.template.clone(), stage.actions.clone(), out.policy)?)?;
    }
    Ok(PipelineRun {
        implementations: d,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub average_reward: f64,
    pub episodes: usize,
    pub teleports: usize,
}

/// Runs the complete hierarchy from the top-level option with teleporting
/// disabled. Needing a teleport means D is incomplete.
pub fn evaluate_flattened<E>(
    d: &ImplementationSet<E::State>,
    env: &E,
    n_episodes: usize,
    rng: &mut SimRng,
    trace: &mut dyn TraceSink,
) -> Result<Evaluation>
where
    E: Environment,
    E::State: Hash,
{
    if n_episodes == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let top = d
        .top_level()
        .ok_or_else(|| Error::UnimplementedTemplate("top-level option".into()))?;
    let label = top.id().to_string();
    let mut total = 0.0;
    let mut teleports = 0;
    for episode in 1..=n_episodes {
        let state = env.initial_state(rng);
        let mut m = Machine::new(env, d, None, &mut *trace, episode, 0);
        m.forbid_teleport = true;
        m.push(FrameKind::Implemented(0), &state, EventKind::Root, label.clone(), true, false);
        m.drive(state, rng)?;
        total += m.env_return;
        teleports += m.teleports;
    }
    Ok(Evaluation {
        average_reward: total / n_episodes as f64,
        episodes: n_episodes,
        teleports,
    })
}
