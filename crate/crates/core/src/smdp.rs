//! Environment-agnostic building blocks: environments, termination
//! conditions, option templates, environment levels and trajectories.
//!
//! Everything stochastic takes an explicit [`SimRng`]; nothing in the crate
//! touches ambient randomness, so a seed fully determines a run.

use std::fmt;
use std::hash::Hash;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learners::Policy;

/// The generator threaded through every stochastic operation.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for the `index`-th draw of a named stream.
///
/// Used to give every (run, task, episode) triple its own generator so that
/// two methods compared on the same run seed see the same maps.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    // FNV-1a over the stream name, then splitmix64 finalisation.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base
        .wrapping_add(h.rotate_left(17))
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    OneHot,
    Dense,
}

/// Shape of the feature vector an environment exposes to learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    pub dimension: usize,
    pub encoding: Encoding,
}

/// A discrete-action MDP.
///
/// `transition` must be a pure function of `(state, action, rng)`; replaying
/// with an identically seeded generator reproduces the same successor.
pub trait Environment {
    type State: Clone + Eq + Hash + fmt::Debug;

    fn state_space(&self) -> StateSpace;
    fn action_count(&self) -> usize;
    /// Discount factor, in `[0, 1)`.
    fn discount(&self) -> f64;
    fn initial_state(&self, rng: &mut SimRng) -> Self::State;
    /// Reward accrued when moving from `state` to `next`.
    fn reward(&self, state: &Self::State, next: &Self::State) -> f64;
    fn transition(&self, state: &Self::State, action: usize, rng: &mut SimRng) -> Self::State;
    fn is_terminal(&self, state: &Self::State) -> bool;
    fn max_episode_steps(&self) -> usize;
    fn observe_into(&self, state: &Self::State, out: &mut Vec<f64>);

    fn observe(&self, state: &Self::State) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.state_space().dimension);
        self.observe_into(state, &mut out);
        out
    }
}

pub type StatePredicate<S> = Arc<dyn Fn(&S) -> bool + Send + Sync>;
pub type TerminalSampler<S> = Arc<dyn Fn(&S, &mut SimRng) -> S + Send + Sync>;

/// Predicate-or-timeout termination `F(s) ∨ (k > k*)`.
pub struct TerminationCondition<S> {
    pub predicate: StatePredicate<S>,
    /// k*, the number of steps an option may take.
    pub timeout: usize,
}

impl<S> Clone for TerminationCondition<S> {
    fn clone(&self) -> Self {
        Self {
            predicate: Arc::clone(&self.predicate),
            timeout: self.timeout,
        }
    }
}

impl<S> fmt::Debug for TerminationCondition<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminationCondition")
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

/// `F(s) ∨ (k > k*)`. The timeout branch is strict: at `k == k*` only the
/// predicate can terminate.
pub fn check_termination<S>(tc: &TerminationCondition<S>, state: &S, elapsed: usize) -> bool {
    (tc.predicate)(state) || elapsed > tc.timeout
}

/// An option without a policy: initiation set, termination condition and a
/// sampler over terminal states used to teleport.
pub struct OptionTemplate<S> {
    pub id: String,
    pub initiation: StatePredicate<S>,
    pub termination: TerminationCondition<S>,
    pub terminal_sampler: TerminalSampler<S>,
    /// The environment level whose action set contains this template.
    pub level: usize,
}

impl<S> Clone for OptionTemplate<S> {
    fn clone(&self) -> Self {
        Self {
            id: self.id.clone(),
            initiation: Arc::clone(&self.initiation),
            termination: self.termination.clone(),
            terminal_sampler: Arc::clone(&self.terminal_sampler),
            level: self.level,
        }
    }
}

impl<S> fmt::Debug for OptionTemplate<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OptionTemplate")
            .field("id", &self.id)
            .field("level", &self.level)
            .field("timeout", &self.termination.timeout)
            .finish_non_exhaustive()
    }
}

impl<S> OptionTemplate<S> {
    pub fn new(
        id: impl Into<String>,
        level: usize,
        initiation: StatePredicate<S>,
        termination: TerminationCondition<S>,
        terminal_sampler: TerminalSampler<S>,
    ) -> Self {
        Self {
            id: id.into(),
            initiation,
            termination,
            terminal_sampler,
            level,
        }
    }

    pub fn is_applicable(&self, state: &S) -> bool {
        (self.initiation)(state)
    }

    pub fn goal_reached(&self, state: &S) -> bool {
        (self.termination.predicate)(state)
    }

    pub fn timeout(&self) -> usize {
        self.termination.timeout
    }
}

/// Replaces the template's execution by a draw from its terminal-state sampler.
pub fn teleport<S>(template: &OptionTemplate<S>, state: &S, rng: &mut SimRng) -> Result<S> {
    if !template.is_applicable(state) {
        return Err(Error::InitiationViolation(template.id.clone()));
    }
    let next = (template.terminal_sampler)(state, rng);
    debug_assert!(
        template.goal_reached(&next),
        "terminal sampler of `{}` produced a non-terminal state",
        template.id
    );
    Ok(next)
}

/// One entry of a level's action set.
pub enum ActionEntry<S> {
    Primitive(usize),
    Template(OptionTemplate<S>),
}

impl<S> Clone for ActionEntry<S> {
    fn clone(&self) -> Self {
        match self {
            ActionEntry::Primitive(a) => ActionEntry::Primitive(*a),
            ActionEntry::Template(t) => ActionEntry::Template(t.clone()),
        }
    }
}

impl<S> fmt::Debug for ActionEntry<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionEntry::Primitive(a) => write!(f, "Primitive({a})"),
            ActionEntry::Template(t) => write!(f, "Template({})", t.id),
        }
    }
}

impl<S> ActionEntry<S> {
    pub fn template(&self) -> Option<&OptionTemplate<S>> {
        match self {
            ActionEntry::Template(t) => Some(t),
            ActionEntry::Primitive(_) => None,
        }
    }

    pub fn is_available(&self, state: &S) -> bool {
        match self {
            ActionEntry::Primitive(_) => true,
            ActionEntry::Template(t) => t.is_applicable(state),
        }
    }
}

/// Availability mask of an action set at `state`.
pub fn action_mask<S>(actions: &[ActionEntry<S>], state: &S) -> Vec<bool> {
    actions.iter().map(|a| a.is_available(state)).collect()
}

/// The base environment with its primitive actions replaced by a mix of
/// primitives and option templates.
pub struct EnvLevel<E: Environment> {
    pub base: E,
    pub actions: Vec<ActionEntry<E::State>>,
    pub index: usize,
}

impl<E: Environment + Clone> Clone for EnvLevel<E> {
    fn clone(&self) -> Self {
        Self {
            base: self.base.clone(),
            actions: self.actions.clone(),
            index: self.index,
        }
    }
}

impl<E: Environment> EnvLevel<E> {
    pub fn new(base: E, actions: Vec<ActionEntry<E::State>>, index: usize) -> Self {
        Self {
            base,
            actions,
            index,
        }
    }

    pub fn primitives_only(base: E, index: usize) -> Self {
        let actions = (0..base.action_count()).map(ActionEntry::Primitive).collect();
        Self::new(base, actions, index)
    }

    pub fn mask(&self, state: &E::State) -> Vec<bool> {
        action_mask(&self.actions, state)
    }

    pub fn templates(&self) -> impl Iterator<Item = &OptionTemplate<E::State>> {
        self.actions.iter().filter_map(ActionEntry::template)
    }
}

/// A template paired with a learned policy over its training level's action set.
pub struct OptionImpl<S> {
    pub template: OptionTemplate<S>,
    pub actions: Vec<ActionEntry<S>>,
    pub policy: Policy,
}

impl<S> Clone for OptionImpl<S> {
    fn clone(&self) -> Self {
        Self {
            template: self.template.clone(),
            actions: self.actions.clone(),
            policy: self.policy.clone(),
        }
    }
}

impl<S> fmt::Debug for OptionImpl<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OptionImpl")
            .field("template", &self.template.id)
            .field("actions", &self.actions)
            .finish_non_exhaustive()
    }
}

impl<S> OptionImpl<S> {
    pub fn new(template: OptionTemplate<S>, actions: Vec<ActionEntry<S>>, policy: Policy) -> Result<Self> {
        if policy.outputs() != actions.len() {
            return Err(Error::ShapeMismatch {
                expected: actions.len(),
                got: policy.outputs(),
            });
        }
        Ok(Self {
            template,
            actions,
            policy,
        })
    }

    pub fn id(&self) -> &str {
        &self.template.id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record<S> {
    pub state_before: S,
    pub choice: usize,
    pub reward: f64,
    /// Primitive steps consumed; 1 for primitives and teleports.
    pub duration: usize,
    pub state_after: S,
}

/// A sequence of decisions with their rewards and durations. The return is
/// maintained incrementally, discounting each reward by `γ^t` where `t` is
/// the elapsed time before that decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    records: Vec<Record<S>>,
    gamma: f64,
    total_return: f64,
    elapsed: usize,
}

impl<S> Trajectory<S> {
    pub fn new(gamma: f64) -> Self {
        Self {
            records: Vec::new(),
            gamma,
            total_return: 0.0,
            elapsed: 0,
        }
    }

    pub fn push(&mut self, record: Record<S>) {
        debug_assert!(record.duration >= 1);
        self.total_return += self.gamma.powi(self.elapsed as i32) * record.reward;
        self.elapsed += record.duration;
        self.records.push(record);
    }

    pub fn records(&self) -> &[Record<S>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.total_return
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub fn last_state(&self) -> Option<&S> {
        self.records.last().map(|r| &r.state_after)
    }

    /// Return recomputed from scratch over the records.
    pub fn recomputed_return(&self) -> f64 {
        let mut t = 0usize;
        let mut total = 0.0;
        for r in &self.records {
            total += self.gamma.powi(t as i32) * r.reward;
            t += r.duration;
        }
        total
    }
}

impl<S: PartialEq> Trajectory<S> {
    pub fn is_contiguous(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].state_after == w[1].state_before)
    }
}

/// Outcome of executing one template.
#[derive(Debug, Clone)]
pub struct Execution<S> {
    pub state: S,
    pub reward: f64,
    pub duration: usize,
}

/// Strategy for carrying out a template chosen during a rollout.
pub trait TemplateExecutor<E: Environment> {
    fn execute(
        &mut self,
        env: &E,
        template: &OptionTemplate<E::State>,
        state: &E::State,
        rng: &mut SimRng,
    ) -> Result<Execution<E::State>>;
}

/// Executes every template by teleporting; one decision of duration 1.
#[derive(Debug, Default, Clone, Copy)]
pub struct TeleportExecutor;

impl<E: Environment> TemplateExecutor<E> for TeleportExecutor {
    fn execute(
        &mut self,
        env: &E,
        template: &OptionTemplate<E::State>,
        state: &E::State,
        rng: &mut SimRng,
    ) -> Result<Execution<E::State>> {
        let next = teleport(template, state, rng)?;
        let reward = env.reward(state, &next);
        Ok(Execution {
            state: next,
            reward,
            duration: 1,
        })
    }
}

/// Runs `policy` from a sampled initial state. See [`rollout_from`].
pub fn rollout<E, P, X>(
    level: &EnvLevel<E>,
    policy: &mut P,
    executor: &mut X,
    max_steps: usize,
    rng: &mut SimRng,
) -> Result<Trajectory<E::State>>
where
    E: Environment,
    P: FnMut(&E::State, &[bool], &mut SimRng) -> usize,
    X: TemplateExecutor<E>,
{
    let start = level.base.initial_state(rng);
    rollout_from(level, start, None, policy, executor, max_steps, rng)
}

/// Runs `policy` over the level's action set until the base environment is
/// terminal, `stop` fires, or `max_steps` primitive steps have elapsed.
///
/// `stop` is evaluated before each decision with the index of the step about
/// to be taken, so a timeout of k* allows exactly k* steps.
pub fn rollout_from<E, P, X>(
    level: &EnvLevel<E>,
    start: E::State,
    stop: Option<&TerminationCondition<E::State>>,
    policy: &mut P,
    executor: &mut X,
    max_steps: usize,
    rng: &mut SimRng,
) -> Result<Trajectory<E::State>>
where
    E: Environment,
    P: FnMut(&E::State, &[bool], &mut SimRng) -> usize,
    X: TemplateExecutor<E>,
{
    let mut traj = Trajectory::new(level.base.discount());
    let mut state = start;
    while traj.elapsed() < max_steps && !level.base.is_terminal(&state) {
        if let Some(tc) = stop {
            if check_termination(tc, &state, traj.elapsed() + 1) {
                break;
            }
        }
        let mask = level.mask(&state);
        let choice = policy(&state, &mask, rng);
        let (next, reward, duration) = match &level.actions[choice] {
            ActionEntry::Primitive(a) => {
                let next = level.base.transition(&state, *a, rng);
                let r = level.base.reward(&state, &next);
                (next, r, 1)
            }
            ActionEntry::Template(t) => {
                let ex = executor.execute(&level.base, t, &state, rng)?;
                (ex.state, ex.reward, ex.duration)
            }
        };
        traj.push(Record {
            state_before: state,
            choice,
            reward,
            duration,
            state_after: next.clone(),
        });
        state = next;
    }
    Ok(traj)
}

/// Attempts per rollout at drawing an initial state inside the initiation set.
pub const INITIATION_ATTEMPTS: usize = 1000;

/// Fraction of `n_rollouts` runs of `policy`, started inside the template's
/// initiation set, that satisfy its predicate within k* steps.
pub fn estimate_success_probability<E, P>(
    policy: &mut P,
    template: &OptionTemplate<E::State>,
    level: &EnvLevel<E>,
    n_rollouts: usize,
    rng: &mut SimRng,
) -> Result<f64>
where
    E: Environment,
    P: FnMut(&E::State, &[bool], &mut SimRng) -> usize,
{
    assert!(n_rollouts >= 1, "n_rollouts must be positive");
    let mut successes = 0usize;
    for _ in 0..n_rollouts {
        let start = (0..INITIATION_ATTEMPTS)
            .map(|_| level.base.initial_state(rng))
            .find(|s| template.is_applicable(s))
            .ok_or_else(|| Error::NoInitialState {
                template: template.id.clone(),
                attempts: INITIATION_ATTEMPTS,
            })?;
        let traj = rollout_from(
            level,
            start.clone(),
            Some(&template.termination),
            policy,
            &mut TeleportExecutor,
            template.timeout(),
            rng,
        )?;
        let end = traj.last_state().unwrap_or(&start);
        if template.goal_reached(end) {
            successes += 1;
        }
    }
    Ok(successes as f64 / n_rollouts as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Integer line: action 0 moves right, action 1 stays; goal at `goal`.
    #[derive(Clone)]
    struct Line {
        goal: i32,
        start: i32,
    }

    impl Environment for Line {
        type State = i32;
        fn state_space(&self) -> StateSpace {
            StateSpace {
                dimension: 1,
                encoding: Encoding::Dense,
            }
        }
        fn action_count(&self) -> usize {
            2
        }
        fn discount(&self) -> f64 {
            0.99
        }
        fn initial_state(&self, _rng: &mut SimRng) -> i32 {
            self.start
        }
        fn reward(&self, _s: &i32, n: &i32) -> f64 {
            if *n == self.goal {
                1.0
            } else {
                0.0
            }
        }
        fn transition(&self, s: &i32, a: usize, _rng: &mut SimRng) -> i32 {
            if a == 0 {
                s + 1
            } else {
                *s
            }
        }
        fn is_terminal(&self, s: &i32) -> bool {
            *s >= self.goal
        }
        fn max_episode_steps(&self) -> usize {
            100
        }
        fn observe_into(&self, s: &i32, out: &mut Vec<f64>) {
            out.push(f64::from(*s));
        }
    }

    fn at_least(n: i32, timeout: usize) -> OptionTemplate<i32> {
        OptionTemplate::new(
            format!("reach_{n}"),
            1,
            Arc::new(move |s: &i32| *s < n),
            TerminationCondition {
                predicate: Arc::new(move |s: &i32| *s >= n),
                timeout,
            },
            Arc::new(move |_s: &i32, _r: &mut SimRng| n),
        )
    }

    #[test]
    fn termination_truth_table() {
        let tc = TerminationCondition {
            predicate: Arc::new(|s: &bool| *s),
            timeout: 50,
        };
        for f in [false, true] {
            for k in [0, 49, 50, 51] {
                assert_eq!(check_termination(&tc, &f, k), f || k > 50, "f={f} k={k}");
            }
        }
        assert!(check_termination(&tc, &true, 3));
        assert!(check_termination(&tc, &false, 51));
        assert!(!check_termination(&tc, &false, 50));
    }

    #[test]
    fn teleport_checks_initiation() {
        let t = at_least(5, 10);
        let mut rng = seeded_rng(0);
        assert_eq!(teleport(&t, &2, &mut rng).unwrap(), 5);
        assert!(matches!(
            teleport(&t, &7, &mut rng),
            Err(Error::InitiationViolation(id)) if id == "reach_5"
        ));
    }

    #[test]
    fn terminal_at_start_gives_empty_trajectory() {
        let level = EnvLevel::primitives_only(Line { goal: 0, start: 0 }, 0);
        let mut rng = seeded_rng(1);
        let traj = rollout(&level, &mut |_: &i32, _: &[bool], _: &mut SimRng| 0, &mut TeleportExecutor, 10, &mut rng).unwrap();
        assert!(traj.is_empty());
        assert_eq!(traj.total_return(), 0.0);
    }

    #[test]
    fn three_step_chain_discounts_final_reward() {
        let level = EnvLevel::primitives_only(Line { goal: 3, start: 0 }, 0);
        let mut rng = seeded_rng(1);
        let traj = rollout(&level, &mut |_: &i32, _: &[bool], _: &mut SimRng| 0, &mut TeleportExecutor, 10, &mut rng).unwrap();
        assert_eq!(traj.len(), 3);
        assert!((traj.total_return() - 0.9801).abs() < 1e-12);
        assert!((traj.total_return() - traj.recomputed_return()).abs() < 1e-9);
        assert!(traj.is_contiguous());
    }

    #[test]
    fn template_durations_shift_discounting() {
        let base = Line { goal: 10, start: 0 };
        let actions = vec![ActionEntry::Primitive(0), ActionEntry::Template(at_least(9, 5))];
        let level = EnvLevel::new(base, actions, 1);
        let mut rng = seeded_rng(2);
        let mut picks = vec![1usize, 0].into_iter();
        let mut policy = |_: &i32, _: &[bool], _: &mut SimRng| picks.next().unwrap_or(0);
        let traj = rollout(&level, &mut policy, &mut TeleportExecutor, 10, &mut rng).unwrap();
        assert_eq!(traj.records().iter().map(|r| r.duration).collect::<Vec<_>>(), vec![1, 1]);
        assert!((traj.total_return() - 0.99).abs() < 1e-12);
    }

    #[test]
    fn stop_condition_caps_steps_at_timeout() {
        let level = EnvLevel::primitives_only(Line { goal: 100, start: 0 }, 0);
        let never = TerminationCondition {
            predicate: Arc::new(|_: &i32| false),
            timeout: 7,
        };
        let mut rng = seeded_rng(3);
        let traj = rollout_from(&level, 0, Some(&never), &mut |_: &i32, _: &[bool], _: &mut SimRng| 1, &mut TeleportExecutor, 1000, &mut rng).unwrap();
        assert_eq!(traj.len(), 7);
    }

    #[test]
    fn success_probability_extremes() {
        let level = EnvLevel::primitives_only(Line { goal: 100, start: 0 }, 0);
        let near = at_least(1, 10);
        let mut rng = seeded_rng(4);
        let p = estimate_success_probability(&mut |_: &i32, _: &[bool], _: &mut SimRng| 0, &near, &level, 100, &mut rng).unwrap();
        assert_eq!(p, 1.0);
        let far = at_least(50, 10);
        let p = estimate_success_probability(&mut |_: &i32, _: &[bool], r: &mut SimRng| r.random_range(0..2), &far, &level, 100, &mut rng).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn coin_flip_chain_succeeds_half_the_time() {
        let level = EnvLevel::primitives_only(Line { goal: 100, start: 0 }, 0);
        let one_step = at_least(1, 1);
        let mut rng = seeded_rng(6);
        let p = estimate_success_probability(&mut |_: &i32, _: &[bool], r: &mut SimRng| r.random_range(0..2), &one_step, &level, 10_000, &mut rng).unwrap();
        assert!((p - 0.5).abs() <= 0.02, "{p}");
    }

    #[test]
    fn success_probability_requires_reachable_initiation() {
        let level = EnvLevel::primitives_only(Line { goal: 100, start: 20 }, 0);
        let t = at_least(5, 10);
        let mut rng = seeded_rng(5);
        let err = estimate_success_probability(&mut |_: &i32, _: &[bool], _: &mut SimRng| 0, &t, &level, 3, &mut rng);
        assert!(matches!(err, Err(Error::NoInitialState { .. })));
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        let a = derive_seed(42, "get_gem", 0);
        assert_eq!(a, derive_seed(42, "get_gem", 0));
        assert_ne!(a, derive_seed(42, "get_gem", 1));
        assert_ne!(a, derive_seed(42, "make_axe", 0));
        assert_ne!(a, derive_seed(43, "get_gem", 0));
    }
}
