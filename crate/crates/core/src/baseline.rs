//! Bottom-up option-value iteration: exact solvers on explicit SMDPs, SMDP
//! Q-learning from samples, and bottom-up training on Craft where each task
//! is learned from scratch over the already-trained lower options.

use std::fmt::Write as _;
use std::hash::Hash;

use rand::Rng;

use crate::craft::{curriculum, CraftEnv, CraftState, Family};
use crate::error::{Error, Result};
use crate::learners::{epsilon_greedy_masked, smdp_q_update, QTable};
use crate::smdp::{derive_seed, seeded_rng, Environment, OptionImpl, SimRng};
use crate::templates::{
    build_reward, learn_option_policy, EpisodeRoot, Hooks, ImplementationSet, Stage, StageReport, TrainConfig,
};

pub const MASS_TOLERANCE: f64 = 1e-9;

/// One way an option can end: in `next` after `duration` steps with
/// probability `prob`, collecting discounted reward `reward` on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub duration: usize,
    pub prob: f64,
    pub reward: f64,
}

/// A finite SMDP given by its tabulated option outcomes p(s', s, k).
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitSmdp {
    pub gamma: f64,
    pub states: Vec<String>,
    pub options: Vec<String>,
    /// `outcomes[s][o]`; empty when `o` is unavailable in `s`.
    pub outcomes: Vec<Vec<Vec<Outcome>>>,
}

impl ExplicitSmdp {
    pub fn new(gamma: f64, states: Vec<String>, options: Vec<String>) -> Self {
        let outcomes = vec![vec![Vec::new(); options.len()]; states.len()];
        Self {
            gamma,
            states,
            options,
            outcomes,
        }
    }

    pub fn add_outcome(&mut self, state: usize, option: usize, outcome: Outcome) {
        self.outcomes[state][option].push(outcome);
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_options(&self) -> usize {
        self.options.len()
    }

    pub fn available(&self, state: usize) -> Vec<usize> {
        (0..self.n_options()).filter(|&o| !self.outcomes[state][o].is_empty()).collect()
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.available(state).is_empty()
    }

    /// `P(s'|s,o) = Σ_k γ^k p(s',s,k)`.
    pub fn discounted_transition(&self, state: usize, option: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n_states()];
        for o in &self.outcomes[state][option] {
            p[o.next] += self.gamma.powi(o.duration as i32) * o.prob;
        }
        p
    }

    /// Expected discounted reward `R(s,o)`.
    pub fn expected_reward(&self, state: usize, option: usize) -> f64 {
        self.outcomes[state][option].iter().map(|o| o.prob * o.reward).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::validation("gamma", "must lie in [0, 1)"));
        }
        for s in 0..self.n_states() {
            for o in self.available(s) {
                let outs = &self.outcomes[s][o];
                if outs.iter().any(|x| x.duration == 0 || x.next >= self.n_states() || x.prob < 0.0) {
                    return Err(Error::validation(
                        "outcome",
                        format!("bad outcome for ({}, {})", self.states[s], self.options[o]),
                    ));
                }
                let mass: f64 = outs.iter().map(|x| x.prob).sum();
                if (mass - 1.0).abs() > MASS_TOLERANCE {
                    return Err(Error::validation(
                        "outcome",
                        format!("mass {mass} for ({}, {})", self.states[s], self.options[o]),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Draws one option execution: `(s', k, r_c)`.
    pub fn sample(&self, state: usize, option: usize, rng: &mut SimRng) -> (usize, usize, f64) {
        let outs = &self.outcomes[state][option];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for o in outs {
            acc += o.prob;
            if u < acc {
                return (o.next, o.duration, o.reward);
            }
        }
        let o = outs.last().expect("sampled an unavailable option");
        (o.next, o.duration, o.reward)
    }

    /// Plain-text form:
    ///
    /// ```text
    /// gamma 0.9
    /// states s0 s1 goal
    /// options short long
    /// outcome s0 short s1 1 0.7 0.0
    /// ```
    ///
    /// Outcome fields are state, option, next state, duration, probability
    /// and discounted reward. `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "gamma {}", self.gamma);
        let _ = writeln!(out, "states {}", self.states.join(" "));
        let _ = writeln!(out, "options {}", self.options.join(" "));
        for s in 0..self.n_states() {
            for o in 0..self.n_options() {
                for x in &self.outcomes[s][o] {
                    let _ = writeln!(
                        out,
                        "outcome {} {} {} {} {} {}",
                        self.states[s], self.options[o], self.states[x.next], x.duration, x.prob, x.reward
                    );
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut gamma = None;
        let mut states: Option<Vec<String>> = None;
        let mut options: Option<Vec<String>> = None;
        let mut pending = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let mut words = line.split_whitespace();
            match words.next() {
                Some("gamma") => {
                    let g = words
                        .next()
                        .and_then(|w| w.parse::<f64>().ok())
                        .ok_or_else(|| err("expected `gamma <number>`".into()))?;
                    gamma = Some(g);
                }
                Some("states") => states = Some(words.map(str::to_string).collect()),
                Some("options") => options = Some(words.map(str::to_string).collect()),
                Some("outcome") => {
                    let f: Vec<&str> = words.collect();
                    if f.len() != 6 {
                        return Err(err(format!("outcome needs 6 fields, got {}", f.len())));
                    }
                    pending.push((i + 1, f.iter().map(|s| s.to_string()).collect::<Vec<_>>()));
                }
                Some(other) => return Err(err(format!("unknown directive `{other}`"))),
                None => {}
            }
        }
        let missing = |what: &str| Error::Parse {
            line: 0,
            message: format!("missing `{what}` line"),
        };
        let gamma = gamma.ok_or_else(|| missing("gamma"))?;
        let states = states.ok_or_else(|| missing("states"))?;
        let options = options.ok_or_else(|| missing("options"))?;
        let mut m = ExplicitSmdp::new(gamma, states, options);
        for (line, f) in pending {
            let err = |message: String| Error::Parse { line, message };
            let find = |names: &[String], w: &str| names.iter().position(|n| n == w);
            let s = find(&m.states, &f[0]).ok_or_else(|| err(format!("unknown state `{}`", f[0])))?;
            let o = find(&m.options, &f[1]).ok_or_else(|| err(format!("unknown option `{}`", f[1])))?;
            let next = find(&m.states, &f[2]).ok_or_else(|| err(format!("unknown state `{}`", f[2])))?;
            let duration = f[3].parse().map_err(|_| err(format!("bad duration `{}`", f[3])))?;
            let prob = f[4].parse().map_err(|_| err(format!("bad probability `{}`", f[4])))?;
            let reward = f[5].parse().map_err(|_| err(format!("bad reward `{}`", f[5])))?;
            m.add_outcome(
                s,
                o,
                Outcome {
                    next,
                    duration,
                    prob,
                    reward,
                },
            );
        }
        m.validate()?;
        Ok(m)
    }
}

/// The fixed 4-state, 2-option instance used for oracle checks. `goal` is
/// absorbing.
pub fn four_state_fixture() -> ExplicitSmdp {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut m = ExplicitSmdp::new(0.9, names(&["s0", "s1", "s2", "goal"]), names(&["short", "long"]));
    let mut add = |s, o, next, duration, prob, reward| {
        m.add_outcome(
            s,
            o,
            Outcome {
                next,
                duration,
                prob,
                reward,
            },
        )
    };
    add(0, 0, 1, 1, 0.7, 0.0);
    add(0, 0, 0, 2, 0.3, 0.1);
    add(0, 1, 2, 3, 1.0, 0.5);
    add(1, 0, 2, 1, 0.5, 0.2);
    add(1, 0, 0, 1, 0.5, 0.0);
    add(1, 1, 3, 4, 0.6, 1.0);
    add(1, 1, 1, 2, 0.4, 0.3);
    add(2, 0, 3, 1, 0.8, 1.0);
    add(2, 0, 1, 2, 0.2, 0.0);
    add(2, 1, 3, 2, 0.5, 2.0);
    add(2, 1, 0, 3, 0.5, 0.0);
    m
}

/// `Q[s][o]`; entries for unavailable options stay 0.
pub type QValues = Vec<Vec<f64>>;

fn state_value(m: &ExplicitSmdp, q: &QValues, s: usize) -> f64 {
    m.available(s).into_iter().map(|o| q[s][o]).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v)))).unwrap_or(0.0)
}

/// Iterates `Q(s,o) ← R(s,o) + Σ_{s'} P(s'|s,o) max_{o'} Q(s',o')` until the
/// sup-norm change drops below `tol`.
pub fn exact_value_iteration(m: &ExplicitSmdp, tol: f64) -> Result<QValues> {
    if tol <= 0.0 {
        return Err(Error::validation("tol", "must be positive"));
    }
    m.validate()?;
    let models: Vec<Vec<(f64, Vec<f64>)>> = (0..m.n_states())
        .map(|s| {
            (0..m.n_options())
                .map(|o| (m.expected_reward(s, o), m.discounted_transition(s, o)))
                .collect()
        })
        .collect();
    let mut q = vec![vec![0.0; m.n_options()]; m.n_states()];
    loop {
        let v: Vec<f64> = (0..m.n_states()).map(|s| state_value(m, &q, s)).collect();
        let mut delta: f64 = 0.0;
        let mut next = q.clone();
        for s in 0..m.n_states() {
            for o in m.available(s) {
                let (r, p) = &models[s][o];
                let val = r + p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                delta = delta.max((val - q[s][o]).abs());
                next[s][o] = val;
            }
        }
        q = next;
        if delta < tol {
            return Ok(q);
        }
    }
}

pub fn sup_norm_distance(m: &ExplicitSmdp, a: &QValues, b: &QValues) -> f64 {
    let mut d: f64 = 0.0;
    for s in 0..m.n_states() {
        for o in m.available(s) {
            d = d.max((a[s][o] - b[s][o]).abs());
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearningConfig {
    pub updates: usize,
    /// Step size for the n-th visit of a pair is
    /// `alpha0 / (1 + (n − 1)/alpha_delay)^alpha_power`.
    pub alpha0: f64,
    pub alpha_delay: f64,
    pub alpha_power: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            updates: 200_000,
            alpha0: 1.0,
            alpha_delay: 1.0,
            alpha_power: 0.9,
            epsilon: 0.5,
            seed: 0,
        }
    }
}

/// SMDP Q-learning from sampled option executions. Episodes restart from a
/// uniformly drawn non-terminal state whenever a terminal state is reached.
pub fn smdp_q_learning(m: &ExplicitSmdp, cfg: &QLearningConfig) -> Result<QValues> {
    m.validate()?;
    let starts: Vec<usize> = (0..m.n_states()).filter(|&s| !m.is_terminal(s)).collect();
    if starts.is_empty() {
        return Ok(vec![vec![0.0; m.n_options()]; m.n_states()]);
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut q = QTable::new();
    let mut visits = vec![vec![0usize; m.n_options()]; m.n_states()];
    let mut s = starts[rng.random_range(0..starts.len())];
    for _ in 0..cfg.updates {
        let avail = m.available(s);
        let mask: Vec<bool> = (0..m.n_options()).map(|o| avail.contains(&o)).collect();
        let values: Vec<f64> = (0..m.n_options()).map(|o| q.get(s as u64, o)).collect();
        let o = epsilon_greedy_masked(&values, &mask, cfg.epsilon, &mut rng);
        let (next, k, r) = m.sample(s, o, &mut rng);
        visits[s][o] += 1;
        let alpha = cfg.alpha0 / (1.0 + (visits[s][o] - 1) as f64 / cfg.alpha_delay).powf(cfg.alpha_power);
        let candidates = m.available(next);
        smdp_q_update(&mut q, s as u64, o, r, k, next as u64, &candidates, alpha, m.gamma);
        s = if candidates.is_empty() {
            starts[rng.random_range(0..starts.len())]
        } else {
            next
        };
    }
    Ok((0..m.n_states())
        .map(|s| (0..m.n_options()).map(|o| q.get(s as u64, o)).collect())
        .collect())
}

/// A finite MDP with rewards `r(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitMdp {
    pub gamma: f64,
    /// `transitions[s][a]` lists `(s', p)`.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub rewards: Vec<Vec<f64>>,
}

impl ExplicitMdp {
    pub fn new(gamma: f64, n_states: usize, n_actions: usize) -> Self {
        Self {
            gamma,
            transitions: vec![vec![Vec::new(); n_actions]; n_states],
            rewards: vec![vec![0.0; n_actions]; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.first().map_or(0, Vec::len)
    }
}

/// An option on an explicit MDP: stochastic policy `π(a|s)`, termination
/// predicate and optional timeout k*.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitOption {
    pub name: String,
    pub initiation: Vec<bool>,
    pub policy: Vec<Vec<f64>>,
    pub terminates: Vec<bool>,
    pub timeout: Option<usize>,
}

/// Model of one option from one start state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionModel {
    /// Terminal outcomes; `reward` is the expected discounted reward given
    /// that outcome.
    pub outcomes: Vec<Outcome>,
    /// `P(s'|s,o)`.
    pub transition: Vec<f64>,
    /// `R(s,o)`.
    pub reward: f64,
}

/// Enumerates every option-controlled trajectory from `start` up to
/// `horizon` steps (default 4·k*, or 4·|S| without a timeout), weighting
/// terminations after k steps by γ^k.
pub fn build_option_model(
    mdp: &ExplicitMdp,
    option: &ExplicitOption,
    start: usize,
    horizon: Option<usize>,
) -> Result<OptionModel> {
    let n = mdp.n_states();
    let horizon = horizon.unwrap_or_else(|| 4 * option.timeout.unwrap_or(n));
    // (probability, probability-weighted discounted reward) of still running.
    let mut alive = vec![(0.0, 0.0); n];
    alive[start] = (1.0, 0.0);
    let mut outcomes = Vec::new();
    let mut terminated = 0.0;
    for k in 1..=horizon {
        let discount = mdp.gamma.powi(k as i32 - 1);
        let mut next = vec![(0.0, 0.0); n];
        for (s, &(p, w)) in alive.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (a, &pi) in option.policy[s].iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                let r = mdp.rewards[s][a];
                for &(s2, pt) in &mdp.transitions[s][a] {
                    let q = p * pi * pt;
                    next[s2].0 += q;
                    next[s2].1 += w * pi * pt + q * discount * r;
                }
            }
        }
        let timed_out = option.timeout.is_some_and(|t| k >= t);
        for (s2, entry) in next.iter_mut().enumerate() {
            let (p, w) = *entry;
            if p > 0.0 && (option.terminates[s2] || timed_out) {
                outcomes.push(Outcome {
                    next: s2,
                    duration: k,
                    prob: p,
                    reward: w / p,
                });
                terminated += p;
                *entry = (0.0, 0.0);
            }
        }
        alive = next;
        if alive.iter().all(|&(p, _)| p == 0.0) {
            break;
        }
    }
    if terminated < 1.0 - MASS_TOLERANCE {
        return Err(Error::HorizonExceeded {
            mass: terminated,
            horizon,
        });
    }
    let mut transition = vec![0.0; n];
    let mut reward = 0.0;
    for o in &outcomes {
        transition[o.next] += mdp.gamma.powi(o.duration as i32) * o.prob;
        reward += o.prob * o.reward;
    }
    Ok(OptionModel {
        outcomes,
        transition,
        reward,
    })
}

/// The SMDP induced by running `options` on `mdp`.
pub fn smdp_from_options(mdp: &ExplicitMdp, options: &[ExplicitOption], horizon: Option<usize>) -> Result<ExplicitSmdp> {
    let states = (0..mdp.n_states()).map(|s| format!("s{s}")).collect();
    let names = options.iter().map(|o| o.name.clone()).collect();
    let mut m = ExplicitSmdp::new(mdp.gamma, states, names);
    for (oi, opt) in options.iter().enumerate() {
        for s in 0..mdp.n_states() {
            if opt.initiation[s] {
                for o in build_option_model(mdp, opt, s, horizon)?.outcomes {
                    m.add_outcome(s, oi, o);
                }
            }
        }
    }
    Ok(m)
}

/// Outcome of bottom-up training. Tasks that missed the threshold still
/// contribute their (weaker) policy to the levels above.
pub struct BottomUpRun<S> {
    pub implementations: ImplementationSet<S>,
    pub reports: Vec<StageReport>,
}

impl<S> BottomUpRun<S> {
    pub fn all_converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }
}

/// Trains `tasks` in the given order. Each task runs on its own environment
/// from the environment's initial distribution; template entries of its
/// action set are executed with the implementations learned before it, and
/// their transitions are discounted by their actual duration.
pub fn train_bottom_up<E>(
    tasks: &[(E, Stage<E::State>)],
    cfg: &TrainConfig,
    seed: u64,
    hooks: &mut Hooks<'_>,
) -> Result<BottomUpRun<E::State>>
where
    E: Environment,
    E::State: Hash,
{
    let mut d = ImplementationSet::new();
    let mut reports = Vec::new();
    for (env, stage) in tasks {
        for entry in &stage.actions {
            if let Some(t) = entry.template() {
                if !d.contains(&t.id) {
                    return Err(Error::UnimplementedTemplate(t.id.clone()));
                }
            }
        }
        let spec = build_reward(&stage.template, 1, env);
        let stage_seed = derive_seed(seed, &stage.name, 0);
        let out = learn_option_policy(env, stage, &spec, &d, cfg, stage_seed, EpisodeRoot::Trainee, hooks)?;
        reports.push(StageReport {
            name: stage.name.clone(),
            template: stage.template.id.clone(),
            level: stage.level,
            episodes: out.episodes,
            converged: out.converged,
            final_average: out.final_average,
            stats: out.stats,
        });
        d.insert(OptionImpl::new(stage.template.clone(), stage.actions.clone(), out.policy)?)?;
    }
    Ok(BottomUpRun {
        implementations: d,
        reports,
    })
}

/// The family's tasks in bottom-up order, each on its own task environment.
pub fn craft_bottom_up_tasks(family: Family) -> Result<Vec<(CraftEnv, Stage<CraftState>)>> {
    let mut c = curriculum(family)?;
    c.stages.reverse();
    Ok(c.stages
        .into_iter()
        .map(|st| {
            let task = crate::craft::Task::from_name(&st.name).expect("curriculum stages are named by task");
            (CraftEnv::new(task, family), st)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(gamma: f64) -> (ExplicitMdp, ExplicitOption) {
        // 0 --a--> 1 --a--> 2, option terminates in 2
        let mut mdp = ExplicitMdp::new(gamma, 3, 1);
        mdp.transitions[0][0] = vec![(1, 1.0)];
        mdp.transitions[1][0] = vec![(2, 1.0)];
        mdp.transitions[2][0] = vec![(2, 1.0)];
        let opt = ExplicitOption {
            name: "go".into(),
            initiation: vec![true, true, false],
            policy: vec![vec![1.0]; 3],
            terminates: vec![false, false, true],
            timeout: None,
        };
        (mdp, opt)
    }

    #[test]
    fn two_step_deterministic_option() {
        let (mdp, opt) = chain(0.9);
        let m = build_option_model(&mdp, &opt, 0, None).unwrap();
        assert!((m.transition[2] - 0.81).abs() < 1e-12);
        assert_eq!(m.transition[0], 0.0);
        assert_eq!(m.transition[1], 0.0);
    }

    #[test]
    fn immediate_self_termination() {
        let mut mdp = ExplicitMdp::new(0.9, 1, 1);
        mdp.transitions[0][0] = vec![(0, 1.0)];
        mdp.rewards[0][0] = 2.5;
        let opt = ExplicitOption {
            name: "stay".into(),
            initiation: vec![true],
            policy: vec![vec![1.0]],
            terminates: vec![true],
            timeout: None,
        };
        let m = build_option_model(&mdp, &opt, 0, None).unwrap();
        assert!((m.transition[0] - 0.9).abs() < 1e-12);
        assert!((m.reward - 2.5).abs() < 1e-12);
    }

    #[test]
    fn branching_chain() {
        // 0 -> {1 (terminal), 2} ; 2 -> 1
        let mut mdp = ExplicitMdp::new(0.9, 3, 1);
        mdp.transitions[0][0] = vec![(1, 0.5), (2, 0.5)];
        mdp.transitions[2][0] = vec![(1, 1.0)];
        mdp.transitions[1][0] = vec![(1, 1.0)];
        let opt = ExplicitOption {
            name: "o".into(),
            initiation: vec![true, false, false],
            policy: vec![vec![1.0]; 3],
            terminates: vec![false, true, false],
            timeout: None,
        };
        let m = build_option_model(&mdp, &opt, 0, None).unwrap();
        let by_k: Vec<(usize, f64)> = m
            .outcomes
            .iter()
            .map(|o| (o.duration, 0.9f64.powi(o.duration as i32) * o.prob))
            .collect();
        assert_eq!(by_k.len(), 2);
        assert!((by_k[0].1 - 0.45).abs() < 1e-12);
        assert!((by_k[1].1 - 0.405).abs() < 1e-12);
    }

    #[test]
    fn non_terminating_option_exceeds_horizon() {
        let (mdp, mut opt) = chain(0.9);
        opt.terminates = vec![false; 3];
        assert!(matches!(
            build_option_model(&mdp, &opt, 0, Some(10)),
            Err(Error::HorizonExceeded { horizon: 10, .. })
        ));
        opt.timeout = Some(3);
        let m = build_option_model(&mdp, &opt, 0, None).unwrap();
        assert_eq!(m.outcomes.len(), 1);
        assert_eq!(m.outcomes[0].duration, 3);
    }

    #[test]
    fn geometric_series_fixed_point() {
        let mut m = ExplicitSmdp::new(0.9, vec!["s".into()], vec!["o".into()]);
        m.add_outcome(
            0,
            0,
            Outcome {
                next: 0,
                duration: 1,
                prob: 1.0,
                reward: 1.0,
            },
        );
        let q = exact_value_iteration(&m, 1e-10).unwrap();
        assert!((q[0][0] - 10.0).abs() < 1e-8);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mut m = four_state_fixture();
        for row in &mut m.outcomes {
            for outs in row {
                for o in outs {
                    o.reward = 0.0;
                }
            }
        }
        let q = exact_value_iteration(&m, 1e-9).unwrap();
        assert!(q.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn fixture_text_round_trip() {
        let m = four_state_fixture();
        m.validate().unwrap();
        assert_eq!(ExplicitSmdp::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn text_errors_carry_line_numbers() {
        let text = "gamma 0.9\nstates a b\noptions o\noutcome a o c 1 1.0 0.0\n";
        match ExplicitSmdp::from_text(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let bad_mass = "gamma 0.9\nstates a b\noptions o\noutcome a o b 1 0.5 0.0\n";
        assert!(matches!(ExplicitSmdp::from_text(bad_mass), Err(Error::Validation { .. })));
    }

    #[test]
    fn bottom_up_order_starts_from_primitives() {
        let tasks = craft_bottom_up_tasks(Family::Gem).unwrap();
        let names: Vec<&str> = tasks.iter().map(|(_, s)| s.name.as_str()).collect();
        assert_eq!(names, ["get_wood", "get_iron", "make_stick", "make_axe", "get_gem"]);
        assert!(tasks[0].1.actions.iter().all(|a| a.template().is_none()));
        assert_eq!(tasks[0].0.max_episode_steps(), 100);
    }
}
