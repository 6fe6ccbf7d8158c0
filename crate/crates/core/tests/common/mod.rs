#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use option_templates::baseline::ExplicitSmdp;
use option_templates::craft::{apply, Action, CraftMap, CraftState, Family, Inventory, Item, Task};

/// Items to collect, in order, to end up holding `goal`.
pub fn recipe(goal: Item) -> Vec<Item> {
    match goal {
        Item::Wood | Item::Iron => vec![goal],
        Item::Stick => vec![Item::Wood, Item::Stick],
        Item::Axe => vec![Item::Wood, Item::Stick, Item::Iron, Item::Axe],
        Item::Gem => vec![Item::Wood, Item::Stick, Item::Iron, Item::Axe, Item::Gem],
        Item::Bridge => vec![Item::Wood, Item::Iron, Item::Bridge],
        Item::Gold => vec![Item::Wood, Item::Iron, Item::Bridge, Item::Gold],
    }
}

/// Shortest action sequence from `start` to any state holding `item`.
pub fn shortest_path_to(start: &CraftState, item: Item, max_depth: usize) -> Option<Vec<Action>> {
    type Key = ((usize, usize), CraftMap, Inventory);
    let key = |s: &CraftState| -> Key { (s.pos, s.map.clone(), s.inventory) };
    let mut seen: HashSet<Key> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(key(start));
    queue.push_back((start.clone(), Vec::new()));
    while let Some((s, path)) = queue.pop_front() {
        if s.inventory.has(item) {
            return Some(path);
        }
        if path.len() >= max_depth {
            continue;
        }
        for a in Action::ALL {
            let n = apply(&s, a);
            if seen.insert(key(&n)) {
                let mut p = path.clone();
                p.push(a);
                queue.push_back((n, p));
            }
        }
    }
    None
}

/// Scripted solver: collects the recipe's items one after another, each by
/// breadth-first search. Not optimal overall, but every step is.
pub fn scripted_plan(start: &CraftState, goal: Item, max_len: usize) -> Option<Vec<Action>> {
    let mut state = start.clone();
    let mut plan = Vec::new();
    for item in recipe(goal) {
        if state.inventory.has(item) {
            continue;
        }
        let part = shortest_path_to(&state, item, max_len.checked_sub(plan.len())?)?;
        for &a in &part {
            state = apply(&state, a);
        }
        plan.extend(part);
    }
    Some(plan)
}

pub fn all_tasks(family: Family) -> Vec<Task> {
    family.learning_order().into_iter().map(|(t, _)| t).collect()
}

/// Text form of the four-state fixture kept under `tests/fixtures`.
pub fn fixture_text() -> String {
    std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/four_state.smdp")).unwrap()
}

pub fn fixture() -> ExplicitSmdp {
    ExplicitSmdp::from_text(&fixture_text()).unwrap()
}

/// V^π for a deterministic stationary policy, by pushing the discounted
/// occupancy forward until its mass is negligible.
pub fn policy_value(m: &ExplicitSmdp, policy: &[usize], start: usize) -> f64 {
    let mut mass = vec![0.0; m.n_states()];
    mass[start] = 1.0;
    let mut value = 0.0;
    while mass.iter().sum::<f64>() > 1e-15 {
        let mut next = vec![0.0; m.n_states()];
        for (s, &w) in mass.iter().enumerate() {
            if w == 0.0 || m.is_terminal(s) {
                continue;
            }
            for o in &m.outcomes[s][policy[s]] {
                value += w * o.prob * o.reward;
                next[o.next] += w * o.prob * m.gamma.powi(o.duration as i32);
            }
        }
        mass = next;
    }
    value
}

/// Q* by enumerating every deterministic stationary policy.
pub fn brute_force_q(m: &ExplicitSmdp) -> Vec<Vec<f64>> {
    let choices: Vec<Vec<usize>> = (0..m.n_states())
        .map(|s| {
            let a = m.available(s);
            if a.is_empty() {
                vec![0]
            } else {
                a
            }
        })
        .collect();
    let mut best = vec![f64::NEG_INFINITY; m.n_states()];
    let mut policy = vec![0; m.n_states()];
    fn each(i: usize, choices: &[Vec<usize>], policy: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if i == choices.len() {
            f(policy);
            return;
        }
        for &c in &choices[i] {
            policy[i] = c;
            each(i + 1, choices, policy, f);
        }
    }
    each(0, &choices, &mut policy, &mut |p| {
        for (s, b) in best.iter_mut().enumerate() {
            *b = b.max(policy_value(m, p, s));
        }
    });
    (0..m.n_states())
        .map(|s| {
            (0..m.n_options())
                .map(|o| {
                    m.outcomes[s][o]
                        .iter()
                        .map(|x| x.prob * (x.reward + m.gamma.powi(x.duration as i32) * best[x.next]))
                        .sum()
                })
                .collect()
        })
        .collect()
}
