//! Tabular SMDP Q-learning.

use std::collections::HashMap;

/// Q(s, o) keyed by a hashed state; unseen entries read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    values: HashMap<(u64, usize), f64>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, state: u64, choice: usize) -> f64 {
        self.values.get(&(state, choice)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, state: u64, choice: usize, value: f64) {
        self.values.insert((state, choice), value);
    }

    /// `max_{o ∈ candidates} Q(state, o)`, or 0 for an empty candidate set.
    pub fn max_over(&self, state: u64, candidates: &[usize]) -> f64 {
        candidates
            .iter()
            .map(|&o| self.get(state, o))
            .fold(None, |acc: Option<f64>, q| Some(acc.map_or(q, |a| a.max(q))))
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries sorted by key.
    pub fn entries(&self) -> Vec<((u64, usize), f64)> {
        let mut v: Vec<_> = self.values.iter().map(|(k, v)| (*k, *v)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }
}

/// `Q(s,o) ← Q(s,o) + α [r_c + γ^k max_{o'} Q(s',o') − Q(s,o)]`.
///
/// An empty candidate set marks `s'` as terminal (no bootstrap).
#[allow(clippy::too_many_arguments)]
pub fn smdp_q_update(
    q: &mut QTable,
    state: u64,
    choice: usize,
    reward: f64,
    duration: usize,
    next_state: u64,
    candidates: &[usize],
    alpha: f64,
    gamma: f64,
) {
    debug_assert!(duration >= 1);
    let old = q.get(state, choice);
    let target = reward + gamma.powi(duration as i32) * q.max_over(next_state, candidates);
    q.set(state, choice, old + alpha * (target - old));
}

/// FNV-1a over the bit patterns of a feature vector; stable across builds
/// so saved tables stay valid.
pub fn observation_key(obs: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in obs {
        for b in x.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
