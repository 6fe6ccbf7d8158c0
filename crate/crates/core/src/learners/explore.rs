use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::smdp::SimRng;

/// Exponentially decaying exploration rate with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    /// Episodes for ε to halve.
    pub half_life: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.2,
            half_life: 500.0,
            floor: 0.01,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        (self.start * 0.5f64.powf(episode as f64 / self.half_life)).max(self.floor)
    }
}

/// ε-greedy over `values`: uniform with probability ε, otherwise the argmax
/// with ties going to the lowest index.
pub fn epsilon_greedy_select(values: &[f64], epsilon: f64, rng: &mut SimRng) -> usize {
    assert!(!values.is_empty(), "no candidates to select from");
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..values.len());
    }
    argmax(values)
}

/// ε-greedy restricted to entries whose mask bit is set.
pub fn epsilon_greedy_masked(values: &[f64], mask: &[bool], epsilon: f64, rng: &mut SimRng) -> usize {
    let candidates: Vec<usize> = (0..values.len()).filter(|&i| mask[i]).collect();
    let sub: Vec<f64> = candidates.iter().map(|&i| values[i]).collect();
    candidates[epsilon_greedy_select(&sub, epsilon, rng)]
}

/// Samples from `probs`, except that with probability ε the choice is
/// uniform over the unmasked entries.
pub fn sample_with_exploration(probs: &[f64], mask: &[bool], epsilon: f64, rng: &mut SimRng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let candidates: Vec<usize> = (0..probs.len()).filter(|&i| mask[i]).collect();
        return candidates[rng.random_range(0..candidates.len())];
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smdp::seeded_rng;

    #[test]
    fn greedy_picks_argmax_lowest_tie() {
        let mut rng = seeded_rng(0);
        assert_eq!(epsilon_greedy_select(&[1.0, 3.0, 2.0], 0.0, &mut rng), 1);
        assert_eq!(epsilon_greedy_select(&[2.0, 2.0, 1.0], 0.0, &mut rng), 0);
    }

    #[test]
    fn masked_greedy_skips_unavailable() {
        let mut rng = seeded_rng(0);
        assert_eq!(epsilon_greedy_masked(&[9.0, 3.0, 2.0], &[false, true, true], 0.0, &mut rng), 1);
    }

    #[test]
    fn schedule_is_monotone_and_floored() {
        let s = EpsilonSchedule {
            start: 0.5,
            half_life: 10.0,
            floor: 0.05,
        };
        assert_eq!(s.at(0), 0.5);
        assert!((s.at(10) - 0.25).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for e in 0..500 {
            let v = s.at(e);
            assert!(v <= prev && v >= 0.05);
            prev = v;
        }
        assert_eq!(s.at(10_000), 0.05);
    }

    #[test]
    fn sampling_never_picks_zero_probability() {
        let mut rng = seeded_rng(3);
        for _ in 0..1000 {
            let i = sample_with_exploration(&[0.0, 0.7, 0.3], &[false, true, true], 0.2, &mut rng);
            assert_ne!(i, 0);
        }
    }
}
