//! Central finite-difference checks of the analytic actor and critic gradients.

use rand::Rng;

use super::mlp::{MlpParams, MlpShape, TrainSample};
use crate::error::Result;
use crate::smdp::seeded_rng;

/// Denominator floor for relative errors of near-zero gradient entries.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Instances whose pre-activations come this close to a ReLU kink are re-drawn.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    /// Largest relative error over actor parameters.
    pub actor: f64,
    pub critic: f64,
    pub parameters: usize,
}

impl GradientReport {
    pub fn max(&self) -> f64 {
        self.actor.max(self.critic)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares both analytic gradients against central differences with step `h`.
/// Advantages are computed once and held fixed, as in training.
pub fn finite_difference_check(params: &MlpParams, batch: &[TrainSample], h: f64) -> Result<GradientReport> {
    let adv = params.advantages(batch)?;
    let actor = params.actor_gradient(batch, &adv)?;
    let critic = params.critic_gradient(batch)?;
    let shape = params.shape();
    let numeric = |i: usize, loss: &dyn Fn(&MlpParams) -> Result<f64>| -> Result<f64> {
        let mut plus = params.clone();
        plus.flat_mut()[i] += h;
        let mut minus = params.clone();
        minus.flat_mut()[i] -= h;
        Ok((loss(&plus)? - loss(&minus)?) / (2.0 * h))
    };
    let mut report = GradientReport {
        actor: 0.0,
        critic: 0.0,
        parameters: shape.param_count(),
    };
    for i in shape.actor_range() {
        let n = numeric(i, &|p| p.actor_loss(batch, &adv))?;
        report.actor = report.actor.max(relative_error(actor[i], n));
    }
    for i in shape.critic_range() {
        let n = numeric(i, &|p| p.critic_loss(batch))?;
        report.critic = report.critic.max(relative_error(critic[i], n));
    }
    Ok(report)
}

/// A small random network and batch, away from ReLU kinks.
pub fn random_instance(seed: u64) -> (MlpParams, Vec<TrainSample>) {
    let mut rng = seeded_rng(seed);
    loop {
        let shape = MlpShape {
            input: rng.random_range(2..=6),
            hidden: rng.random_range(2..=6),
            outputs: rng.random_range(2..=5),
        };
        let params = MlpParams::new(shape, rng.random());
        let batch: Vec<TrainSample> = (0..rng.random_range(1..=6))
            .map(|_| {
                let obs = (0..shape.input)
                    .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.0..1.0) })
                    .collect();
                let action = rng.random_range(0..shape.outputs);
                let mask = (0..shape.outputs).map(|o| o == action || rng.random_bool(0.7)).collect();
                TrainSample {
                    obs,
                    mask,
                    action,
                    target: rng.random_range(-2.0..2.0),
                }
            })
            .collect();
        let clear = batch
            .iter()
            .all(|s| params.kink_margin(&s.obs).is_ok_and(|m| m > KINK_MARGIN));
        if clear {
            return (params, batch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_the_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_instances_pass() {
        for seed in 0..5 {
            let (p, batch) = random_instance(seed);
            let r = finite_difference_check(&p, &batch, 1e-5).unwrap();
            assert!(r.max() <= 1e-4, "seed {seed}: {r:?}");
        }
    }
}
