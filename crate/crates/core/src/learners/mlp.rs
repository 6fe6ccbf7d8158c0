//! One-hidden-layer actor and critic networks with hand-written backprop.
//!
//! All parameters live in one flat vector so optimisers, finite-difference
//! checks and the on-disk format can treat them uniformly. Layout:
//!
//! ```text
//! actor:  w1 [input × hidden]  b1 [hidden]  w2 [outputs × hidden]  b2 [outputs]
//! critic: w1 [input × hidden]  b1 [hidden]  w2 [hidden]            b2 [1]
//! ```
//!
//! `w1` is stored input-major (`w1[i * hidden + j]`) so a sparse observation
//! only touches the rows of its active features.

use std::borrow::Borrow;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::smdp::{seeded_rng, SimRng};

/// Largest gradient magnitude accepted before an update is refused.
pub const GRADIENT_GUARD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    outputs: usize,
}

impl MlpShape {
    fn actor(&self) -> Dense {
        let w1 = 0;
        let b1 = w1 + self.input * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        Dense {
            w1,
            b1,
            w2,
            b2,
            outputs: self.outputs,
        }
    }

    fn critic(&self) -> Dense {
        let a = self.actor();
        let w1 = a.b2 + self.outputs;
        let b1 = w1 + self.input * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        Dense {
            w1,
            b1,
            w2,
            b2,
            outputs: 1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.critic().b2 + 1
    }

    /// Range of the actor's parameters in the flat vector.
    pub fn actor_range(&self) -> Range<usize> {
        0..self.critic().w1
    }

    pub fn critic_range(&self) -> Range<usize> {
        self.critic().w1..self.param_count()
    }
}

/// Output of a forward pass, with the activations backprop needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub probs: Vec<f64>,
    pub value: f64,
    actor_hidden: Vec<f64>,
    critic_hidden: Vec<f64>,
    active: Vec<(usize, f64)>,
}

/// One training example: the taken action and its return-to-go target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub obs: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    shape: MlpShape,
    seed: u64,
    data: Vec<f64>,
}

impl MlpParams {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(shape: MlpShape, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut data = vec![0.0; shape.param_count()];
        let mut fill = |range: Range<usize>, fan_in: usize, rng: &mut SimRng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in &mut data[range] {
                *x = rng.random_range(-bound..bound);
            }
        };
        for net in [shape.actor(), shape.critic()] {
            fill(net.w1..net.b1, shape.input, &mut rng);
            fill(net.b1..net.w2, shape.input, &mut rng);
            fill(net.w2..net.b2 + net.outputs, shape.hidden, &mut rng);
        }
        Self { shape, seed, data }
    }

    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            shape,
            seed: 0,
            data: vec![0.0; shape.param_count()],
        }
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Adds `c` to every actor output bias.
    pub fn shift_actor_bias(&mut self, c: f64) {
        let a = self.shape.actor();
        for b in &mut self.data[a.b2..a.b2 + a.outputs] {
            *b += c;
        }
    }

    fn check_input(&self, obs: &[f64], mask: Option<&[bool]>) -> Result<()> {
        if obs.len() != self.shape.input {
            return Err(Error::ShapeMismatch {
                expected: self.shape.input,
                got: obs.len(),
            });
        }
        if let Some(m) = mask {
            if m.len() != self.shape.outputs {
                return Err(Error::ShapeMismatch {
                    expected: self.shape.outputs,
                    got: m.len(),
                });
            }
        }
        Ok(())
    }

    fn hidden(&self, net: &Dense, active: &[(usize, f64)]) -> Vec<f64> {
        let h = self.shape.hidden;
        let mut out = self.data[net.b1..net.b1 + h].to_vec();
        for &(i, x) in active {
            let row = &self.data[net.w1 + i * h..net.w1 + (i + 1) * h];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        for o in &mut out {
            *o = o.max(0.0);
        }
        out
    }

    fn head(&self, net: &Dense, hidden: &[f64], o: usize) -> f64 {
        let h = self.shape.hidden;
        let row = &self.data[net.w2 + o * h..net.w2 + (o + 1) * h];
        self.data[net.b2 + o] + row.iter().zip(hidden).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Smallest |pre-activation| over both hidden layers; the distance to a ReLU kink.
    pub(crate) fn kink_margin(&self, obs: &[f64]) -> Result<f64> {
        self.check_input(obs, None)?;
        let h = self.shape.hidden;
        let mut margin = f64::INFINITY;
        for net in [self.shape.actor(), self.shape.critic()] {
            for j in 0..h {
                let z = self.data[net.b1 + j]
                    + obs.iter().enumerate().map(|(i, x)| x * self.data[net.w1 + i * h + j]).sum::<f64>();
                margin = margin.min(z.abs());
            }
        }
        Ok(margin)
    }

    /// Action probabilities (masked entries get exactly 0) and state value.
    pub fn forward(&self, obs: &[f64], mask: Option<&[bool]>) -> Result<Forward> {
        self.check_input(obs, mask)?;
        let active: Vec<(usize, f64)> = obs
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, &x)| (i, x))
            .collect();
        let actor = self.shape.actor();
        let critic = self.shape.critic();
        let actor_hidden = self.hidden(&actor, &active);
        let critic_hidden = self.hidden(&critic, &active);
        let allowed = |o: usize| mask.is_none_or(|m| m[o]);
        let logits: Vec<f64> = (0..self.shape.outputs)
            .map(|o| self.head(&actor, &actor_hidden, o))
            .collect();
        let max = (0..self.shape.outputs)
            .filter(|&o| allowed(o))
            .map(|o| logits[o])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = (0..self.shape.outputs)
            .map(|o| if allowed(o) { (logits[o] - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        let value = self.head(&critic, &critic_hidden, 0);
        Ok(Forward {
            probs,
            value,
            actor_hidden,
            critic_hidden,
            active,
        })
    }

    /// `target − V(s)` for every sample, computed with the current critic.
    pub fn advantages<B: Borrow<TrainSample>>(&self, batch: &[B]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|s| {
                let s = s.borrow();
                Ok(s.target - self.forward(&s.obs, Some(&s.mask))?.value)
            })
            .collect()
    }

    /// `−mean(log π(a|s) · Â)` with the advantages held fixed.
    pub fn actor_loss<B: Borrow<TrainSample>>(&self, batch: &[B], advantages: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (s, adv) in batch.iter().zip(advantages) {
            let s = s.borrow();
            let f = self.forward(&s.obs, Some(&s.mask))?;
            total -= f.probs[s.action].ln() * adv;
        }
        Ok(total / batch.len() as f64)
    }

    /// `mean((target − V(s))²)`.
    pub fn critic_loss<B: Borrow<TrainSample>>(&self, batch: &[B]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let s = s.borrow();
            let v = self.forward(&s.obs, Some(&s.mask))?.value;
            total += (s.target - v).powi(2);
        }
        Ok(total / batch.len() as f64)
    }

    fn backprop_hidden(&self, net: &Dense, f_hidden: &[f64], active: &[(usize, f64)], dh: &mut [f64], grad: &mut [f64]) {
        let h = self.shape.hidden;
        for (d, &a) in dh.iter_mut().zip(f_hidden) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        for (g, d) in grad[net.b1..net.b1 + h].iter_mut().zip(dh.iter()) {
            *g += d;
        }
        for &(i, x) in active {
            let row = &mut grad[net.w1 + i * h..net.w1 + (i + 1) * h];
            for (g, d) in row.iter_mut().zip(dh.iter()) {
                *g += d * x;
            }
        }
    }

    /// Analytic gradient of [`Self::actor_loss`]; zero over critic parameters.
    pub fn actor_gradient<B: Borrow<TrainSample>>(&self, batch: &[B], advantages: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.data.len()];
        let n = batch.len() as f64;
        let net = self.shape.actor();
        let h = self.shape.hidden;
        for (s, adv) in batch.iter().zip(advantages) {
            let s = s.borrow();
            let f = self.forward(&s.obs, Some(&s.mask))?;
            let mut dh = vec![0.0; h];
            for o in 0..self.shape.outputs {
                if !s.mask[o] {
                    continue;
                }
                let indicator = if o == s.action { 1.0 } else { 0.0 };
                let dlogit = (f.probs[o] - indicator) * adv / n;
                if dlogit == 0.0 {
                    continue;
                }
                grad[net.b2 + o] += dlogit;
                let w2 = net.w2 + o * h;
                for j in 0..h {
                    grad[w2 + j] += dlogit * f.actor_hidden[j];
                    dh[j] += dlogit * self.data[w2 + j];
                }
            }
            self.backprop_hidden(&net, &f.actor_hidden, &f.active, &mut dh, &mut grad);
        }
        Ok(grad)
    }

    /// Analytic gradient of [`Self::critic_loss`]; zero over actor parameters.
    pub fn critic_gradient<B: Borrow<TrainSample>>(&self, batch: &[B]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.data.len()];
        let n = batch.len() as f64;
        let net = self.shape.critic();
        let h = self.shape.hidden;
        for s in batch {
            let s = s.borrow();
            let f = self.forward(&s.obs, Some(&s.mask))?;
            let dv = 2.0 * (f.value - s.target) / n;
            grad[net.b2] += dv;
            let mut dh = vec![0.0; h];
            for j in 0..h {
                grad[net.w2 + j] += dv * f.critic_hidden[j];
                dh[j] = dv * self.data[net.w2 + j];
            }
            self.backprop_hidden(&net, &f.critic_hidden, &f.active, &mut dh, &mut grad);
        }
        Ok(grad)
    }

    /// Text format: a header line followed by one parameter per line.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "mlp input={} hidden={} outputs={} seed={} count={}",
            self.shape.input,
            self.shape.hidden,
            self.shape.outputs,
            self.seed,
            self.data.len()
        )?;
        for x in &self.data {
            writeln!(w, "{x}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header".into(),
        })??;
        Self::load_body(&header, lines)
    }

    pub(crate) fn load_body<I>(header: &str, lines: I) -> Result<Self>
    where
        I: Iterator<Item = std::io::Result<String>>,
    {
        let fields = parse_header(header, "mlp")?;
        let get = |key: &str| -> Result<u64> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("header lacks `{key}`"),
                })
        };
        let shape = MlpShape {
            input: get("input")? as usize,
            hidden: get("hidden")? as usize,
            outputs: get("outputs")? as usize,
        };
        let count = get("count")? as usize;
        if count != shape.param_count() {
            return Err(Error::Parse {
                line: 1,
                message: format!("count {count} does not match shape ({})", shape.param_count()),
            });
        }
        let mut data = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: f64 = line.trim().parse().map_err(|_| Error::Parse {
                line: i + 2,
                message: format!("not a number: `{line}`"),
            })?;
            data.push(v);
        }
        if data.len() != count {
            return Err(Error::Parse {
                line: data.len() + 1,
                message: format!("expected {count} parameters, found {}", data.len()),
            });
        }
        Ok(Self {
            shape,
            seed: get("seed")?,
            data,
        })
    }
}

/// Parses `kind key=value ...` where every value is an unsigned integer.
pub(crate) fn parse_header(header: &str, kind: &str) -> Result<Vec<(String, u64)>> {
    let mut parts = header.split_whitespace();
    if parts.next() != Some(kind) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `{kind}` header"),
        });
    }
    parts
        .map(|p| {
            let (k, v) = p.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("malformed header field `{p}`"),
            })?;
            let v = v.parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("non-integer header value `{p}`"),
            })?;
            Ok((k.to_string(), v))
        })
        .collect()
}

/// Returns the first gradient entry that is non-finite or above the guard.
pub fn check_gradient(grad: &[f64]) -> Result<()> {
    match grad.iter().find(|g| !g.is_finite() || g.abs() > GRADIENT_GUARD) {
        Some(&value) => Err(Error::NonFiniteGradient { value }),
        None => Ok(()),
    }
}
