//! Exact enumeration of the cross-entropy bound on a finite source and a
//! finite state-dependent channel, used to check the estimator used in
//! training against closed-form information quantities.

use rand::Rng;

use crate::error::{Error, Result};

/// A finite source `p(s)` sent over a channel whose state `h` is known to
/// the receiver. `states[k] = (p(h_k), p(y | s, h_k))` with the transition
/// indexed `[s][y]`.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub prior: Vec<f64>,
    pub states: Vec<(f64, Vec<Vec<f64>>)>,
}

/// A decoder `q(s | y, h)` indexed `[h][y][s]`.
pub type DiscreteDecoder = Vec<Vec<Vec<f64>>>;

const TOL: f64 = 1e-9;

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < TOL
}

impl DiscreteModel {
    pub fn new(prior: Vec<f64>, states: Vec<(f64, Vec<Vec<f64>>)>) -> Result<Self> {
        let model = Self { prior, states };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if !is_distribution(&self.prior) {
            return Err(Error::Config("source prior is not a distribution".into()));
        }
        let weights: Vec<f64> = self.states.iter().map(|s| s.0).collect();
        if !is_distribution(&weights) {
            return Err(Error::Config("state probabilities are not a distribution".into()));
        }
        let outputs = self.outputs();
        for (_, t) in &self.states {
            if t.len() != self.prior.len() || t.iter().any(|row| row.len() != outputs || !is_distribution(row)) {
                return Err(Error::Config("transition rows must be distributions over a shared output set".into()));
            }
        }
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        self.states.first().and_then(|s| s.1.first()).map_or(0, Vec::len)
    }

    /// `H(s)` in nats.
    pub fn source_entropy(&self) -> f64 {
        -self.prior.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    fn output_marginal(&self, state: usize) -> Vec<f64> {
        let t = &self.states[state].1;
        (0..self.outputs())
            .map(|y| self.prior.iter().zip(t).map(|(p, row)| p * row[y]).sum())
            .collect()
    }

    /// `I(s; y | h)` in nats.
    pub fn mutual_information(&self) -> f64 {
        let mut total = 0.0;
        for (k, (ph, t)) in self.states.iter().enumerate() {
            let py = self.output_marginal(k);
            for (ps, row) in self.prior.iter().zip(t) {
                for (y, &pys) in row.iter().enumerate() {
                    if ps * pys > 0.0 {
                        total += ph * ps * pys * (pys / py[y]).ln();
                    }
                }
            }
        }
        total
    }

    /// The exact posterior `p(s | y, h)`; outputs of zero probability get a
    /// uniform row.
    pub fn posterior(&self) -> DiscreteDecoder {
        let n = self.prior.len();
        (0..self.states.len())
            .map(|k| {
                let py = self.output_marginal(k);
                let t = &self.states[k].1;
                (0..self.outputs())
                    .map(|y| {
                        if py[y] > 0.0 {
                            (0..n).map(|s| self.prior[s] * t[s][y] / py[y]).collect()
                        } else {
                            vec![1.0 / n as f64; n]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Expected `-ln q(s | y, h)` under the joint distribution.
    pub fn cross_entropy(&self, decoder: &DiscreteDecoder) -> Result<f64> {
        if decoder.len() != self.states.len()
            || decoder.iter().any(|d| d.len() != self.outputs() || d.iter().any(|q| !is_distribution(q) || q.len() != self.prior.len()))
        {
            return Err(Error::Shape("decoder does not match the model's state, output and source sets".into()));
        }
        let mut total = 0.0;
        for ((ph, t), dec) in self.states.iter().zip(decoder) {
            for (s, (ps, row)) in self.prior.iter().zip(t).enumerate() {
                for (y, &pys) in row.iter().enumerate() {
                    let w = ph * ps * pys;
                    if w > 0.0 {
                        total -= w * dec[y][s].ln();
                    }
                }
            }
        }
        Ok(total)
    }

    /// `I(s; y | h) - (H(s) - CE(q))`, non-negative for every decoder.
    pub fn bound_slack(&self, decoder: &DiscreteDecoder) -> Result<f64> {
        Ok(self.mutual_information() - (self.source_entropy() - self.cross_entropy(decoder)?))
    }
}

fn random_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// A strictly positive random decoder of the given shape.
pub fn random_decoder<R: Rng + ?Sized>(states: usize, outputs: usize, symbols: usize, rng: &mut R) -> DiscreteDecoder {
    (0..states)
        .map(|_| (0..outputs).map(|_| random_distribution(symbols, rng)).collect())
        .collect()
}

/// A random model with `symbols` source letters, `outputs` channel outputs
/// and `states` channel states.
pub fn random_model<R: Rng + ?Sized>(symbols: usize, outputs: usize, states: usize, rng: &mut R) -> DiscreteModel {
    let prior = random_distribution(symbols, rng);
    let weights = random_distribution(states, rng);
    let states = weights
        .into_iter()
        .map(|w| (w, (0..symbols).map(|_| random_distribution(outputs, rng)).collect()))
        .collect();
    DiscreteModel { prior, states }
}
