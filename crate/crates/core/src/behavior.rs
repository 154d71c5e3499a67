//! Empirical behavior policy `π(a | s, t)` and its argmax `π(s, t)`.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{argmax, TimedPolicy};

/// Where a cell's action probabilities came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSource {
    /// Counts at this exact `(s, t)`.
    Observed,
    /// `(s, t)` unseen; counts pooled over all steps at state `s`.
    StateAggregate,
    /// State never visited; uniform over actions.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorDistribution {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `[s][t][a]`
    prob: Vec<f64>,
    /// `[s][t]`
    support: Vec<u64>,
    source: Vec<CellSource>,
}

impl BehaviorDistribution {
    pub fn prob(&self, s: usize, t: usize, a: usize) -> f64 {
        self.prob[(s * self.horizon + t) * self.num_actions + a]
    }

    pub fn probs(&self, s: usize, t: usize) -> &[f64] {
        let start = (s * self.horizon + t) * self.num_actions;
        &self.prob[start..start + self.num_actions]
    }

    /// Number of logged visits to `(s, t)`.
    pub fn support_count(&self, s: usize, t: usize) -> u64 {
        self.support[s * self.horizon + t]
    }

    pub fn source(&self, s: usize, t: usize) -> CellSource {
        self.source[s * self.horizon + t]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Argmax policy, lowest action index on ties.
    pub fn argmax_policy(&self) -> TimedPolicy {
        TimedPolicy::from_fn(self.num_states, self.num_actions, self.horizon, |s, t| {
            argmax(self.probs(s, t).iter().copied()).0
        })
        .expect("dimensions come from a valid dataset")
    }
}

/// Frequencies of each action per `(s, t)`. Unseen `(s, t)` cells fall back to
/// the state's pooled counts, and never-visited states to uniform (logged).
pub fn empirical_behavior(data: &Dataset) -> Result<(BehaviorDistribution, TimedPolicy)> {
    if data.is_empty() {
        return Err(Error::contract("behavior estimation needs a nonempty dataset"));
    }
    let (n, na, horizon) = (data.num_states(), data.num_actions(), data.horizon());
    let mut counts = vec![0u64; n * horizon * na];
    for ep in data.episodes() {
        for (t, step) in ep.steps.iter().enumerate() {
            counts[(step.state * horizon + t) * na + step.action] += 1;
        }
    }

    let mut prob = vec![0.0; n * horizon * na];
    let mut support = vec![0u64; n * horizon];
    let mut source = vec![CellSource::Observed; n * horizon];
    for s in 0..n {
        let mut pooled = vec![0u64; na];
        for t in 0..horizon {
            for a in 0..na {
                pooled[a] += counts[(s * horizon + t) * na + a];
            }
        }
        let pooled_total: u64 = pooled.iter().sum();
        if pooled_total == 0 {
            log::warn!("state {s} never visited; behavior falls back to uniform");
        }
        for t in 0..horizon {
            let cell = &counts[(s * horizon + t) * na..(s * horizon + t + 1) * na];
            let total: u64 = cell.iter().sum();
            let out = &mut prob[(s * horizon + t) * na..(s * horizon + t + 1) * na];
            support[s * horizon + t] = total;
            if total > 0 {
                out.iter_mut()
                    .zip(cell)
                    .for_each(|(p, &c)| *p = c as f64 / total as f64);
            } else if pooled_total > 0 {
                source[s * horizon + t] = CellSource::StateAggregate;
                out.iter_mut()
                    .zip(&pooled)
                    .for_each(|(p, &c)| *p = c as f64 / pooled_total as f64);
            } else {
                source[s * horizon + t] = CellSource::Uniform;
                out.iter_mut().for_each(|p| *p = 1.0 / na as f64);
            }
        }
    }
    let dist = BehaviorDistribution {
        num_states: n,
        num_actions: na,
        horizon,
        prob,
        support,
        source,
    };
    let policy = dist.argmax_policy();
    Ok((dist, policy))
}
