//! Expert-supervised policy learning.
//!
//! `K` models are drawn from the posterior once. Backward in time, every model
//! proposes its greedy action. The first half of the ensemble (`I₁`) elects a
//! proposal by majority vote, and the second half (`I₂`) estimates the posterior
//! probability that the proposal is *worse* than the behavior action. Only
//! when that probability falls below `alpha` do the models keep their own
//! greedy action; otherwise every model takes the behavior action. Each model
//! propagates its own gated choice as its continuation value.
//!
//! The emitted policy is the gated policy of one `I₁` model that agrees with
//! the gated majority at every `(s, t)` when such a model exists. Otherwise
//! the model that agrees most often is used.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax, TabularMdp, TimedPolicy, ValueTable};
use crate::posterior::PosteriorModel;
use crate::rng::{derive_seed, seeded};

/// `Q^{(k)}(s, a)` for every model at one stage, with the `I₁`/`I₂` split.
#[derive(Debug, Clone, PartialEq)]
pub struct QEnsemble {
    num_models: usize,
    num_states: usize,
    num_actions: usize,
    /// `[k][s][a]`
    q: Vec<f64>,
}

impl QEnsemble {
    /// Hand-built ensemble from `q[k][s][a]`.
    pub fn new(q: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let num_models = q.len();
        let num_states = q.first().map_or(0, Vec::len);
        let num_actions = q.first().and_then(|m| m.first()).map_or(0, Vec::len);
        if num_models == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::contract("empty Q ensemble"));
        }
        if q.iter()
            .any(|m| m.len() != num_states || m.iter().any(|r| r.len() != num_actions))
        {
            return Err(Error::dimension("ragged Q ensemble"));
        }
        Ok(QEnsemble {
            num_models,
            num_states,
            num_actions,
            q: q.into_iter().flatten().flatten().collect(),
        })
    }

    /// One backup per model against that model's own continuation values.
    pub fn at_stage(models: &[TabularMdp], next_values: &[&[f64]]) -> Self {
        let num_states = models[0].num_states();
        let num_actions = models[0].num_actions();
        let q = models
            .par_iter()
            .zip(next_values.par_iter())
            .flat_map_iter(|(m, next)| {
                (0..num_states).flat_map(move |s| (0..num_actions).map(move |a| m.backup(s, a, next)))
            })
            .collect();
        QEnsemble {
            num_models: models.len(),
            num_states,
            num_actions,
            q,
        }
    }

    #[inline]
    pub fn q(&self, k: usize, s: usize, a: usize) -> f64 {
        self.q[(k * self.num_states + s) * self.num_actions + a]
    }

    pub fn q_row(&self, k: usize, s: usize) -> &[f64] {
        let start = (k * self.num_states + s) * self.num_actions;
        &self.q[start..start + self.num_actions]
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    /// `ceil(K / 2)`: models `0..split` vote, `split..K` test.
    pub fn split_point(&self) -> usize {
        split_point(self.num_models)
    }

    pub fn voting_set(&self) -> std::ops::Range<usize> {
        0..self.split_point()
    }

    pub fn testing_set(&self) -> std::ops::Range<usize> {
        self.split_point()..self.num_models
    }

    /// Greedy action of model `k` at `s`, lowest index on ties.
    pub fn greedy(&self, k: usize, s: usize) -> usize {
        argmax(self.q_row(k, s).iter().copied()).0
    }
}

pub fn split_point(k: usize) -> usize {
    k.div_ceil(2)
}

/// Fraction of `I₂` models in which the proposal is strictly worse than the
/// behavior action. Equal Q values do not count toward the null.
pub fn estimate_null_probability(ensemble: &QEnsemble, proposal: usize, behavior: usize, s: usize) -> Result<f64> {
    let testing = ensemble.testing_set();
    if testing.is_empty() {
        return Err(Error::contract("testing set I2 is empty"));
    }
    if s >= ensemble.num_states || proposal >= ensemble.num_actions || behavior >= ensemble.num_actions {
        return Err(Error::contract(format!(
            "(s={s}, proposal={proposal}, behavior={behavior}) out of range"
        )));
    }
    let size = testing.len();
    let hits = testing
        .filter(|&k| ensemble.q(k, s, proposal) < ensemble.q(k, s, behavior))
        .count();
    Ok(hits as f64 / size as f64)
}

/// Most frequent action; ties go to the lowest index. `None` when empty.
pub fn majority_vote(candidates: &[usize]) -> Option<usize> {
    let max = *candidates.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &a in candidates {
        counts[a] += 1;
    }
    let (best, _) = argmax(counts.iter().map(|&c| c as f64));
    Some(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsrlConfig {
    /// Risk-aversion level in `[0, 1]`.
    pub alpha: f64,
    /// Posterior ensemble size, at least 2.
    pub num_models: usize,
    pub seed: u64,
}

impl EsrlConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::contract(format!("alpha={} outside [0, 1]", self.alpha)));
        }
        if self.num_models < 2 {
            return Err(Error::contract(format!("K={} must be at least 2", self.num_models)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsrlResult {
    pub alpha: f64,
    /// Gated policy of the selected model, `μ^α_{k^MV}`.
    pub policy: TimedPolicy,
    /// Ungated greedy policy of the selected model, `μ_{k^MV}`.
    pub ungated_policy: TimedPolicy,
    /// Gated policy of every model.
    pub model_policies: Vec<TimedPolicy>,
    /// Majority-vote proposal from `I₁` at every `(s, t)`.
    pub proposal: TimedPolicy,
    /// `[s][t]`
    pub null_prob: Vec<Vec<f64>>,
    /// `[s][t]`; true exactly where `null_prob < alpha`.
    pub deviated: Vec<Vec<bool>>,
    /// Selected model index (0-based).
    pub mv_index: usize,
    /// Models of `I₁` agreeing with the gated majority everywhere.
    pub mv_set: Vec<usize>,
    /// Per-model value tables under the gated policies.
    pub values: Vec<ValueTable>,
    /// Cells whose null probability lies within `1/sqrt(|I₂|)` of alpha.
    pub borderline_cells: usize,
}

impl EsrlResult {
    /// `Q^{(k)}(s, a)` samples at `(s, t)` under the gated continuation,
    /// as `[a][k]`. `models` must be the ensemble the result was trained on.
    pub fn q_samples(&self, models: &[TabularMdp], s: usize, t: usize) -> Result<Vec<Vec<f64>>> {
        if models.len() != self.values.len() {
            return Err(Error::dimension("model list does not match the trained ensemble"));
        }
        let horizon = self.policy.horizon();
        if s >= self.policy.num_states() || t >= horizon {
            return Err(Error::contract(format!("cell (s={s}, t={t}) out of range")));
        }
        let na = self.policy.num_actions();
        Ok((0..na)
            .map(|a| {
                models
                    .iter()
                    .zip(&self.values)
                    .map(|(m, v)| m.backup(s, a, v.stage(t + 1)))
                    .collect()
            })
            .collect())
    }

    pub fn num_deviations(&self) -> usize {
        self.deviated.iter().flatten().filter(|d| **d).count()
    }

    pub fn export(&self) -> PolicyFile {
        PolicyFile::from_policy(&self.policy)
            .with_alpha(self.alpha)
            .with_tests(self.deviated.clone(), self.null_prob.clone())
    }
}

/// Samples `K` models and runs the gated backward induction.
pub fn train_esrl(posterior: &PosteriorModel, behavior: &TimedPolicy, config: &EsrlConfig) -> Result<EsrlResult> {
    config.validate()?;
    let models = posterior.sample_ensemble(config.num_models, derive_seed(config.seed, 0))?;
    train_esrl_with_models(&models, behavior, config.alpha, derive_seed(config.seed, 1))
}

/// Gated backward induction over an explicit model list. `seed` only drives
/// the uniform choice within the agreement set.
pub fn train_esrl_with_models(
    models: &[TabularMdp],
    behavior: &TimedPolicy,
    alpha: f64,
    seed: u64,
) -> Result<EsrlResult> {
    EsrlConfig {
        alpha,
        num_models: models.len(),
        seed,
    }
    .validate()?;
    for m in models {
        behavior.check_matches(m)?;
    }
    let k_total = models.len();
    let (n, horizon) = (behavior.num_states(), behavior.horizon());
    let split = split_point(k_total);
    let testing_size = k_total - split;
    let border = 1.0 / (testing_size as f64).sqrt();

    let mut values: Vec<ValueTable> = (0..k_total).map(|_| ValueTable::zeros(n, horizon)).collect();
    let mut gated: Vec<TimedPolicy> = (0..k_total).map(|_| behavior.clone()).collect();
    let mut greedy: Vec<TimedPolicy> = gated.clone();
    let mut proposal = behavior.clone();
    let mut null_prob = vec![vec![0.0; horizon]; n];
    let mut deviated = vec![vec![false; horizon]; n];
    let mut agreement = vec![0usize; split];
    let mut borderline_cells = 0;

    for t in (0..horizon).rev() {
        let next: Vec<&[f64]> = values.iter().map(|v| v.stage(t + 1)).collect();
        let ensemble = QEnsemble::at_stage(models, &next);
        let mut stage_values = vec![vec![0.0; n]; k_total];
        for s in 0..n {
            let behavior_action = behavior.action(s, t);
            let choices: Vec<usize> = (0..k_total).map(|k| ensemble.greedy(k, s)).collect();
            let proposed = majority_vote(&choices[..split]).expect("I1 is nonempty");
            let p_null = estimate_null_probability(&ensemble, proposed, behavior_action, s)?;
            let deviate = p_null < alpha;
            if (p_null - alpha).abs() < border {
                borderline_cells += 1;
            }

            proposal.set(s, t, proposed);
            null_prob[s][t] = p_null;
            deviated[s][t] = deviate;
            for k in 0..k_total {
                let chosen = if deviate { choices[k] } else { behavior_action };
                greedy[k].set(s, t, choices[k]);
                gated[k].set(s, t, chosen);
                stage_values[k][s] = ensemble.q(k, s, chosen);
            }

            let gated_votes: Vec<usize> = (0..split).map(|k| gated[k].action(s, t)).collect();
            let gated_majority = majority_vote(&gated_votes).expect("I1 is nonempty");
            for (k, count) in agreement.iter_mut().enumerate() {
                if gated[k].action(s, t) == gated_majority {
                    *count += 1;
                }
            }
        }
        for (v, stage) in values.iter_mut().zip(stage_values) {
            v.stage_mut(t).copy_from_slice(&stage);
        }
    }

    if borderline_cells > 0 {
        log::warn!(
            "{borderline_cells} cells have null probability within {border:.3} of alpha={alpha}; \
             the gate is sensitive to Monte-Carlo error there"
        );
    }

    let cells = n * horizon;
    let mv_set: Vec<usize> = (0..split).filter(|&k| agreement[k] == cells).collect();
    let mv_index = if mv_set.is_empty() {
        argmax(agreement.iter().map(|&c| c as f64)).0
    } else {
        mv_set[seeded(seed).random_range(0..mv_set.len())]
    };

    Ok(EsrlResult {
        alpha,
        policy: gated[mv_index].clone(),
        ungated_policy: greedy[mv_index].clone(),
        model_policies: gated,
        proposal,
        null_prob,
        deviated,
        mv_index,
        mv_set,
        values,
        borderline_cells,
    })
}

/// Policy table on disk:
/// `{"S":..,"A":..,"tau":..,"alpha":..,"action":[[..]],"deviated":[[..]],"null_prob":[[..]]}`.
/// Rows are states, columns steps `1..=tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "tau")]
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub action: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviated: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_prob: Option<Vec<Vec<f64>>>,
}

impl PolicyFile {
    pub fn from_policy(policy: &TimedPolicy) -> Self {
        PolicyFile {
            num_states: policy.num_states(),
            num_actions: policy.num_actions(),
            horizon: policy.horizon(),
            alpha: None,
            action: policy.to_table(),
            deviated: None,
            null_prob: None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_tests(mut self, deviated: Vec<Vec<bool>>, null_prob: Vec<Vec<f64>>) -> Self {
        self.deviated = Some(deviated);
        self.null_prob = Some(null_prob);
        self
    }

    pub fn to_policy(&self) -> Result<TimedPolicy> {
        if self.action.len() != self.num_states || self.action.iter().any(|r| r.len() != self.horizon) {
            return Err(Error::data("policy table does not match declared S and tau"));
        }
        TimedPolicy::from_table(self.num_actions, self.action.clone()).map_err(|e| Error::data(e.to_string()))
    }
}
