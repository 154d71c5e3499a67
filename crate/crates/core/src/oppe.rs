//! Off-policy policy evaluation.
//!
//! The posterior estimator draws `K` models and values the target policy in
//! each, giving samples from the posterior of the policy value. Two modes:
//!
//! * `Rollout`: one simulated episode per model, accumulating mean rewards.
//! * `ExactDp`: the exact expected return in each model (default; same
//!   posterior functional, less Monte-Carlo noise).
//!
//! Baselines, for a deterministic target `μ` and behavior propensities
//! `π(a|s,t)`, with `ρ_{i,t} = Π_{j≤t} 1{a_ij = μ(s_ij, j)} / π(a_ij | s_ij, j)`:
//!
//! * step IS:  `(1/T) Σ_i Σ_t ρ_{i,t} r_it`
//! * step WIS: `Σ_t (Σ_i ρ_{i,t} r_it) / (Σ_i ρ_{i,t})`
//! * NPM: Monte-Carlo return in the count-based model; NPME averages
//!   independent NPM evaluations.
//!
//! Propensities below [`PROPENSITY_FLOOR`] zero the episode's remaining
//! weights instead of being clipped.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorDistribution;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{exact_policy_value, mean_return_from, TabularMdp, TimedPolicy};
use crate::ml::ml_tables;
use crate::posterior::PosteriorModel;
use crate::rng::{derive_seed, derive_seed2, sample_index, seeded};

pub const PROPENSITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Rollout,
    ExactDp,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rollout" => Ok(EvalMode::Rollout),
            "exact_dp" => Ok(EvalMode::ExactDp),
            other => Err(Error::config("eval.mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueOptions {
    pub num_models: usize,
    pub mode: EvalMode,
    /// Condition on a fixed start state instead of averaging over `P0`.
    pub start_state: Option<usize>,
    /// Central credible mass, e.g. 0.95.
    pub credible_level: f64,
}

impl ValueOptions {
    pub fn new(num_models: usize) -> Self {
        ValueOptions {
            num_models,
            mode: EvalMode::ExactDp,
            start_state: None,
            credible_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePosterior {
    pub samples: Vec<f64>,
    pub point_estimate: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub credible_level: f64,
}

impl ValuePosterior {
    /// Mean plus order-statistic quantiles at `q` and `1 - q`, `q = (1 - level) / 2`.
    pub fn from_samples(samples: Vec<f64>, credible_level: f64) -> Self {
        let tail = (1.0 - credible_level) / 2.0;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let point_estimate = samples.iter().sum::<f64>() / samples.len() as f64;
        ValuePosterior {
            ci_lower: order_statistic(&sorted, tail),
            ci_upper: order_statistic(&sorted, 1.0 - tail),
            point_estimate,
            samples,
            credible_level,
        }
    }

    pub fn median(&self) -> f64 {
        let mut sorted = self.samples.clone();
        sorted.sort_by(f64::total_cmp);
        order_statistic(&sorted, 0.5)
    }

    pub fn std_dev(&self) -> f64 {
        let n = self.samples.len() as f64;
        let m = self.point_estimate;
        (self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }

    pub fn width(&self) -> f64 {
        self.ci_upper - self.ci_lower
    }
}

/// Nearest-rank quantile: the `ceil(q·n)`-th smallest sample.
pub fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// The model list used by [`posterior_value`] and [`compare_policies`] for a
/// given seed. Model `k` uses stream `derive_seed2(seed, k, 0)`.
pub fn evaluation_models(posterior: &PosteriorModel, num_models: usize, seed: u64) -> Vec<TabularMdp> {
    (0..num_models)
        .into_par_iter()
        .map(|k| posterior.sample_mdp(derive_seed2(seed, k as u64, 0)))
        .collect()
}

fn value_in_model(model: &TabularMdp, policy: &TimedPolicy, mode: EvalMode, start: Option<usize>, seed: u64) -> f64 {
    match mode {
        EvalMode::ExactDp => {
            let v = exact_policy_value(model, policy).expect("dimensions checked");
            match start {
                Some(s) => v.get(s, 0),
                None => v.start_value(model.initial()),
            }
        }
        EvalMode::Rollout => {
            let mut rng = seeded(seed);
            let s0 = start.unwrap_or_else(|| sample_index(model.initial(), &mut rng));
            mean_return_from(model, policy, s0, &mut rng)
        }
    }
}

fn check_policy(posterior: &PosteriorModel, policy: &TimedPolicy, start: Option<usize>) -> Result<()> {
    if policy.num_states() != posterior.num_states()
        || policy.num_actions() != posterior.num_actions()
        || policy.horizon() != posterior.horizon()
    {
        return Err(Error::dimension("policy does not match posterior dimensions"));
    }
    if let Some(s) = start {
        if s >= posterior.num_states() {
            return Err(Error::contract(format!("start state {s} out of range")));
        }
    }
    Ok(())
}

/// Posterior samples of the target policy's value.
pub fn posterior_value(
    posterior: &PosteriorModel,
    policy: &TimedPolicy,
    options: &ValueOptions,
    seed: u64,
) -> Result<ValuePosterior> {
    check_policy(posterior, policy, options.start_state)?;
    if options.num_models == 0 {
        return Err(Error::contract("K must be positive"));
    }
    if !(0.0..1.0).contains(&options.credible_level) {
        return Err(Error::contract("credible level must lie in [0, 1)"));
    }
    let samples = (0..options.num_models)
        .into_par_iter()
        .map(|k| {
            let model = posterior.sample_mdp(derive_seed2(seed, k as u64, 0));
            value_in_model(
                &model,
                policy,
                options.mode,
                options.start_state,
                derive_seed2(seed, k as u64, 1),
            )
        })
        .collect();
    Ok(ValuePosterior::from_samples(samples, options.credible_level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    /// Fraction of models in which the first policy is strictly better.
    pub null_prob_estimate: f64,
    pub first: String,
    pub second: String,
    pub num_models: usize,
    pub first_samples: Vec<f64>,
    pub second_samples: Vec<f64>,
}

/// Paired comparison over one shared model list, exact values per model.
pub fn compare_policies(
    posterior: &PosteriorModel,
    first: &TimedPolicy,
    second: &TimedPolicy,
    num_models: usize,
    seed: u64,
) -> Result<PolicyComparison> {
    check_policy(posterior, first, None)?;
    check_policy(posterior, second, None)?;
    if num_models == 0 {
        return Err(Error::contract("K must be positive"));
    }
    let models = evaluation_models(posterior, num_models, seed);
    let (first_samples, second_samples): (Vec<f64>, Vec<f64>) = models
        .par_iter()
        .map(|m| {
            let v1 = exact_policy_value(m, first).expect("checked").start_value(m.initial());
            let v2 = exact_policy_value(m, second).expect("checked").start_value(m.initial());
            (v1, v2)
        })
        .unzip();
    let wins = first_samples.iter().zip(&second_samples).filter(|(a, b)| a > b).count();
    Ok(PolicyComparison {
        null_prob_estimate: wins as f64 / num_models as f64,
        first: "first".into(),
        second: "second".into(),
        num_models,
        first_samples,
        second_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsEstimate {
    pub value: f64,
    /// Episodes whose weights were zeroed by a propensity below the floor.
    pub collapsed_episodes: usize,
    pub warnings: Vec<String>,
}

/// `ρ_{i,t}` for every episode and step.
fn step_weights(
    data: &Dataset,
    behavior: &BehaviorDistribution,
    target: &TimedPolicy,
) -> Result<(Vec<Vec<f64>>, usize)> {
    if behavior.num_states() != data.num_states()
        || behavior.num_actions() != data.num_actions()
        || behavior.horizon() != data.horizon()
        || target.num_states() != data.num_states()
        || target.num_actions() != data.num_actions()
        || target.horizon() != data.horizon()
    {
        return Err(Error::dimension("behavior, target and data dimensions differ"));
    }
    if data.is_empty() {
        return Err(Error::contract("importance sampling needs a nonempty dataset"));
    }
    let mut collapsed = 0;
    let weights = data
        .episodes()
        .iter()
        .map(|ep| {
            let mut rho = 1.0;
            let mut hit_floor = false;
            let w: Vec<f64> = ep
                .steps
                .iter()
                .enumerate()
                .map(|(t, step)| {
                    if rho > 0.0 {
                        let p = behavior.prob(step.state, t, step.action);
                        if p < PROPENSITY_FLOOR {
                            hit_floor = true;
                            rho = 0.0;
                        } else if step.action != target.action(step.state, t) {
                            rho = 0.0;
                        } else {
                            rho /= p;
                        }
                    }
                    rho
                })
                .collect();
            if hit_floor {
                collapsed += 1;
            }
            w
        })
        .collect();
    Ok((weights, collapsed))
}

fn first_dead_step(weights: &[Vec<f64>], horizon: usize) -> Option<usize> {
    (0..horizon).find(|&t| weights.iter().all(|w| w[t] == 0.0))
}

pub fn step_is(data: &Dataset, behavior: &BehaviorDistribution, target: &TimedPolicy) -> Result<IsEstimate> {
    let (weights, collapsed_episodes) = step_weights(data, behavior, target)?;
    let total: f64 = data
        .episodes()
        .iter()
        .zip(&weights)
        .map(|(ep, w)| ep.steps.iter().zip(w).map(|(s, rho)| rho * s.reward).sum::<f64>())
        .sum();
    let mut warnings = Vec::new();
    if collapsed_episodes > 0 {
        warnings.push(format!(
            "{collapsed_episodes} episodes hit a propensity below {PROPENSITY_FLOOR}"
        ));
    }
    if let Some(t) = first_dead_step(&weights, data.horizon()) {
        warnings.push(format!("all importance weights are zero from step {}", t + 1));
    }
    Ok(IsEstimate {
        value: total / data.len() as f64,
        collapsed_episodes,
        warnings,
    })
}

pub fn step_wis(data: &Dataset, behavior: &BehaviorDistribution, target: &TimedPolicy) -> Result<IsEstimate> {
    let (weights, collapsed_episodes) = step_weights(data, behavior, target)?;
    let mut value = 0.0;
    let mut dead_steps = 0;
    for t in 0..data.horizon() {
        let norm: f64 = weights.iter().map(|w| w[t]).sum();
        if norm == 0.0 {
            dead_steps += 1;
            continue;
        }
        let num: f64 = data
            .episodes()
            .iter()
            .zip(&weights)
            .map(|(ep, w)| w[t] * ep.steps[t].reward)
            .sum();
        value += num / norm;
    }
    let mut warnings = Vec::new();
    if collapsed_episodes > 0 {
        warnings.push(format!(
            "{collapsed_episodes} episodes hit a propensity below {PROPENSITY_FLOOR}"
        ));
    }
    if dead_steps > 0 {
        warnings.push(format!("{dead_steps} steps have all-zero weights and contribute 0"));
    }
    Ok(IsEstimate {
        value,
        collapsed_episodes,
        warnings,
    })
}

fn npm_in_model(model: &TabularMdp, target: &TimedPolicy, episodes: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let total: f64 = (0..episodes)
        .map(|_| {
            let s0 = sample_index(model.initial(), &mut rng);
            mean_return_from(model, target, s0, &mut rng)
        })
        .sum();
    total / episodes as f64
}

fn check_npm(data: &Dataset, target: &TimedPolicy, episodes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::contract("NPM needs a nonempty dataset"));
    }
    if episodes == 0 {
        return Err(Error::contract("NPM needs at least one evaluation episode"));
    }
    if target.num_states() != data.num_states()
        || target.num_actions() != data.num_actions()
        || target.horizon() != data.horizon()
    {
        return Err(Error::dimension("target policy does not match data"));
    }
    Ok(())
}

/// Monte-Carlo value of `target` in the count-based model of `data`.
pub fn npm_value(data: &Dataset, target: &TimedPolicy, eval_episodes: usize, seed: u64) -> Result<f64> {
    check_npm(data, target, eval_episodes)?;
    let ml = ml_tables(data);
    Ok(npm_in_model(&ml.model, target, eval_episodes, derive_seed(seed, 0)))
}

/// Mean of `models` NPM evaluations; member `i` uses stream `derive_seed(seed, i)`.
pub fn npme_value(data: &Dataset, target: &TimedPolicy, eval_episodes: usize, models: usize, seed: u64) -> Result<f64> {
    check_npm(data, target, eval_episodes)?;
    if models == 0 {
        return Err(Error::contract("NPME needs at least one member"));
    }
    let ml = ml_tables(data);
    let total: f64 = (0..models as u64)
        .into_par_iter()
        .map(|i| npm_in_model(&ml.model, target, eval_episodes, derive_seed(seed, i)))
        .sum();
    Ok(total / models as f64)
}

/// Mean and standard error of realized returns over simulated episodes.
pub fn monte_carlo_return(env: &TabularMdp, policy: &TimedPolicy, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    policy.check_matches(env)?;
    if episodes < 2 {
        return Err(Error::contract("need at least two episodes for a standard error"));
    }
    let returns: Vec<f64> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, i));
            crate::mdp::rollout_with(env, true, &mut rng, |s, t, _: &mut _| policy.action(s, t)).total_reward()
        })
        .collect();
    Ok(mean_and_se(&returns))
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Evaluation report written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub estimator_name: String,
    pub point: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    #[serde(rename = "K")]
    pub num_models: Option<usize>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn from_posterior(name: &str, vp: &ValuePosterior, seed: u64) -> Self {
        EvaluationReport {
            estimator_name: name.to_string(),
            point: vp.point_estimate,
            ci_lower: Some(vp.ci_lower),
            ci_upper: Some(vp.ci_upper),
            num_models: Some(vp.samples.len()),
            seed,
            warnings: Vec::new(),
        }
    }

    pub fn point_only(name: &str, point: f64, seed: u64, warnings: Vec<String>) -> Self {
        EvaluationReport {
            estimator_name: name.to_string(),
            point,
            ci_lower: None,
            ci_upper: None,
            num_models: None,
            seed,
            warnings,
        }
    }
}

/// Raw samples as `k,value` CSV.
pub fn write_samples_csv<W: Write>(out: W, samples: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "value"])?;
    for (k, v) in samples.iter().enumerate() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
