//! Confidence-set membership and empirical regret.
//!
//! The confidence set around the count-based tables holds every model whose
//! transition rows and mean rewards lie within
//! `β(s,a) = sqrt(8·S·T·ln(2·S·A·T)) / max(1, N_T(s,a))` of them, with the
//! transition distance measured in L1 and `T` the number of episodes.
//!
//! Regret compares the learned gated policy with an oracle gated policy under
//! the true model. The oracle proposes the true model's greedy action and
//! gates it with null probabilities from a reference ensemble `20·K` strong
//! drawn from the same posterior.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::empirical_behavior;
use crate::dataset::Dataset;
use crate::env::{generate_dataset, BehaviorSpec};
use crate::error::{Error, Result};
use crate::esrl::{train_esrl, EsrlConfig};
use crate::mdp::{argmax, exact_policy_value, TabularMdp, TimedPolicy};
use crate::ml::{ml_tables, MlTables};
use crate::oppe::mean_and_se;
use crate::posterior::{InitialMode, PosteriorModel};
use crate::rng::{derive_seed, derive_seed2};

pub const REFERENCE_FACTOR: usize = 20;

pub fn confidence_radius(num_states: usize, num_actions: usize, episodes: usize, visits: u64) -> f64 {
    let (s, a, t) = (num_states as f64, num_actions as f64, episodes as f64);
    (8.0 * s * t * (2.0 * s * a * t).ln()).sqrt() / (visits.max(1) as f64)
}

/// Constraint slack of one candidate: distance minus radius per `(s, a)`.
/// Positive entries are violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCheck {
    pub member: bool,
    /// `[s][a]`
    pub transition_excess: Vec<Vec<f64>>,
    /// `[s][a]`
    pub reward_excess: Vec<Vec<f64>>,
    pub violations: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct ConfidenceSetReport {
    pub episodes: usize,
    /// `[s][a]`
    pub beta: Vec<Vec<f64>>,
    pub ml: MlTables,
    pub candidates: Vec<CandidateCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub s: usize,
    pub a: usize,
    #[serde(rename = "N_T")]
    pub visits: u64,
    pub beta: f64,
    /// Largest slack over all candidates and both constraints; empty without candidates.
    pub worst_violation: Option<f64>,
}

impl ConfidenceSetReport {
    pub fn violation_count(&self) -> usize {
        self.candidates.iter().map(|c| c.violations.len()).sum()
    }

    pub fn rows(&self) -> Vec<ConfidenceRow> {
        let mut rows = Vec::new();
        for (s, betas) in self.beta.iter().enumerate() {
            for (a, &beta) in betas.iter().enumerate() {
                let worst = self
                    .candidates
                    .iter()
                    .map(|c| c.transition_excess[s][a].max(c.reward_excess[s][a]))
                    .reduce(f64::max);
                rows.push(ConfidenceRow {
                    s,
                    a,
                    visits: self.ml.stats.visits(s, a),
                    beta,
                    worst_violation: worst,
                });
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn confidence_set_report(data: &Dataset, candidates: &[TabularMdp]) -> Result<ConfidenceSetReport> {
    if data.is_empty() {
        return Err(Error::contract("confidence set needs a nonempty dataset"));
    }
    let (n, na) = (data.num_states(), data.num_actions());
    for c in candidates {
        if c.num_states() != n || c.num_actions() != na {
            return Err(Error::dimension("candidate model does not match data"));
        }
    }
    let ml = ml_tables(data);
    let beta: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..na)
                .map(|a| confidence_radius(n, na, data.len(), ml.stats.visits(s, a)))
                .collect()
        })
        .collect();
    let checks = candidates
        .iter()
        .map(|c| {
            let mut transition_excess = vec![vec![0.0; na]; n];
            let mut reward_excess = vec![vec![0.0; na]; n];
            let mut violations = Vec::new();
            for s in 0..n {
                for a in 0..na {
                    let l1: f64 = ml
                        .model
                        .row(a, s)
                        .iter()
                        .zip(c.row(a, s))
                        .map(|(p, q)| (p - q).abs())
                        .sum();
                    let dr = (ml.model.reward(s, a) - c.reward(s, a)).abs();
                    transition_excess[s][a] = l1 - beta[s][a];
                    reward_excess[s][a] = dr - beta[s][a];
                    if l1 > beta[s][a] || dr > beta[s][a] {
                        violations.push((s, a));
                    }
                }
            }
            CandidateCheck {
                member: violations.is_empty(),
                transition_excess,
                reward_excess,
                violations,
            }
        })
        .collect();
    Ok(ConfidenceSetReport {
        episodes: data.len(),
        beta,
        ml,
        candidates: checks,
    })
}

/// Ensemble size as a function of the number of episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KRule {
    Fixed {
        k: usize,
    },
    /// `max(min, factor·T)`
    Linear {
        factor: f64,
        min: usize,
    },
}

impl KRule {
    pub fn models_for(&self, episodes: usize) -> usize {
        match *self {
            KRule::Fixed { k } => k,
            KRule::Linear { factor, min } => ((factor * episodes as f64).ceil() as usize).max(min),
        }
    }
}

/// Oracle gated policy: true-model greedy proposals, gated by null
/// probabilities from `reference`. Returns the policy and the number of cells
/// whose reference null probability lies within `1/sqrt(K_ref)` of alpha.
pub fn oracle_gated_policy(
    true_env: &TabularMdp,
    reference: &[TabularMdp],
    behavior: &TimedPolicy,
    alpha: f64,
) -> Result<(TimedPolicy, usize)> {
    behavior.check_matches(true_env)?;
    if reference.is_empty() {
        return Err(Error::contract("reference ensemble is empty"));
    }
    for m in reference {
        behavior.check_matches(m)?;
    }
    let (n, na, horizon) = (true_env.num_states(), true_env.num_actions(), true_env.horizon());
    let border = 1.0 / (reference.len() as f64).sqrt();
    let mut policy = behavior.clone();
    let mut borderline = 0;
    let mut v_true = vec![0.0; n];
    let mut v_ref = vec![vec![0.0; n]; reference.len()];
    for t in (0..horizon).rev() {
        let mut next_true = vec![0.0; n];
        let mut next_ref = vec![vec![0.0; n]; reference.len()];
        for s in 0..n {
            let pi = behavior.action(s, t);
            let (best, _) = argmax((0..na).map(|a| true_env.backup(s, a, &v_true)));
            let worse = reference
                .iter()
                .zip(&v_ref)
                .filter(|(m, v)| m.backup(s, best, v) < m.backup(s, pi, v))
                .count();
            let p_null = worse as f64 / reference.len() as f64;
            if (p_null - alpha).abs() < border {
                borderline += 1;
            }
            let chosen = if p_null < alpha { best } else { pi };
            policy.set(s, t, chosen);
            next_true[s] = true_env.backup(s, chosen, &v_true);
            for ((m, v), nv) in reference.iter().zip(&v_ref).zip(next_ref.iter_mut()) {
                nv[s] = m.backup(s, chosen, v);
            }
        }
        v_true = next_true;
        v_ref = next_ref;
    }
    Ok((policy, borderline))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretConfig {
    pub epsilon: f64,
    pub episode_grid: Vec<usize>,
    pub alpha: f64,
    pub k_rule: KRule,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretEstimate {
    #[serde(rename = "T")]
    pub episodes: usize,
    #[serde(rename = "K")]
    pub num_models: usize,
    pub alpha: f64,
    /// Per-replication `Δ̂ = Σ_s P0(s)(V_oracle(s) − V_learned(s))` in the true model.
    pub samples: Vec<f64>,
    pub mean_regret: f64,
    pub se: f64,
    /// `T · mean_regret`
    pub cumulative: f64,
    pub cumulative_se: f64,
    /// Mean count of oracle cells whose gate is within reference Monte-Carlo error.
    pub oracle_borderline_cells: f64,
}

/// One replication: returns `(Δ̂, oracle borderline cells)`.
fn regret_replication(
    true_env: &TabularMdp,
    spec: &BehaviorSpec,
    episodes: usize,
    alpha: f64,
    k: usize,
    seed: u64,
) -> Result<(f64, usize)> {
    let data = generate_dataset(true_env, spec, episodes, derive_seed(seed, 0))?;
    let (n, na, horizon) = (true_env.num_states(), true_env.num_actions(), true_env.horizon());
    let posterior =
        PosteriorModel::weak(n, na, horizon, InitialMode::Known(true_env.initial().to_vec()))?.fit(&data)?;
    let (_, behavior) = empirical_behavior(&data)?;
    let learned = train_esrl(
        &posterior,
        &behavior,
        &EsrlConfig {
            alpha,
            num_models: k,
            seed: derive_seed(seed, 1),
        },
    )?;
    let reference = posterior.sample_ensemble(REFERENCE_FACTOR * k, derive_seed(seed, 2))?;
    let (oracle, borderline) = oracle_gated_policy(true_env, &reference, &behavior, alpha)?;
    let p0 = true_env.initial();
    let v_oracle = exact_policy_value(true_env, &oracle)?.start_value(p0);
    let v_learned = exact_policy_value(true_env, &learned.policy)?.start_value(p0);
    Ok((v_oracle - v_learned, borderline))
}

/// Regret of the learned gated policy for every `T` in the grid. Replication
/// `r` at `T` uses stream `derive_seed2(seed, T, r)`.
pub fn estimate_regret_curve(
    true_env: &TabularMdp,
    expert: &TimedPolicy,
    config: &RegretConfig,
) -> Result<Vec<RegretEstimate>> {
    if config.replications < 2 {
        return Err(Error::contract("regret estimation needs at least two replications"));
    }
    if config.episode_grid.is_empty() || config.episode_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("episode grid must be nonempty and strictly ascending"));
    }
    let spec = BehaviorSpec::new(expert.clone(), config.epsilon)?;
    config
        .episode_grid
        .iter()
        .map(|&episodes| {
            let k = config.k_rule.models_for(episodes);
            let runs: Vec<(f64, usize)> = (0..config.replications as u64)
                .into_par_iter()
                .map(|r| {
                    let seed = derive_seed2(config.seed, episodes as u64, r);
                    regret_replication(true_env, &spec, episodes, config.alpha, k, seed)
                })
                .collect::<Result<_>>()?;
            let samples: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let (mean, se) = mean_and_se(&samples);
            let borderline = runs.iter().map(|r| r.1 as f64).sum::<f64>() / runs.len() as f64;
            Ok(RegretEstimate {
                episodes,
                num_models: k,
                alpha: config.alpha,
                samples,
                mean_regret: mean,
                se,
                cumulative: episodes as f64 * mean,
                cumulative_se: episodes as f64 * se,
                oracle_borderline_cells: borderline,
            })
        })
        .collect()
}

/// `T,mean_regret,se,alpha,K` rows.
pub fn write_regret_csv<W: Write>(out: W, curve: &[RegretEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "mean_regret", "se", "alpha", "K"])?;
    for e in curve {
        w.write_record([
            e.episodes.to_string(),
            e.mean_regret.to_string(),
            e.se.to_string(),
            e.alpha.to_string(),
            e.num_models.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{riverswim, RiverSwimConfig};
    use crate::mdp::exact_optimal_policy;

    #[test]
    fn radius_formula() {
        let b = confidence_radius(6, 2, 100, 0);
        let expected = (8.0 * 6.0 * 100.0 * (2400.0f64).ln()).sqrt();
        assert!((b - expected).abs() < 1e-12);
        assert_eq!(confidence_radius(6, 2, 100, 1), b);
        assert!((confidence_radius(6, 2, 100, 4) - expected / 4.0).abs() < 1e-12);
    }

    #[test]
    fn radius_decreases_with_visits() {
        let mut last = f64::INFINITY;
        for n in 1..200 {
            let b = confidence_radius(3, 2, 50, n);
            assert!(b < last);
            last = b;
        }
    }

    fn small_data() -> Dataset {
        let env = riverswim(&RiverSwimConfig::default()).unwrap();
        let expert = exact_optimal_policy(&env).0;
        generate_dataset(&env, &BehaviorSpec::new(expert, 0.5).unwrap(), 30, 4).unwrap()
    }

    #[test]
    fn ml_tables_are_members() {
        let data = small_data();
        let ml = ml_tables(&data);
        let report = confidence_set_report(&data, std::slice::from_ref(&ml.model)).unwrap();
        assert!(report.candidates[0].member);
        assert_eq!(report.violation_count(), 0);
        for row in report.rows() {
            assert!(row.worst_violation.unwrap() < 0.0);
        }
    }

    #[test]
    fn constructed_violation_is_flagged() {
        let data = small_data();
        let ml = ml_tables(&data);
        // Highest-count cell; its radius is the smallest one.
        let (mut bs, mut ba) = (0, 0);
        for s in 0..6 {
            for a in 0..2 {
                if ml.stats.visits(s, a) > ml.stats.visits(bs, ba) {
                    (bs, ba) = (s, a);
                }
            }
        }
        let beta = confidence_radius(6, 2, data.len(), ml.stats.visits(bs, ba));
        let mut reward = ml.model.mean_reward_flat().to_vec();
        reward[bs * 2 + ba] += beta + 0.5;
        let bad = TabularMdp::from_flat(
            6,
            2,
            20,
            ml.model.transition_flat().to_vec(),
            reward,
            ml.model.initial().to_vec(),
        )
        .unwrap();
        let report = confidence_set_report(&data, &[bad]).unwrap();
        assert!(!report.candidates[0].member);
        assert_eq!(report.candidates[0].violations, vec![(bs, ba)]);
    }

    #[test]
    fn oracle_with_zero_alpha_is_behavior() {
        let env = riverswim(&RiverSwimConfig::default()).unwrap();
        let behavior = TimedPolicy::constant(6, 2, 20, 0).unwrap();
        let reference = vec![env.clone(); 3];
        assert_eq!(
            oracle_gated_policy(&env, &reference, &behavior, 0.0).unwrap().0,
            behavior
        );
    }

    #[test]
    fn oracle_with_true_reference_is_optimal() {
        // Reference models equal to the truth: proposals never lose, so the
        // oracle adopts every true greedy action.
        let env = riverswim(&RiverSwimConfig::default()).unwrap();
        let behavior = TimedPolicy::constant(6, 2, 20, 0).unwrap();
        let (oracle, _) = oracle_gated_policy(&env, &[env.clone(), env.clone()], &behavior, 0.5).unwrap();
        let opt = exact_optimal_policy(&env);
        let v = exact_policy_value(&env, &oracle).unwrap().start_value(env.initial());
        assert!((v - opt.1.start_value(env.initial())).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_regret_vanishes() {
        let env = riverswim(&RiverSwimConfig::default()).unwrap();
        let expert = exact_optimal_policy(&env).0;
        let cfg = RegretConfig {
            epsilon: 0.3,
            episode_grid: vec![10, 20],
            alpha: 0.0,
            k_rule: KRule::Fixed { k: 10 },
            replications: 3,
            seed: 1,
        };
        for e in estimate_regret_curve(&env, &expert, &cfg).unwrap() {
            assert!(e.samples.iter().all(|d| *d == 0.0));
        }
    }

    #[test]
    fn k_rule() {
        assert_eq!(KRule::Linear { factor: 0.5, min: 50 }.models_for(40), 50);
        assert_eq!(KRule::Linear { factor: 0.5, min: 50 }.models_for(401), 201);
        assert_eq!(KRule::Fixed { k: 7 }.models_for(1000), 7);
    }
}
