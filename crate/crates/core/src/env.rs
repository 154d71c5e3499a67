//! RiverSwim, expert training and ε-noisy behavior data.
//!
//! Action 0 swims left, action 1 swims right. Swimming left always succeeds.
//! Swimming right fights the current: interior states advance, stay or get
//! pushed back. In the rightmost state, swimming right holds with probability
//! `right_self_loop_rightmost` and pays `right_reward` with that same
//! probability (an independent Bernoulli draw, so only the mean is tied to
//! the hold event). The leftmost state pays `left_reward` for swimming left.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{exact_optimal_policy, rollout_with, RewardDist, TabularMdp, TimedPolicy};
use crate::posterior::{InitialMode, PosteriorModel};
use crate::rng::{derive_seed, derive_seed2, seeded};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiverSwimConfig {
    pub num_states: usize,
    pub horizon: usize,
    pub left_reward: f64,
    pub right_reward: f64,
    /// Interior right: probability of advancing one state.
    pub right_success_interior: f64,
    /// Interior right: probability of staying put. The rest regresses.
    pub right_stay_interior: f64,
    /// Rightmost right: probability of holding (and being paid).
    pub right_self_loop_rightmost: f64,
    /// Leftmost right: probability of advancing, else stay.
    pub right_success_leftmost: f64,
    /// Episodes start uniformly in one of these states.
    pub start_states: Vec<usize>,
}

impl Default for RiverSwimConfig {
    /// Canonical dynamics. The optimal expected return from the default start
    /// states is about 1.83 over 20 steps.
    fn default() -> Self {
        RiverSwimConfig {
            num_states: 6,
            horizon: 20,
            left_reward: 0.005,
            right_reward: 1.0,
            right_success_interior: 0.3,
            right_stay_interior: 0.6,
            right_self_loop_rightmost: 0.6,
            right_success_leftmost: 0.3,
            start_states: vec![1, 2],
        }
    }
}

impl RiverSwimConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |key: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(key, format!("{p} is not a probability")))
            }
        };
        if self.num_states < 2 {
            return Err(Error::config("env.num_states", "RiverSwim needs at least 2 states"));
        }
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be positive"));
        }
        prob("env.right_success_interior", self.right_success_interior)?;
        prob("env.right_stay_interior", self.right_stay_interior)?;
        prob("env.right_self_loop_rightmost", self.right_self_loop_rightmost)?;
        prob("env.right_success_leftmost", self.right_success_leftmost)?;
        if self.right_success_interior + self.right_stay_interior > 1.0 + 1e-12 {
            return Err(Error::config(
                "env.right_stay_interior",
                "interior advance + stay probabilities exceed 1",
            ));
        }
        if self.start_states.is_empty() || self.start_states.iter().any(|&s| s >= self.num_states) {
            return Err(Error::config("env.start_states", "must list valid states"));
        }
        Ok(())
    }
}

pub fn riverswim(config: &RiverSwimConfig) -> Result<TabularMdp> {
    config.validate()?;
    let n = config.num_states;
    let last = n - 1;
    let mut left = vec![vec![0.0; n]; n];
    let mut right = vec![vec![0.0; n]; n];
    for s in 0..n {
        left[s][s.saturating_sub(1)] = 1.0;
        if s == 0 {
            right[0][1] += config.right_success_leftmost;
            right[0][0] += 1.0 - config.right_success_leftmost;
        } else if s == last {
            right[s][s] += config.right_self_loop_rightmost;
            right[s][s - 1] += 1.0 - config.right_self_loop_rightmost;
        } else {
            right[s][s + 1] += config.right_success_interior;
            right[s][s] += config.right_stay_interior;
            right[s][s - 1] += 1.0 - config.right_success_interior - config.right_stay_interior;
        }
    }
    let mut rewards = vec![vec![0.0; 2]; n];
    rewards[0][LEFT] = config.left_reward;
    rewards[last][RIGHT] = config.right_self_loop_rightmost * config.right_reward;

    let mut initial = vec![0.0; n];
    let share = 1.0 / config.start_states.len() as f64;
    for &s in &config.start_states {
        initial[s] += share;
    }
    let mut mdp = TabularMdp::new(config.horizon, vec![left, right], rewards, initial)?;
    mdp.set_reward_dist(
        last,
        RIGHT,
        RewardDist::Bernoulli {
            p: config.right_self_loop_rightmost,
            magnitude: config.right_reward,
        },
    )?;
    Ok(mdp)
}

/// Expert `π⁰` plus the probability `ε` of replacing its action with a
/// uniformly random one.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSpec {
    pub base: TimedPolicy,
    pub epsilon: f64,
}

impl BehaviorSpec {
    pub fn new(base: TimedPolicy, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::contract(format!("epsilon={epsilon} outside [0, 1]")));
        }
        Ok(BehaviorSpec { base, epsilon })
    }

    /// `P(a | s, t) = (1-ε)·1{a = π⁰(s,t)} + ε/A`.
    pub fn action_prob(&self, s: usize, t: usize, a: usize) -> f64 {
        let uniform = self.epsilon / self.base.num_actions() as f64;
        if a == self.base.action(s, t) {
            1.0 - self.epsilon + uniform
        } else {
            uniform
        }
    }

    fn choose<R: Rng + ?Sized>(&self, s: usize, t: usize, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.epsilon {
            rng.random_range(0..self.base.num_actions())
        } else {
            self.base.action(s, t)
        }
    }

    /// Exact expected return of the stochastic behavior policy.
    pub fn expected_return(&self, env: &TabularMdp) -> Result<f64> {
        self.base.check_matches(env)?;
        let (n, na) = (env.num_states(), env.num_actions());
        let mut next = vec![0.0; n];
        for t in (0..env.horizon()).rev() {
            let stage: Vec<f64> = (0..n)
                .map(|s| {
                    (0..na)
                        .map(|a| self.action_prob(s, t, a) * env.backup(s, a, &next))
                        .sum()
                })
                .collect();
            next = stage;
        }
        Ok(env.initial().iter().zip(&next).map(|(p, v)| p * v).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertMethod {
    /// Optimal policy of the true model.
    ExactDp,
    /// Episodic posterior sampling against the environment.
    PsrlOnline,
}

impl std::str::FromStr for ExpertMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_dp" => Ok(ExpertMethod::ExactDp),
            "psrl_online" => Ok(ExpertMethod::PsrlOnline),
            other => Err(Error::config("behavior.expert", format!("unknown method `{other}`"))),
        }
    }
}

/// Trains `π⁰`. The online variant samples one model per episode, acts
/// greedily in it, and returns the greedy policy of the final posterior mean.
pub fn train_expert(env: &TabularMdp, method: ExpertMethod, episodes: usize, seed: u64) -> Result<TimedPolicy> {
    match method {
        ExpertMethod::ExactDp => Ok(exact_optimal_policy(env).0),
        ExpertMethod::PsrlOnline => {
            let (n, na, horizon) = (env.num_states(), env.num_actions(), env.horizon());
            let mut posterior = PosteriorModel::weak(n, na, horizon, InitialMode::Known(env.initial().to_vec()))?;
            for i in 0..episodes as u64 {
                let sampled = posterior.sample_mdp(derive_seed2(seed, i, 0));
                let (policy, _) = exact_optimal_policy(&sampled);
                let mut rng = seeded(derive_seed2(seed, i, 1));
                let episode = rollout_with(env, true, &mut rng, |s, t, _| policy.action(s, t));
                let data = Dataset::new(n, na, horizon, vec![episode])?;
                posterior = posterior.fit(&data)?;
            }
            Ok(exact_optimal_policy(&posterior.mean_mdp()).0)
        }
    }
}

/// `T` episodes under the behavior law, with noisy rewards. Episode `i` uses
/// stream `derive_seed(seed, i)`.
pub fn generate_dataset(env: &TabularMdp, spec: &BehaviorSpec, episodes: usize, seed: u64) -> Result<Dataset> {
    if episodes == 0 {
        return Err(Error::contract("dataset needs T >= 1 episodes"));
    }
    spec.base.check_matches(env)?;
    let trajectories = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, i));
            rollout_with(env, true, &mut rng, |s, t, r| spec.choose(s, t, r))
        })
        .collect();
    Dataset::new(env.num_states(), env.num_actions(), env.horizon(), trajectories)
}
