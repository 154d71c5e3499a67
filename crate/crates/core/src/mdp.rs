//! Finite-horizon tabular MDPs, exact backward induction and rollouts.
//!
//! Models are stationary: transitions and mean rewards carry no time index.
//! All time dependence lives in [`TimedPolicy`] and [`ValueTable`]. Time steps
//! are 0-based internally (`t` in `0..horizon`); file formats and the CLI
//! report them 1-based.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_index, seeded};

const PROB_TOL: f64 = 1e-9;

/// Per-cell reward law used when a rollout draws noisy rewards. The mean of
/// every variant equals the cell's entry in the mean-reward table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardDist {
    /// Always pays the mean reward.
    #[default]
    Mean,
    /// Pays `magnitude` with probability `p`, otherwise 0.
    Bernoulli { p: f64, magnitude: f64 },
    /// Normal around the mean reward.
    Gaussian { sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `[a][s][s']`, flattened.
    transition: Vec<f64>,
    /// `[s][a]`, flattened.
    mean_reward: Vec<f64>,
    initial: Vec<f64>,
    reward_dist: Vec<RewardDist>,
}

impl TabularMdp {
    /// Builds and validates a model from nested tables:
    /// `transition[a][s][s']`, `mean_reward[s][a]`, `initial[s]`.
    pub fn new(
        horizon: usize,
        transition: Vec<Vec<Vec<f64>>>,
        mean_reward: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let num_actions = transition.len();
        let num_states = initial.len();
        if num_actions == 0 || num_states == 0 || horizon == 0 {
            return Err(Error::contract("S, A and horizon must all be positive"));
        }
        let mut flat = Vec::with_capacity(num_actions * num_states * num_states);
        for (a, rows) in transition.iter().enumerate() {
            if rows.len() != num_states {
                return Err(Error::dimension(format!(
                    "transition[{a}] has {} rows, expected {num_states}",
                    rows.len()
                )));
            }
            for (s, row) in rows.iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::dimension(format!(
                        "transition[{a}][{s}] has {} entries, expected {num_states}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        if mean_reward.len() != num_states || mean_reward.iter().any(|r| r.len() != num_actions) {
            return Err(Error::dimension("mean_reward must be S x A"));
        }
        let rewards = mean_reward.into_iter().flatten().collect();
        Self::from_flat(num_states, num_actions, horizon, flat, rewards, initial)
    }

    /// Builds from flat row-major tables (`[a][s][s']` and `[s][a]`).
    pub fn from_flat(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transition: Vec<f64>,
        mean_reward: Vec<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if num_actions == 0 || num_states == 0 || horizon == 0 {
            return Err(Error::contract("S, A and horizon must all be positive"));
        }
        if transition.len() != num_actions * num_states * num_states
            || mean_reward.len() != num_states * num_actions
            || initial.len() != num_states
        {
            return Err(Error::dimension("flat tables do not match (S, A)"));
        }
        let model = TabularMdp {
            num_states,
            num_actions,
            horizon,
            transition,
            mean_reward,
            initial,
            reward_dist: vec![RewardDist::Mean; num_states * num_actions],
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        check_distribution(&self.initial, "initial distribution")?;
        for a in 0..self.num_actions {
            for s in 0..self.num_states {
                check_distribution(self.row(a, s), &format!("transition row (a={a}, s={s})"))?;
            }
        }
        if self.mean_reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::contract("mean rewards must be finite"));
        }
        Ok(())
    }

    /// Attaches a reward law to one cell. Its mean must match the table.
    pub fn set_reward_dist(&mut self, s: usize, a: usize, dist: RewardDist) -> Result<()> {
        self.check_sa(s, a)?;
        if let RewardDist::Bernoulli { p, magnitude } = dist {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(format!("Bernoulli p={p} outside [0,1]")));
            }
            let mean = self.reward(s, a);
            if (p * magnitude - mean).abs() > 1e-9 {
                return Err(Error::contract(format!(
                    "Bernoulli mean {} disagrees with mean reward {mean} at ({s},{a})",
                    p * magnitude
                )));
            }
        }
        if let RewardDist::Gaussian { sd } = dist {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::contract(format!("Gaussian sd={sd} invalid")));
            }
        }
        self.reward_dist[s * self.num_actions + a] = dist;
        Ok(())
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.num_states {
            return Err(Error::dimension("initial distribution length != S"));
        }
        check_distribution(&initial, "initial distribution")?;
        self.initial = initial;
        Ok(self)
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

    /// Next-state distribution for action `a` taken in state `s`.
    #[inline]
    pub fn row(&self, a: usize, s: usize) -> &[f64] {
        let start = (a * self.num_states + s) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.mean_reward[s * self.num_actions + a]
    }

    pub fn reward_dist(&self, s: usize, a: usize) -> RewardDist {
        self.reward_dist[s * self.num_actions + a]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition_flat(&self) -> &[f64] {
        &self.transition
    }

    pub fn mean_reward_flat(&self) -> &[f64] {
        &self.mean_reward
    }

    /// Returns a copy with `c` added to every mean reward.
    pub fn shifted_rewards(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.mean_reward.iter_mut().for_each(|r| *r += c);
        out.reward_dist = vec![RewardDist::Mean; out.reward_dist.len()];
        out
    }

    /// Expected immediate reward plus expected continuation for one cell,
    /// given the next stage's values. No bounds checks.
    #[inline]
    pub(crate) fn backup(&self, s: usize, a: usize, next_values: &[f64]) -> f64 {
        let row = self.row(a, s);
        let cont: f64 = row.iter().zip(next_values).map(|(p, v)| p * v).sum();
        self.reward(s, a) + cont
    }

    fn check_sa(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(Error::contract(format!(
                "(s={s}, a={a}) outside S={} A={}",
                self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    fn draw_reward<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> f64 {
        let mean = self.reward(s, a);
        match self.reward_dist(s, a) {
            RewardDist::Mean => mean,
            RewardDist::Bernoulli { p, magnitude } => {
                if rng.random::<f64>() < p {
                    magnitude
                } else {
                    0.0
                }
            }
            RewardDist::Gaussian { sd } => {
                if sd == 0.0 {
                    mean
                } else {
                    Normal::new(mean, sd).expect("validated sd").sample(rng)
                }
            }
        }
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::contract(format!("{what} has entries outside [0,1]")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::contract(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// Deterministic time-indexed policy: one action per `(state, step)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedPolicy {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `[s][t]`, flattened.
    actions: Vec<usize>,
}

impl TimedPolicy {
    pub fn constant(num_states: usize, num_actions: usize, horizon: usize, action: usize) -> Result<Self> {
        Self::from_fn(num_states, num_actions, horizon, |_, _| action)
    }

    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        mut f: impl FnMut(usize, usize) -> usize,
    ) -> Result<Self> {
        let mut actions = Vec::with_capacity(num_states * horizon);
        for s in 0..num_states {
            for t in 0..horizon {
                actions.push(f(s, t));
            }
        }
        Self::from_flat(num_states, num_actions, horizon, actions)
    }

    /// `actions[s][t]` nested.
    pub fn from_table(num_actions: usize, table: Vec<Vec<usize>>) -> Result<Self> {
        let num_states = table.len();
        let horizon = table.first().map_or(0, Vec::len);
        if table.iter().any(|row| row.len() != horizon) {
            return Err(Error::dimension("policy table rows differ in length"));
        }
        Self::from_flat(num_states, num_actions, horizon, table.into_iter().flatten().collect())
    }

    fn from_flat(num_states: usize, num_actions: usize, horizon: usize, actions: Vec<usize>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::contract("policy dimensions must be positive"));
        }
        if let Some(bad) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::contract(format!("policy action {bad} >= A={num_actions}")));
        }
        Ok(TimedPolicy {
            num_states,
            num_actions,
            horizon,
            actions,
        })
    }

    #[inline]
    pub fn action(&self, s: usize, t: usize) -> usize {
        self.actions[s * self.horizon + t]
    }

    pub(crate) fn set(&mut self, s: usize, t: usize, a: usize) {
        debug_assert!(a < self.num_actions);
        self.actions[s * self.horizon + t] = a;
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

    /// Nested `[s][t]` view, used for serialization.
    pub fn to_table(&self) -> Vec<Vec<usize>> {
        self.actions.chunks(self.horizon).map(<[usize]>::to_vec).collect()
    }

    pub fn check_matches(&self, model: &TabularMdp) -> Result<()> {
        if self.num_states != model.num_states || self.num_actions != model.num_actions || self.horizon != model.horizon
        {
            return Err(Error::dimension(format!(
                "policy (S={}, A={}, tau={}) vs model (S={}, A={}, tau={})",
                self.num_states, self.num_actions, self.horizon, model.num_states, model.num_actions, model.horizon
            )));
        }
        Ok(())
    }

    /// Number of `(s, t)` cells where two policies disagree.
    pub fn disagreements(&self, other: &TimedPolicy) -> usize {
        self.actions.iter().zip(&other.actions).filter(|(a, b)| a != b).count()
    }
}

/// `V[s][t]` for `t` in `0..=horizon`; the final stage is identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    num_states: usize,
    horizon: usize,
    /// `[t][s]`, flattened, `horizon + 1` stages.
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(num_states: usize, horizon: usize) -> Self {
        ValueTable {
            num_states,
            horizon,
            values: vec![0.0; num_states * (horizon + 1)],
        }
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.values[t * self.num_states + s]
    }

    /// Values of every state at stage `t`.
    #[inline]
    pub fn stage(&self, t: usize) -> &[f64] {
        &self.values[t * self.num_states..(t + 1) * self.num_states]
    }

    pub(crate) fn stage_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.num_states..(t + 1) * self.num_states]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `Σ_s P0(s) V[s][0]`.
    pub fn start_value(&self, initial: &[f64]) -> f64 {
        initial.iter().zip(self.stage(0)).map(|(p, v)| p * v).sum()
    }
}

/// `R̄(s,a) + Σ_s' P(s'|s,a) V(s', t+1)`.
pub fn q_value(model: &TabularMdp, continuation: &ValueTable, s: usize, a: usize, t: usize) -> Result<f64> {
    model.check_sa(s, a)?;
    if t >= model.horizon {
        return Err(Error::contract(format!("t={t} outside 0..{}", model.horizon)));
    }
    if continuation.num_states != model.num_states || continuation.horizon < t + 1 {
        return Err(Error::dimension("continuation table does not cover stage t+1"));
    }
    Ok(model.backup(s, a, continuation.stage(t + 1)))
}

/// Backward induction for a fixed policy.
pub fn exact_policy_value(model: &TabularMdp, policy: &TimedPolicy) -> Result<ValueTable> {
    policy.check_matches(model)?;
    let (n, horizon) = (model.num_states, model.horizon);
    let mut table = ValueTable::zeros(n, horizon);
    let mut next = vec![0.0; n];
    for t in (0..horizon).rev() {
        let stage = table.stage_mut(t);
        for (s, v) in stage.iter_mut().enumerate() {
            *v = model.backup(s, policy.action(s, t), &next);
        }
        next.copy_from_slice(stage);
    }
    Ok(table)
}

/// Optimal finite-horizon policy; ties go to the lowest action index.
pub fn exact_optimal_policy(model: &TabularMdp) -> (TimedPolicy, ValueTable) {
    let (n, na, horizon) = (model.num_states, model.num_actions, model.horizon);
    let mut table = ValueTable::zeros(n, horizon);
    let mut actions = vec![0usize; n * horizon];
    let mut next = vec![0.0; n];
    for t in (0..horizon).rev() {
        let stage = table.stage_mut(t);
        for s in 0..n {
            let (best, value) = argmax((0..na).map(|a| model.backup(s, a, &next)));
            actions[s * horizon + t] = best;
            stage[s] = value;
        }
        next.copy_from_slice(stage);
    }
    let policy = TimedPolicy {
        num_states: n,
        num_actions: na,
        horizon,
        actions,
    };
    (policy, table)
}

/// First index of the maximum; later equal values never win.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// One episode of exactly `horizon` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Simulates one episode. With `reward_noise` off every step pays the mean
/// reward; with it on, rewards follow each cell's [`RewardDist`].
pub fn rollout(model: &TabularMdp, policy: &TimedPolicy, seed: u64, reward_noise: bool) -> Result<Trajectory> {
    policy.check_matches(model)?;
    let mut rng = seeded(seed);
    Ok(rollout_with(model, reward_noise, &mut rng, |s, t, _| {
        policy.action(s, t)
    }))
}

/// Rollout driver shared by the data generator and evaluators. `choose`
/// receives `(state, step, rng)`.
pub(crate) fn rollout_with<R: Rng + ?Sized>(
    model: &TabularMdp,
    reward_noise: bool,
    rng: &mut R,
    mut choose: impl FnMut(usize, usize, &mut R) -> usize,
) -> Trajectory {
    let mut steps = Vec::with_capacity(model.horizon);
    let mut s = sample_index(&model.initial, rng);
    for t in 0..model.horizon {
        let a = choose(s, t, rng);
        let reward = if reward_noise {
            model.draw_reward(s, a, rng)
        } else {
            model.reward(s, a)
        };
        steps.push(Step {
            state: s,
            action: a,
            reward,
        });
        s = sample_index(model.row(a, s), rng);
    }
    Trajectory { steps }
}

/// Rollout that starts from a fixed state and only accumulates mean rewards.
pub(crate) fn mean_return_from<R: Rng + ?Sized>(
    model: &TabularMdp,
    policy: &TimedPolicy,
    start: usize,
    rng: &mut R,
) -> f64 {
    let mut s = start;
    let mut total = 0.0;
    for t in 0..model.horizon {
        let a = policy.action(s, t);
        total += model.reward(s, a);
        s = sample_index(model.row(a, s), rng);
    }
    total
}


#[cfg(test)]
mod tests {
    use super::test_models::*;
    use super::*;
    use crate::rng::seeded;

    /// Exhaustive path-sum oracle: enumerates every state sequence and weights
    /// the policy's rewards by path probability.
    fn path_sum_value(model: &TabularMdp, policy: &TimedPolicy, start: usize) -> f64 {
        fn go(model: &TabularMdp, policy: &TimedPolicy, s: usize, t: usize, prob: f64, acc: f64) -> f64 {
            if t == model.horizon() {
                return prob * acc;
            }
            let a = policy.action(s, t);
            let r = model.reward(s, a);
            (0..model.num_states())
                .map(|s2| {
                    let p = model.row(a, s)[s2];
                    if p == 0.0 {
                        0.0
                    } else {
                        go(model, policy, s2, t + 1, prob * p, acc + r)
                    }
                })
                .sum()
        }
        go(model, policy, start, 0, 1.0, 0.0)
    }

    fn all_policies(n: usize, na: usize, horizon: usize) -> Vec<TimedPolicy> {
        let cells = n * horizon;
        let total = na.pow(cells as u32);
        (0..total)
            .map(|mut code| {
                let actions: Vec<usize> = (0..cells)
                    .map(|_| {
                        let a = code % na;
                        code /= na;
                        a
                    })
                    .collect();
                TimedPolicy::from_flat(n, na, horizon, actions).unwrap()
            })
            .collect()
    }

    #[test]
    fn q_value_self_loop() {
        let model = TabularMdp::new(3, vec![vec![vec![1.0]]], vec![vec![1.0]], vec![1.0]).unwrap();
        let mut cont = ValueTable::zeros(1, 3);
        cont.stage_mut(1)[0] = 2.0;
        assert_eq!(q_value(&model, &cont, 0, 0, 0).unwrap(), 3.0);
    }

    #[test]
    fn q_value_at_last_step_is_mean_reward() {
        let model = two_by_two(3);
        let cont = ValueTable::zeros(2, 3);
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(q_value(&model, &cont, s, a, 2).unwrap(), model.reward(s, a));
            }
        }
    }

    #[test]
    fn q_value_rejects_out_of_range() {
        let model = two_by_two(2);
        let cont = ValueTable::zeros(2, 2);
        assert!(matches!(q_value(&model, &cont, 2, 0, 0), Err(Error::Contract(_))));
        assert!(matches!(q_value(&model, &cont, 0, 2, 0), Err(Error::Contract(_))));
        assert!(matches!(q_value(&model, &cont, 0, 0, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn q_value_matches_path_enumeration() {
        // Q at t=0 with a fixed continuation equals the path sum of the policy
        // that plays `a` first and then the continuation.
        let model = two_by_two(4);
        let cont_policy = TimedPolicy::from_fn(2, 2, 4, |s, t| (s + t) % 2).unwrap();
        let values = exact_policy_value(&model, &cont_policy).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                let mut first = cont_policy.clone();
                first.set(s, 0, a);
                let q = q_value(&model, &values, s, a, 0).unwrap();
                assert!((q - path_sum_value(&model, &first, s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_reward_value() {
        let model = TabularMdp::new(3, vec![vec![vec![1.0]]], vec![vec![1.0]], vec![1.0]).unwrap();
        let policy = TimedPolicy::constant(1, 1, 3, 0).unwrap();
        let v = exact_policy_value(&model, &policy).unwrap();
        assert_eq!(v.get(0, 0), 3.0);
        assert_eq!(v.get(0, 3), 0.0);
    }

    #[test]
    fn dp_equals_path_enumeration_on_all_small_mdps() {
        let mut rng = seeded(11);
        for n in 1..=3 {
            for na in 1..=2 {
                for horizon in 1..=4 {
                    for _ in 0..5 {
                        let model = random_mdp(&mut rng, n, na, horizon);
                        let policy = TimedPolicy::from_fn(n, na, horizon, |_, _| rng.random_range(0..na)).unwrap();
                        let v = exact_policy_value(&model, &policy).unwrap();
                        for s in 0..n {
                            let oracle = path_sum_value(&model, &policy, s);
                            assert!((v.get(s, 0) - oracle).abs() < 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn policy_value_matches_monte_carlo() {
        let mut rng = seeded(5);
        let model = random_mdp(&mut rng, 3, 2, 3);
        let policy = TimedPolicy::from_fn(3, 2, 3, |_, _| rng.random_range(0..2)).unwrap();
        let exact = exact_policy_value(&model, &policy)
            .unwrap()
            .start_value(model.initial());
        let n = 1_000_000;
        let mut mc = seeded(6);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let g = rollout_with(&model, false, &mut mc, |s, t, _| policy.action(s, t)).total_reward();
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn optimal_policy_dominates_exhaustive_enumeration() {
        let mut rng = seeded(21);
        let policies = all_policies(2, 2, 2);
        for _ in 0..100 {
            let model = random_mdp(&mut rng, 2, 2, 2);
            let (opt, opt_values) = exact_optimal_policy(&model);
            assert_eq!(exact_policy_value(&model, &opt).unwrap(), opt_values);
            for p in &policies {
                let v = exact_policy_value(&model, p).unwrap();
                for s in 0..2 {
                    for t in 0..2 {
                        assert!(opt_values.get(s, t) >= v.get(s, t) - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn strictly_dominant_action_everywhere() {
        let model = TabularMdp::new(
            3,
            vec![
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
            vec![vec![0.0, 1.0], vec![0.2, 0.3]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let (policy, _) = exact_optimal_policy(&model);
        assert_eq!(policy, TimedPolicy::constant(2, 2, 3, 1).unwrap());
    }

    #[test]
    fn exact_tie_goes_to_action_zero() {
        let model = TabularMdp::new(
            2,
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
            vec![vec![0.5, 0.5], vec![0.25, 0.25]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let (policy, _) = exact_optimal_policy(&model);
        assert_eq!(policy, TimedPolicy::constant(2, 2, 2, 0).unwrap());
    }

    #[test]
    fn reward_shift_moves_values_not_argmax() {
        let mut rng = seeded(33);
        for _ in 0..20 {
            let model = random_mdp(&mut rng, 3, 2, 4);
            let c = 0.75;
            let (p0, v0) = exact_optimal_policy(&model);
            let (p1, v1) = exact_optimal_policy(&model.shifted_rewards(c));
            assert_eq!(p0, p1);
            for s in 0..3 {
                for t in 0..=4 {
                    let shift = c * (4 - t) as f64;
                    assert!((v1.get(s, t) - v0.get(s, t) - shift).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn value_bounds_for_unit_rewards() {
        let mut rng = seeded(3);
        let model = random_mdp(&mut rng, 3, 2, 5);
        let (_, v) = exact_optimal_policy(&model);
        for s in 0..3 {
            for t in 0..=5 {
                let x = v.get(s, t);
                assert!(x >= 0.0 && x <= (5 - t) as f64);
            }
        }
    }

    #[test]
    fn rollout_deterministic_model_and_seed() {
        let model = TabularMdp::new(4, vec![vec![vec![1.0]]], vec![vec![0.25]], vec![1.0]).unwrap();
        let policy = TimedPolicy::constant(1, 1, 4, 0).unwrap();
        let tr = rollout(&model, &policy, 9, true).unwrap();
        assert_eq!(tr.steps.len(), 4);
        assert!(tr.steps.iter().all(|s| *s
            == Step {
                state: 0,
                action: 0,
                reward: 0.25
            }));

        let model = two_by_two(10);
        let policy = TimedPolicy::constant(2, 2, 10, 1).unwrap();
        assert_eq!(
            rollout(&model, &policy, 4, false).unwrap(),
            rollout(&model, &policy, 4, false).unwrap()
        );
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(TabularMdp::new(1, vec![vec![vec![0.5]]], vec![vec![0.0]], vec![1.0]).is_err());
        assert!(TabularMdp::new(1, vec![vec![vec![1.0]]], vec![vec![0.0]], vec![0.9]).is_err());
        assert!(TabularMdp::new(0, vec![vec![vec![1.0]]], vec![vec![0.0]], vec![1.0]).is_err());
        assert!(TimedPolicy::constant(2, 2, 2, 2).is_err());
    }

    #[test]
    fn bernoulli_reward_mean_must_match() {
        let mut model = two_by_two(2);
        assert!(model
            .set_reward_dist(0, 1, RewardDist::Bernoulli { p: 0.5, magnitude: 1.0 })
            .is_ok());
        assert!(model
            .set_reward_dist(0, 1, RewardDist::Bernoulli { p: 0.6, magnitude: 1.0 })
            .is_err());
    }
}
