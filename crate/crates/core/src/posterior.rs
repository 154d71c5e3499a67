//! Conjugate posterior over tabular MDPs.
//!
//! Transitions: one Dirichlet per `(a, s)` row, updated with multinomial
//! transition counts. Mean rewards: one Normal-Gamma per `(s, a)`, updated
//! with the Normal likelihood of the logged rewards.
//!
//! The posterior stores the prior together with accumulated sufficient
//! statistics, and every posterior parameter is derived from those two on
//! demand. Fitting twice therefore equals fitting once on the concatenated
//! data, bit for bit.
//!
//! Mean rewards are drawn jointly: precision `λ ~ Gamma(a_n, rate b_n)` and
//! then `mean ~ Normal(μ_n, 1/(κ_n λ))`. The marginal of the mean is the
//! Student-t of the Normal-Gamma posterior. Sampled means are not clipped.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng::{derive_seed, seeded};

/// Normal-Gamma hyperparameters `(μ, κ, a, b)`; `b` is a rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGamma {
    pub mu: f64,
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for NormalGamma {
    fn default() -> Self {
        NormalGamma {
            mu: 0.5,
            kappa: 1.0,
            a: 1.0,
            b: 1.0,
        }
    }
}

impl NormalGamma {
    fn validate(&self) -> Result<()> {
        let ok = self.mu.is_finite() && self.kappa > 0.0 && self.a > 0.0 && self.b > 0.0;
        if !ok {
            return Err(Error::contract(format!(
                "Normal-Gamma needs finite mu and positive kappa, a, b; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Conjugate update from `n` observations with sum `s1` and sum of squares `s2`.
    pub fn update(&self, n: u64, s1: f64, s2: f64) -> NormalGamma {
        if n == 0 {
            return *self;
        }
        let nf = n as f64;
        let mean = s1 / nf;
        let kappa = self.kappa + nf;
        let scatter = (s2 - s1 * s1 / nf).max(0.0);
        let dev = mean - self.mu;
        NormalGamma {
            mu: (self.kappa * self.mu + s1) / kappa,
            kappa,
            a: self.a + 0.5 * nf,
            b: self.b + 0.5 * scatter + self.kappa * nf * dev * dev / (2.0 * kappa),
        }
    }

    /// Draws the mean parameter.
    pub fn sample_mean<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let precision = Gamma::new(self.a, 1.0 / self.b).expect("validated").sample(rng);
        let sd = 1.0 / (self.kappa * precision).sqrt();
        if !sd.is_finite() {
            // Precision underflowed to zero: the draw is uninformative anyway.
            return self.mu;
        }
        Normal::new(self.mu, sd).expect("finite sd").sample(rng)
    }

    /// Variance of the Student-t marginal of the mean (finite for `a > 1`).
    pub fn mean_variance(&self) -> Option<f64> {
        (self.a > 1.0).then(|| self.b / (self.kappa * (self.a - 1.0)))
    }
}

/// Prior tables: Dirichlet concentration `[a][s][s']` and a Normal-Gamma per `(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    num_states: usize,
    num_actions: usize,
    dirichlet: Vec<f64>,
    reward: Vec<NormalGamma>,
}

impl Prior {
    pub fn new(num_states: usize, num_actions: usize, dirichlet_alpha: f64, reward: NormalGamma) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::contract("prior dimensions must be positive"));
        }
        if !(dirichlet_alpha > 0.0 && dirichlet_alpha.is_finite()) {
            return Err(Error::contract("Dirichlet concentration must be positive"));
        }
        reward.validate()?;
        Ok(Prior {
            num_states,
            num_actions,
            dirichlet: vec![dirichlet_alpha; num_actions * num_states * num_states],
            reward: vec![reward; num_states * num_actions],
        })
    }

    /// Symmetric Dirichlet(1) rows and Normal-Gamma(0.5, 1, 1, 1) rewards.
    pub fn weak(num_states: usize, num_actions: usize) -> Self {
        Self::new(num_states, num_actions, 1.0, NormalGamma::default()).expect("valid defaults")
    }

    pub fn set_dirichlet_row(&mut self, a: usize, s: usize, alpha: &[f64]) -> Result<()> {
        self.check(s, a)?;
        if alpha.len() != self.num_states || alpha.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::contract("Dirichlet row must have S positive entries"));
        }
        let n = self.num_states;
        let start = (a * n + s) * n;
        self.dirichlet[start..start + n].copy_from_slice(alpha);
        Ok(())
    }

    pub fn set_reward(&mut self, s: usize, a: usize, ng: NormalGamma) -> Result<()> {
        self.check(s, a)?;
        ng.validate()?;
        self.reward[s * self.num_actions + a] = ng;
        Ok(())
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(Error::contract(format!("prior cell (s={s}, a={a}) out of range")));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// Counts accumulated from a dataset.
///
/// `visits` counts every logged `(s, a)`; `transition_visits` excludes the
/// final step of each episode, which has no observed successor. Row sums of
/// `transitions` equal `transition_visits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<u64>,
    visits: Vec<u64>,
    transition_visits: Vec<u64>,
    reward_sum: Vec<f64>,
    reward_sq_sum: Vec<f64>,
    first_states: Vec<u64>,
}

impl SufficientStats {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        SufficientStats {
            num_states,
            num_actions,
            transitions: vec![0; num_actions * num_states * num_states],
            visits: vec![0; num_states * num_actions],
            transition_visits: vec![0; num_states * num_actions],
            reward_sum: vec![0.0; num_states * num_actions],
            reward_sq_sum: vec![0.0; num_states * num_actions],
            first_states: vec![0; num_states],
        }
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        let mut stats = Self::zeros(data.num_states(), data.num_actions());
        stats.accumulate(data);
        stats
    }

    /// Adds one dataset, episode by episode in order.
    pub fn accumulate(&mut self, data: &Dataset) {
        let (n, na) = (self.num_states, self.num_actions);
        for ep in data.episodes() {
            self.first_states[ep.steps[0].state] += 1;
            for (i, step) in ep.steps.iter().enumerate() {
                let cell = step.state * na + step.action;
                self.visits[cell] += 1;
                self.reward_sum[cell] += step.reward;
                self.reward_sq_sum[cell] += step.reward * step.reward;
                if let Some(next) = ep.steps.get(i + 1) {
                    self.transition_visits[cell] += 1;
                    self.transitions[(step.action * n + step.state) * n + next.state] += 1;
                }
            }
        }
    }

    pub fn transition_count(&self, a: usize, s: usize, s2: usize) -> u64 {
        self.transitions[(a * self.num_states + s) * self.num_states + s2]
    }

    pub fn transition_row(&self, a: usize, s: usize) -> &[u64] {
        let n = self.num_states;
        let start = (a * n + s) * n;
        &self.transitions[start..start + n]
    }

    /// `N_T(s, a)`: all logged visits.
    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[s * self.num_actions + a]
    }

    /// Visits followed by an observed transition.
    pub fn transition_visits(&self, s: usize, a: usize) -> u64 {
        self.transition_visits[s * self.num_actions + a]
    }

    pub fn reward_sum(&self, s: usize, a: usize) -> f64 {
        self.reward_sum[s * self.num_actions + a]
    }

    pub fn reward_sq_sum(&self, s: usize, a: usize) -> f64 {
        self.reward_sq_sum[s * self.num_actions + a]
    }

    pub fn first_states(&self) -> &[u64] {
        &self.first_states
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().sum()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// How sampled models get their initial-state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    /// Taken as given (simulation, where the environment's P0 is known).
    Known(Vec<f64>),
    /// Empirical distribution of logged first states; uniform before any data.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorModel {
    horizon: usize,
    prior: Prior,
    stats: SufficientStats,
    initial_mode: InitialMode,
}

impl PosteriorModel {
    pub fn from_prior(prior: Prior, horizon: usize, initial_mode: InitialMode) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::contract("horizon must be positive"));
        }
        if let InitialMode::Known(p) = &initial_mode {
            if p.len() != prior.num_states {
                return Err(Error::dimension("known initial distribution length != S"));
            }
            let total: f64 = p.iter().sum();
            if p.iter().any(|x| *x < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::contract("known initial distribution is not a distribution"));
            }
        }
        let stats = SufficientStats::zeros(prior.num_states, prior.num_actions);
        Ok(PosteriorModel {
            horizon,
            prior,
            stats,
            initial_mode,
        })
    }

    /// Weak default prior with the given initial-state handling.
    pub fn weak(num_states: usize, num_actions: usize, horizon: usize, initial_mode: InitialMode) -> Result<Self> {
        Self::from_prior(Prior::weak(num_states, num_actions), horizon, initial_mode)
    }

    /// Conjugate update with `data`, appended after any data already absorbed.
    pub fn fit(&self, data: &Dataset) -> Result<PosteriorModel> {
        if data.num_states() != self.num_states()
            || data.num_actions() != self.num_actions()
            || data.horizon() != self.horizon
        {
            return Err(Error::dimension(format!(
                "dataset (S={}, A={}, tau={}) vs posterior (S={}, A={}, tau={})",
                data.num_states(),
                data.num_actions(),
                data.horizon(),
                self.num_states(),
                self.num_actions(),
                self.horizon
            )));
        }
        let mut out = self.clone();
        out.stats.accumulate(data);
        Ok(out)
    }

    pub fn num_states(&self) -> usize {
        self.prior.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.prior.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn initial_mode(&self) -> &InitialMode {
        &self.initial_mode
    }

    /// Posterior Dirichlet row: prior concentration plus transition counts.
    pub fn dirichlet_row(&self, a: usize, s: usize) -> Vec<f64> {
        let n = self.num_states();
        let start = (a * n + s) * n;
        self.prior.dirichlet[start..start + n]
            .iter()
            .zip(self.stats.transition_row(a, s))
            .map(|(alpha, &c)| alpha + c as f64)
            .collect()
    }

    pub fn reward_posterior(&self, s: usize, a: usize) -> NormalGamma {
        let prior = self.prior.reward[s * self.num_actions() + a];
        prior.update(
            self.stats.visits(s, a),
            self.stats.reward_sum(s, a),
            self.stats.reward_sq_sum(s, a),
        )
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        match &self.initial_mode {
            InitialMode::Known(p) => p.clone(),
            InitialMode::Empirical => {
                let counts = self.stats.first_states();
                let total: u64 = counts.iter().sum();
                let n = self.num_states();
                if total == 0 {
                    vec![1.0 / n as f64; n]
                } else {
                    counts.iter().map(|&c| c as f64 / total as f64).collect()
                }
            }
        }
    }

    /// Model built from posterior means of every parameter.
    pub fn mean_mdp(&self) -> TabularMdp {
        let (n, na) = (self.num_states(), self.num_actions());
        let mut transition = Vec::with_capacity(na * n * n);
        for a in 0..na {
            for s in 0..n {
                let row = self.dirichlet_row(a, s);
                let total: f64 = row.iter().sum();
                transition.extend(row.iter().map(|x| x / total));
            }
        }
        let rewards = (0..n)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| self.reward_posterior(s, a).mu)
            .collect();
        TabularMdp::from_flat(n, na, self.horizon, transition, rewards, self.initial_distribution())
            .expect("posterior mean is a valid model")
    }

    /// One model `M ~ f(· | D)`.
    pub fn sample_mdp(&self, seed: u64) -> TabularMdp {
        let mut rng = seeded(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> TabularMdp {
        let (n, na) = (self.num_states(), self.num_actions());
        let mut transition = Vec::with_capacity(na * n * n);
        for a in 0..na {
            for s in 0..n {
                transition.extend(sample_dirichlet(&self.dirichlet_row(a, s), rng));
            }
        }
        let mut rewards = Vec::with_capacity(n * na);
        for s in 0..n {
            for a in 0..na {
                rewards.push(self.reward_posterior(s, a).sample_mean(rng));
            }
        }
        TabularMdp::from_flat(n, na, self.horizon, transition, rewards, self.initial_distribution())
            .expect("sampled rows are normalized")
    }

    /// `K` independent draws; model `k` uses stream `derive_seed(seed, k)`.
    pub fn sample_ensemble(&self, k: usize, seed: u64) -> Result<Vec<TabularMdp>> {
        if k < 2 {
            return Err(Error::contract(format!("ensemble size K={k} must be at least 2")));
        }
        Ok((0..k)
            .into_par_iter()
            .map(|i| self.sample_mdp(derive_seed(seed, i as u64)))
            .collect())
    }
}

/// Dirichlet draw by normalized Gamma variates. If every variate underflows
/// (all concentrations tiny), the mass goes to the largest concentration.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        let (best, _) = crate::mdp::argmax(alpha.iter().copied());
        draws
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = if i == best { 1.0 } else { 0.0 });
    }
    draws
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Step, Trajectory};

    fn dataset(episodes: Vec<Vec<(usize, usize, f64)>>, n: usize, na: usize) -> Dataset {
        let horizon = episodes[0].len();
        let eps = episodes
            .into_iter()
            .map(|e| Trajectory {
                steps: e
                    .into_iter()
                    .map(|(state, action, reward)| Step { state, action, reward })
                    .collect(),
            })
            .collect();
        Dataset::new(n, na, horizon, eps).unwrap()
    }

    #[test]
    fn empty_dataset_leaves_prior() {
        let post = PosteriorModel::weak(3, 2, 4, InitialMode::Empirical).unwrap();
        let fitted = post.fit(&Dataset::empty(3, 2, 4).unwrap()).unwrap();
        assert_eq!(fitted, post);
        assert_eq!(fitted.reward_posterior(1, 1), NormalGamma::default());
    }

    #[test]
    fn dirichlet_counts_add() {
        let post = PosteriorModel::weak(2, 2, 2, InitialMode::Empirical).unwrap();
        let d = dataset(vec![vec![(0, 1, 0.0), (1, 0, 0.0)]; 3], 2, 2);
        let fitted = post.fit(&d).unwrap();
        assert_eq!(fitted.dirichlet_row(1, 0), vec![1.0, 4.0]);
        // Terminal step contributes a visit but no transition.
        assert_eq!(fitted.stats().visits(1, 0), 3);
        assert_eq!(fitted.stats().transition_visits(1, 0), 0);
        assert_eq!(fitted.stats().total_visits(), 6);
    }

    #[test]
    fn transition_rows_reconcile_with_eligible_visits() {
        let d = dataset(
            vec![
                vec![(0, 1, 0.1), (1, 1, 0.2), (1, 0, 0.3)],
                vec![(1, 0, 0.1), (0, 0, 0.2), (0, 1, 0.3)],
            ],
            2,
            2,
        );
        let stats = SufficientStats::from_dataset(&d);
        for s in 0..2 {
            for a in 0..2 {
                let row: u64 = stats.transition_row(a, s).iter().sum();
                assert_eq!(row, stats.transition_visits(s, a));
            }
        }
        assert_eq!(stats.total_visits(), 6);
    }

    #[test]
    fn constant_reward_posterior_mean() {
        let steps = vec![(0, 0, 0.7); 10];
        let d = dataset(vec![steps; 100], 1, 1);
        let post = PosteriorModel::weak(1, 1, 10, InitialMode::Empirical)
            .unwrap()
            .fit(&d)
            .unwrap();
        // Analytic posterior mean (κ0 μ0 + n x̄) / (κ0 + n).
        let oracle = (0.5 + 1000.0 * 0.7) / 1001.0;
        let ng = post.reward_posterior(0, 0);
        assert!((ng.mu - oracle).abs() < 1e-12);
        assert!((ng.mu - 0.7).abs() < 0.02);
        assert_eq!(ng.kappa, 1001.0);
        assert_eq!(ng.a, 501.0);
    }

    #[test]
    fn normal_gamma_update_matches_sequential_updates() {
        // Batch update equals one-observation-at-a-time updates.
        let prior = NormalGamma {
            mu: 0.2,
            kappa: 2.0,
            a: 1.5,
            b: 0.7,
        };
        let xs = [0.3, -0.1, 0.9, 0.4, 0.0];
        let mut seq = prior;
        for &x in &xs {
            seq = seq.update(1, x, x * x);
        }
        let s1: f64 = xs.iter().sum();
        let s2: f64 = xs.iter().map(|x| x * x).sum();
        let batch = prior.update(xs.len() as u64, s1, s2);
        assert!((seq.mu - batch.mu).abs() < 1e-12);
        assert!((seq.kappa - batch.kappa).abs() < 1e-12);
        assert!((seq.a - batch.a).abs() < 1e-12);
        assert!((seq.b - batch.b).abs() < 1e-12);
    }

    #[test]
    fn sample_is_seed_deterministic() {
        let post = PosteriorModel::weak(3, 2, 4, InitialMode::Empirical).unwrap();
        assert_eq!(post.sample_mdp(9), post.sample_mdp(9));
        assert_ne!(post.sample_mdp(9), post.sample_mdp(10));
    }

    #[test]
    fn concentrated_row_is_near_vertex() {
        let mut prior = Prior::weak(3, 1);
        prior.set_dirichlet_row(0, 0, &[1e9, 1.0, 1.0]).unwrap();
        let post = PosteriorModel::from_prior(prior, 2, InitialMode::Empirical).unwrap();
        for seed in 0..20 {
            let m = post.sample_mdp(seed);
            let row = m.row(0, 0);
            assert!((row[0] - 1.0).abs() < 1e-3);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_sample_mean_matches_analytic() {
        let mut prior = Prior::weak(3, 1);
        let alpha = [2.0, 3.0, 5.0];
        prior.set_dirichlet_row(0, 0, &alpha).unwrap();
        let post = PosteriorModel::from_prior(prior, 1, InitialMode::Empirical).unwrap();
        let n = 10_000;
        let total: f64 = alpha.iter().sum();
        let mut sums = [0.0; 3];
        let mut rng = seeded(77);
        for _ in 0..n {
            let m = post.sample_with(&mut rng);
            for (acc, p) in sums.iter_mut().zip(m.row(0, 0)) {
                *acc += p;
            }
        }
        for i in 0..3 {
            let mean = alpha[i] / total;
            let var = mean * (1.0 - mean) / (total + 1.0);
            let se = (var / n as f64).sqrt();
            assert!((sums[i] / n as f64 - mean).abs() < 3.0 * se);
        }
    }

    #[test]
    fn ensemble_requires_two_and_is_deterministic() {
        let post = PosteriorModel::weak(2, 2, 3, InitialMode::Empirical).unwrap();
        assert!(matches!(post.sample_ensemble(1, 0), Err(Error::Contract(_))));
        let a = post.sample_ensemble(2, 5).unwrap();
        assert_eq!(a.len(), 2);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| post.sample_ensemble(2, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn initial_modes() {
        let d = dataset(
            vec![
                vec![(1, 0, 0.0)],
                vec![(1, 0, 0.0)],
                vec![(0, 0, 0.0)],
                vec![(1, 1, 0.0)],
            ],
            2,
            2,
        );
        let emp = PosteriorModel::weak(2, 2, 1, InitialMode::Empirical).unwrap();
        assert_eq!(emp.initial_distribution(), vec![0.5, 0.5]);
        assert_eq!(emp.fit(&d).unwrap().initial_distribution(), vec![0.25, 0.75]);
        let known = PosteriorModel::weak(2, 2, 1, InitialMode::Known(vec![1.0, 0.0])).unwrap();
        assert_eq!(known.fit(&d).unwrap().sample_mdp(1).initial(), &[1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let post = PosteriorModel::weak(2, 2, 3, InitialMode::Empirical).unwrap();
        let d = Dataset::empty(3, 2, 3).unwrap();
        assert!(matches!(post.fit(&d), Err(Error::Dimension(_))));
    }
}
