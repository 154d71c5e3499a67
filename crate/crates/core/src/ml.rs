//! Count-based (maximum-likelihood) model tables.

use crate::dataset::Dataset;
use crate::mdp::TabularMdp;
use crate::posterior::SufficientStats;

#[derive(Debug, Clone)]
pub struct MlTables {
    pub model: TabularMdp,
    pub stats: SufficientStats,
    /// `(s, a)` rows with no observed transition (set to uniform).
    pub unseen_transition_rows: usize,
    /// `(s, a)` cells never visited (reward set to 0).
    pub unseen_reward_cells: usize,
}

/// `P̂(s'|s,a)` divides by transition-eligible visits, `R̂(s,a)` by all visits.
/// Empty rows become uniform, unvisited rewards 0, and `P0` is the empirical
/// first-state distribution (uniform for an empty dataset).
pub fn ml_tables(data: &Dataset) -> MlTables {
    let stats = SufficientStats::from_dataset(data);
    let (n, na) = (data.num_states(), data.num_actions());
    let mut unseen_transition_rows = 0;
    let mut unseen_reward_cells = 0;
    let mut transition = Vec::with_capacity(na * n * n);
    for a in 0..na {
        for s in 0..n {
            let total = stats.transition_visits(s, a);
            if total == 0 {
                unseen_transition_rows += 1;
                transition.extend(std::iter::repeat_n(1.0 / n as f64, n));
            } else {
                transition.extend(stats.transition_row(a, s).iter().map(|&c| c as f64 / total as f64));
            }
        }
    }
    let mut rewards = Vec::with_capacity(n * na);
    for s in 0..n {
        for a in 0..na {
            let visits = stats.visits(s, a);
            if visits == 0 {
                unseen_reward_cells += 1;
                rewards.push(0.0);
            } else {
                rewards.push(stats.reward_sum(s, a) / visits as f64);
            }
        }
    }
    let initial = data.empirical_initial().unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let model = TabularMdp::from_flat(n, na, data.horizon(), transition, rewards, initial)
        .expect("count ratios form valid distributions");
    if unseen_transition_rows > 0 {
        log::warn!("{unseen_transition_rows} (s, a) rows unseen in data; using uniform transitions");
    }
    MlTables {
        model,
        stats,
        unseen_transition_rows,
        unseen_reward_cells,
    }
}
