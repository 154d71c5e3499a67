//! Tabular offline Bayesian reinforcement learning.
//!
//! * [`posterior`]: conjugate Dirichlet / Normal-Gamma model of an unknown MDP.
//! * [`esrl`]: expert-supervised policy learning that only departs from the
//!   logged behavior where the posterior is confident it helps.
//! * [`oppe`]: posterior and classical off-policy value estimates.
//! * [`env`]: RiverSwim, expert training and noisy data generation.
//! * [`diagnostics`]: confidence-set coverage and regret probes.
//!
//! Time is 0-based in the API (`t` in `0..horizon`) and 1-based in files.

pub mod behavior;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod esrl;
pub mod mdp;
pub mod ml;
pub mod oppe;
pub mod posterior;
pub mod rng;

pub use behavior::{empirical_behavior, BehaviorDistribution};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use esrl::{train_esrl, EsrlConfig, EsrlResult, PolicyFile};
pub use mdp::{exact_optimal_policy, exact_policy_value, TabularMdp, TimedPolicy, ValueTable};
pub use posterior::{InitialMode, PosteriorModel, Prior};
