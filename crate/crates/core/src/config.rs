//! Experiment configuration.
//!
//! Plain-text `key = value` lines with dotted block prefixes; `#` starts a
//! comment. Lists are comma separated. Every key can be overridden from the
//! environment as `ESRL_<BLOCK>_<KEY>` (e.g. `ESRL_ENV_NUM_STATES=8`,
//! `ESRL_SEED=3`). Unknown keys are rejected by name.
//!
//! ```text
//! seed = 7
//! env.num_states = 6
//! behavior.epsilon = 0.0, 0.5, 1.0
//! train.alpha = 0.01, 0.05, 0.1
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::KRule;
use crate::env::{ExpertMethod, RiverSwimConfig};
use crate::error::{Error, Result};
use crate::oppe::EvalMode;
use crate::posterior::{NormalGamma, Prior};

pub const ENV_PREFIX: &str = "ESRL_";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: RiverSwimConfig,
    pub epsilon: Vec<f64>,
    pub expert: ExpertMethod,
    pub expert_episodes: usize,
    pub episodes: usize,
    pub prior_dirichlet: f64,
    pub prior_reward: NormalGamma,
    pub alpha: Vec<f64>,
    pub train_k: usize,
    pub eval_k: usize,
    pub credible_level: f64,
    pub eval_mode: EvalMode,
    pub eval_episodes: usize,
    pub npm_episodes: usize,
    pub npme_models: usize,
    pub regret_grid: Vec<usize>,
    pub regret_alpha: Vec<f64>,
    pub regret_replications: usize,
    pub regret_k: KRule,
    /// `(s, t)` cells with 0-based `t`; written 1-based as `s:t`.
    pub posterior_cells: Vec<(usize, usize)>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            env: RiverSwimConfig::default(),
            epsilon: vec![0.2],
            expert: ExpertMethod::ExactDp,
            expert_episodes: 10_000,
            episodes: 1000,
            prior_dirichlet: 1.0,
            prior_reward: NormalGamma::default(),
            alpha: vec![0.01, 0.05, 0.1],
            train_k: 250,
            eval_k: 500,
            credible_level: 0.95,
            eval_mode: EvalMode::ExactDp,
            eval_episodes: 10_000,
            npm_episodes: 1000,
            npme_models: 100,
            regret_grid: vec![50, 100, 200],
            regret_alpha: vec![0.05, 1.0],
            regret_replications: 20,
            regret_k: KRule::Linear { factor: 1.0, min: 50 },
            posterior_cells: vec![(0, 16), (5, 4)],
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| parse(key, v))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(key, "empty list"));
    }
    Ok(items)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_cells(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|cell| {
            let (s, t) = cell
                .split_once(':')
                .ok_or_else(|| Error::config(key, format!("cell `{cell}` is not `s:t`")))?;
            let t: usize = parse(key, t)?;
            if t == 0 {
                return Err(Error::config(key, "steps are numbered from 1"));
            }
            Ok((parse(key, s)?, t - 1))
        })
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "env.num_states" => self.env.num_states = parse(key, v)?,
            "env.horizon" => self.env.horizon = parse(key, v)?,
            "env.left_reward" => self.env.left_reward = parse(key, v)?,
            "env.right_reward" => self.env.right_reward = parse(key, v)?,
            "env.right_success_interior" => self.env.right_success_interior = parse(key, v)?,
            "env.right_stay_interior" => self.env.right_stay_interior = parse(key, v)?,
            "env.right_self_loop_rightmost" => self.env.right_self_loop_rightmost = parse(key, v)?,
            "env.right_success_leftmost" => self.env.right_success_leftmost = parse(key, v)?,
            "env.start_states" => self.env.start_states = parse_list(key, v)?,
            "behavior.epsilon" => self.epsilon = parse_list(key, v)?,
            "behavior.expert" => self.expert = v.parse()?,
            "behavior.expert_episodes" => self.expert_episodes = parse(key, v)?,
            "data.episodes" => self.episodes = parse(key, v)?,
            "prior.dirichlet" => self.prior_dirichlet = parse(key, v)?,
            "prior.mu" => self.prior_reward.mu = parse(key, v)?,
            "prior.kappa" => self.prior_reward.kappa = parse(key, v)?,
            "prior.a" => self.prior_reward.a = parse(key, v)?,
            "prior.b" => self.prior_reward.b = parse(key, v)?,
            "train.alpha" => self.alpha = parse_list(key, v)?,
            "train.k" => self.train_k = parse(key, v)?,
            "eval.k" => self.eval_k = parse(key, v)?,
            "eval.credible_level" => self.credible_level = parse(key, v)?,
            "eval.mode" => self.eval_mode = v.parse()?,
            "eval.episodes" => self.eval_episodes = parse(key, v)?,
            "eval.npm_episodes" => self.npm_episodes = parse(key, v)?,
            "eval.npme_models" => self.npme_models = parse(key, v)?,
            "regret.grid" => self.regret_grid = parse_list(key, v)?,
            "regret.alpha" => self.regret_alpha = parse_list(key, v)?,
            "regret.replications" => self.regret_replications = parse(key, v)?,
            "regret.k" => {
                self.regret_k = match v.strip_suffix('T').map(str::trim) {
                    Some(factor) => KRule::Linear {
                        factor: parse(key, factor)?,
                        min: self.regret_k_min(),
                    },
                    None => KRule::Fixed { k: parse(key, v)? },
                }
            }
            "regret.k_min" => {
                let min = parse(key, v)?;
                if let KRule::Linear { factor, .. } = self.regret_k {
                    self.regret_k = KRule::Linear { factor, min };
                }
            }
            "posteriors.cells" => self.posterior_cells = parse_cells(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    fn regret_k_min(&self) -> usize {
        match self.regret_k {
            KRule::Linear { min, .. } => min,
            KRule::Fixed { .. } => 0,
        }
    }

    /// Every setting as `key -> value`, in the syntax accepted by [`set`](Self::set).
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("env.num_states", self.env.num_states.to_string());
        put("env.horizon", self.env.horizon.to_string());
        put("env.left_reward", self.env.left_reward.to_string());
        put("env.right_reward", self.env.right_reward.to_string());
        put(
            "env.right_success_interior",
            self.env.right_success_interior.to_string(),
        );
        put("env.right_stay_interior", self.env.right_stay_interior.to_string());
        put(
            "env.right_self_loop_rightmost",
            self.env.right_self_loop_rightmost.to_string(),
        );
        put(
            "env.right_success_leftmost",
            self.env.right_success_leftmost.to_string(),
        );
        put("env.start_states", join(&self.env.start_states));
        put("behavior.epsilon", join(&self.epsilon));
        put(
            "behavior.expert",
            match self.expert {
                ExpertMethod::ExactDp => "exact_dp",
                ExpertMethod::PsrlOnline => "psrl_online",
            }
            .into(),
        );
        put("behavior.expert_episodes", self.expert_episodes.to_string());
        put("data.episodes", self.episodes.to_string());
        put("prior.dirichlet", self.prior_dirichlet.to_string());
        put("prior.mu", self.prior_reward.mu.to_string());
        put("prior.kappa", self.prior_reward.kappa.to_string());
        put("prior.a", self.prior_reward.a.to_string());
        put("prior.b", self.prior_reward.b.to_string());
        put("train.alpha", join(&self.alpha));
        put("train.k", self.train_k.to_string());
        put("eval.k", self.eval_k.to_string());
        put("eval.credible_level", self.credible_level.to_string());
        put(
            "eval.mode",
            match self.eval_mode {
                EvalMode::ExactDp => "exact_dp",
                EvalMode::Rollout => "rollout",
            }
            .into(),
        );
        put("eval.episodes", self.eval_episodes.to_string());
        put("eval.npm_episodes", self.npm_episodes.to_string());
        put("eval.npme_models", self.npme_models.to_string());
        put("regret.grid", join(&self.regret_grid));
        put("regret.alpha", join(&self.regret_alpha));
        put("regret.replications", self.regret_replications.to_string());
        match self.regret_k {
            KRule::Fixed { k } => put("regret.k", k.to_string()),
            KRule::Linear { factor, min } => {
                put("regret.k", format!("{factor}T"));
                put("regret.k_min", min.to_string());
            }
        }
        put(
            "posteriors.cells",
            self.posterior_cells
                .iter()
                .map(|(s, t)| format!("{s}:{}", t + 1))
                .collect::<Vec<_>>()
                .join(","),
        );
        put("output.dir", self.output_dir.display().to_string());
        m
    }

    /// Applies settings in map order, except that `regret.k` precedes `regret.k_min`.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in map.iter().filter(|(k, _)| k.as_str() != "regret.k_min") {
            cfg.set(k, v)?;
        }
        if let Some(v) = map.get("regret.k_min") {
            cfg.set("regret.k_min", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected `key = value`"))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    /// `ESRL_<BLOCK>_<KEY>` variables as dotted keys.
    pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> BTreeMap<String, String> {
        vars.into_iter()
            .filter_map(|(name, value)| {
                let rest = name.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                let key = match rest.split_once('_') {
                    Some((block, key)) if block != "seed" => format!("{block}.{key}"),
                    _ => rest,
                };
                Some((key, value))
            })
            .collect()
    }

    /// Defaults, then the file (key=value text or a run manifest), then
    /// environment overrides.
    pub fn load(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let from_file = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str::<Manifest>(&text)?.config
            } else {
                Self::parse_text(&text)?
            };
            map.extend(from_file);
        }
        map.extend(Self::env_overrides(vars));
        Self::from_map(&map)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let unit = |key: &str, xs: &[f64]| {
            if xs.iter().all(|x| (0.0..=1.0).contains(x)) {
                Ok(())
            } else {
                Err(Error::config(key, "values must lie in [0, 1]"))
            }
        };
        unit("behavior.epsilon", &self.epsilon)?;
        unit("train.alpha", &self.alpha)?;
        unit("regret.alpha", &self.regret_alpha)?;
        if self.train_k < 2 {
            return Err(Error::config("train.k", "must be at least 2"));
        }
        if self.eval_k == 0 {
            return Err(Error::config("eval.k", "must be positive"));
        }
        if self.episodes == 0 {
            return Err(Error::config("data.episodes", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.credible_level) {
            return Err(Error::config("eval.credible_level", "must lie in [0, 1)"));
        }
        if self.prior_dirichlet <= 0.0 {
            return Err(Error::config("prior.dirichlet", "must be positive"));
        }
        let ng = &self.prior_reward;
        if !(ng.kappa > 0.0 && ng.a > 0.0 && ng.b > 0.0) {
            return Err(Error::config("prior", "kappa, a and b must be positive"));
        }
        if self.regret_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("regret.grid", "must be strictly ascending"));
        }
        if let Some(&(s, t)) = self
            .posterior_cells
            .iter()
            .find(|(s, t)| *s >= self.env.num_states || *t >= self.env.horizon)
        {
            return Err(Error::config(
                "posteriors.cells",
                format!("cell {s}:{} out of range", t + 1),
            ));
        }
        Ok(())
    }

    pub fn prior(&self, num_states: usize, num_actions: usize) -> Result<Prior> {
        Prior::new(num_states, num_actions, self.prior_dirichlet, self.prior_reward)
    }
}

/// Written next to every output. Loading it through
/// [`ExperimentConfig::load`] reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.to_map(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
