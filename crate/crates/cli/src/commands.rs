use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use esrl_core::behavior::empirical_behavior;
use esrl_core::config::{ExperimentConfig, Manifest};
use esrl_core::diagnostics::{confidence_set_report, estimate_regret_curve, RegretConfig, RegretEstimate};
use esrl_core::env::{generate_dataset, riverswim, train_expert, BehaviorSpec};
use esrl_core::esrl::train_esrl_with_models;
use esrl_core::oppe::{
    compare_policies, monte_carlo_return, npm_value, npme_value, posterior_value, step_is, step_wis, EvaluationReport,
    ValueOptions,
};
use esrl_core::rng::{derive_seed, derive_seed2};
use esrl_core::{Dataset, Error, PolicyFile, PosteriorModel, Result, TabularMdp, TimedPolicy};
use serde::Serialize;

use crate::{Cli, Command, EvalTarget, Format};

struct Run {
    cfg: ExperimentConfig,
    /// Input paths recorded by a replayed manifest.
    replay_inputs: BTreeMap<String, String>,
    format: Format,
    manifest: Manifest,
}

impl Run {
    fn out_dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    /// Explicit flag, else the path recorded in a replayed manifest.
    fn input(&mut self, name: &str, flag: &Option<PathBuf>) -> Result<PathBuf> {
        let path = match flag {
            Some(p) => p.clone(),
            None => self
                .replay_inputs
                .get(name)
                .map(PathBuf::from)
                .ok_or_else(|| Error::config(format!("--{}", name.replace('_', "-")), "required input missing"))?,
        };
        self.manifest
            .inputs
            .insert(name.to_string(), path.display().to_string());
        Ok(path)
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.out_dir().join(name)
    }

    fn ext(&self) -> &'static str {
        match self.format {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    fn finish(&self) -> Result<()> {
        self.manifest
            .save(&self.out_dir().join(format!("{}_manifest.json", self.manifest.command)))
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Generate => "generate",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Posteriors { .. } => "posteriors",
        Command::Compare { .. } => "compare",
        Command::Regret => "regret",
        Command::Confset { .. } => "confset",
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("--threads", e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    let replay_inputs = match &cli.config {
        Some(p) if p.extension().is_some_and(|e| e == "json") => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<Manifest>(&text)?.inputs
        }
        _ => BTreeMap::new(),
    };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let manifest = Manifest::new(command_name(&cli.command), &cfg);
    let mut run = Run {
        cfg,
        replay_inputs,
        format: cli.format,
        manifest,
    };
    match &cli.command {
        Command::Generate => generate(&mut run),
        Command::Train { data } => train(&mut run, data),
        Command::Evaluate { policy, mode, data } => evaluate(&mut run, policy, *mode, data),
        Command::Posteriors { data, cells, alpha } => posteriors(&mut run, data, cells, *alpha),
        Command::Compare {
            data,
            policy_a,
            policy_b,
        } => compare(&mut run, data, policy_a, policy_b),
        Command::Regret => regret(&mut run),
        Command::Confset { data } => confset(&mut run, data),
    }?;
    run.finish()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, format: Format, rows: &[T]) -> Result<()> {
    match format {
        Format::Json => write_json(path, &rows),
        Format::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            for row in rows {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

fn load_policy(path: &Path) -> Result<TimedPolicy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str::<PolicyFile>(&text)?.to_policy()
}

fn environment(cfg: &ExperimentConfig) -> Result<TabularMdp> {
    riverswim(&cfg.env)
}

fn expert_policy(cfg: &ExperimentConfig, env: &TabularMdp) -> Result<TimedPolicy> {
    train_expert(env, cfg.expert, cfg.expert_episodes, derive_seed(cfg.seed, 1))
}

fn posterior(cfg: &ExperimentConfig, data: &Dataset) -> Result<PosteriorModel> {
    let prior = cfg.prior(data.num_states(), data.num_actions())?;
    PosteriorModel::from_prior(prior, data.horizon(), esrl_core::InitialMode::Empirical)?.fit(data)
}

fn check_policy_dims(policy: &TimedPolicy, data: &Dataset) -> Result<()> {
    if policy.num_states() != data.num_states()
        || policy.num_actions() != data.num_actions()
        || policy.horizon() != data.horizon()
    {
        return Err(Error::Dimension("policy file does not match the dataset header".into()));
    }
    Ok(())
}

fn generate(run: &mut Run) -> Result<()> {
    let env = environment(&run.cfg)?;
    let expert = expert_policy(&run.cfg, &env)?;
    let expert_path = run.output("expert.json");
    write_json(&expert_path, &PolicyFile::from_policy(&expert))?;
    for (i, &eps) in run.cfg.epsilon.clone().iter().enumerate() {
        let spec = BehaviorSpec::new(expert.clone(), eps)?;
        let data = generate_dataset(&env, &spec, run.cfg.episodes, derive_seed2(run.cfg.seed, 2, i as u64))?;
        let path = run.output(&format!("data_eps{eps}.jsonl"));
        data.save(&path)?;
        log::info!("wrote {} episodes to {}", data.len(), path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct NullRow {
    s: usize,
    t: usize,
    behavior: usize,
    proposal: usize,
    action: usize,
    null_prob: f64,
    deviated: bool,
}

fn train(run: &mut Run, data_flag: &Option<PathBuf>) -> Result<()> {
    let data = Dataset::load(&run.input("data", data_flag)?)?;
    let post = posterior(&run.cfg, &data)?;
    let (_, behavior) = empirical_behavior(&data)?;
    let behavior_path = run.output("behavior.json");
    write_json(&behavior_path, &PolicyFile::from_policy(&behavior))?;
    let models = post.sample_ensemble(run.cfg.train_k, derive_seed(run.cfg.seed, 10))?;
    for alpha in run.cfg.alpha.clone() {
        let result = train_esrl_with_models(&models, &behavior, alpha, derive_seed(run.cfg.seed, 11))?;
        let policy_path = run.output(&format!("policy_alpha{alpha}.json"));
        write_json(&policy_path, &result.export())?;
        let mut rows = Vec::new();
        for s in 0..data.num_states() {
            for t in 0..data.horizon() {
                rows.push(NullRow {
                    s,
                    t: t + 1,
                    behavior: behavior.action(s, t),
                    proposal: result.proposal.action(s, t),
                    action: result.policy.action(s, t),
                    null_prob: result.null_prob[s][t],
                    deviated: result.deviated[s][t],
                });
            }
        }
        let ext = run.ext();
        let table_path = run.output(&format!("null_prob_alpha{alpha}.{ext}"));
        write_rows(&table_path, run.format, &rows)?;
        log::info!("alpha={alpha}: {} deviations from behavior", result.num_deviations());
    }
    Ok(())
}

#[derive(Serialize)]
struct RolloutRow {
    mode: &'static str,
    episodes: usize,
    mean: f64,
    se: f64,
    exact: f64,
    seed: u64,
}

#[derive(Serialize)]
struct ReportRow {
    estimator_name: String,
    point: f64,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
    #[serde(rename = "K")]
    k: Option<usize>,
    seed: u64,
    warnings: String,
}

fn evaluate(run: &mut Run, policy_flag: &Option<PathBuf>, mode: EvalTarget, data_flag: &Option<PathBuf>) -> Result<()> {
    let policy = load_policy(&run.input("policy", policy_flag)?)?;
    let seed = run.cfg.seed;
    let ext = run.ext();
    match mode {
        EvalTarget::TrueEnvRollout => {
            let env = environment(&run.cfg)?;
            let (mean, se) = monte_carlo_return(&env, &policy, run.cfg.eval_episodes, derive_seed(seed, 20))?;
            let exact = esrl_core::exact_policy_value(&env, &policy)?.start_value(env.initial());
            let row = RolloutRow {
                mode: "true_env_rollout",
                episodes: run.cfg.eval_episodes,
                mean,
                se,
                exact,
                seed,
            };
            let path = run.output(&format!("evaluation.{ext}"));
            write_rows(&path, run.format, &[row])
        }
        EvalTarget::Oppe => {
            let data = Dataset::load(&run.input("data", data_flag)?)?;
            check_policy_dims(&policy, &data)?;
            let post = posterior(&run.cfg, &data)?;
            let (dist, _) = empirical_behavior(&data)?;
            let options = ValueOptions {
                mode: run.cfg.eval_mode,
                credible_level: run.cfg.credible_level,
                ..ValueOptions::new(run.cfg.eval_k)
            };
            let vp = posterior_value(&post, &policy, &options, derive_seed(seed, 21))?;
            let is = step_is(&data, &dist, &policy)?;
            let wis = step_wis(&data, &dist, &policy)?;
            let npm = npm_value(&data, &policy, run.cfg.npm_episodes, derive_seed(seed, 22))?;
            let npme = npme_value(
                &data,
                &policy,
                run.cfg.npm_episodes,
                run.cfg.npme_models,
                derive_seed(seed, 23),
            )?;
            let reports = vec![
                EvaluationReport::from_posterior("posterior", &vp, seed),
                EvaluationReport::point_only("step_is", is.value, seed, is.warnings),
                EvaluationReport::point_only("step_wis", wis.value, seed, wis.warnings),
                EvaluationReport::point_only("npm", npm, seed, Vec::new()),
                EvaluationReport::point_only("npme", npme, seed, Vec::new()),
            ];
            let samples_path = run.output("posterior_samples.csv");
            let file = fs::File::create(&samples_path).map_err(|e| Error::io(&samples_path, e))?;
            esrl_core::oppe::write_samples_csv(file, &vp.samples)?;
            let path = run.output(&format!("evaluation.{ext}"));
            match run.format {
                Format::Json => write_json(&path, &reports),
                Format::Csv => {
                    let rows: Vec<ReportRow> = reports
                        .into_iter()
                        .map(|r| ReportRow {
                            estimator_name: r.estimator_name,
                            point: r.point,
                            ci_lower: r.ci_lower,
                            ci_upper: r.ci_upper,
                            k: r.num_models,
                            seed: r.seed,
                            warnings: r.warnings.join("; "),
                        })
                        .collect();
                    write_rows(&path, Format::Csv, &rows)
                }
            }
        }
    }
}

#[derive(Serialize)]
struct QRow {
    cell: String,
    action: usize,
    k: usize,
    q: f64,
}

fn parse_cell(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::config("--cell", format!("`{text}` is not `s:t` with t >= 1"));
    let (s, t) = text.split_once(':').ok_or_else(bad)?;
    let s: usize = s.trim().parse().map_err(|_| bad())?;
    let t: usize = t.trim().parse().map_err(|_| bad())?;
    if t == 0 {
        return Err(bad());
    }
    Ok((s, t - 1))
}

fn posteriors(run: &mut Run, data_flag: &Option<PathBuf>, cell_flags: &[String], alpha: Option<f64>) -> Result<()> {
    let data = Dataset::load(&run.input("data", data_flag)?)?;
    let cells = if cell_flags.is_empty() {
        run.cfg.posterior_cells.clone()
    } else {
        cell_flags.iter().map(|c| parse_cell(c)).collect::<Result<_>>()?
    };
    if let Some(&(s, t)) = cells
        .iter()
        .find(|(s, t)| *s >= data.num_states() || *t >= data.horizon())
    {
        return Err(Error::config(
            "--cell",
            format!("cell {s}:{} outside the dataset", t + 1),
        ));
    }
    let alpha = alpha.unwrap_or(run.cfg.alpha[0]);
    let post = posterior(&run.cfg, &data)?;
    let (_, behavior) = empirical_behavior(&data)?;
    let models = post.sample_ensemble(run.cfg.train_k, derive_seed(run.cfg.seed, 10))?;
    let result = train_esrl_with_models(&models, &behavior, alpha, derive_seed(run.cfg.seed, 11))?;
    let mut rows = Vec::new();
    for (s, t) in cells {
        let q = result.q_samples(&models, s, t)?;
        for (action, samples) in q.iter().enumerate() {
            for (k, &value) in samples.iter().enumerate() {
                rows.push(QRow {
                    cell: format!("{s}:{}", t + 1),
                    action,
                    k,
                    q: value,
                });
            }
        }
    }
    let ext = run.ext();
    let path = run.output(&format!("posteriors.{ext}"));
    write_rows(&path, run.format, &rows)
}

#[derive(Serialize)]
struct CompareRow {
    policy_a: String,
    policy_b: String,
    null_prob_estimate: f64,
    #[serde(rename = "K")]
    k: usize,
    seed: u64,
}

fn compare(
    run: &mut Run,
    data_flag: &Option<PathBuf>,
    a_flag: &Option<PathBuf>,
    b_flag: &Option<PathBuf>,
) -> Result<()> {
    let data = Dataset::load(&run.input("data", data_flag)?)?;
    let a_path = run.input("policy_a", a_flag)?;
    let b_path = run.input("policy_b", b_flag)?;
    let (pa, pb) = (load_policy(&a_path)?, load_policy(&b_path)?);
    check_policy_dims(&pa, &data)?;
    check_policy_dims(&pb, &data)?;
    let post = posterior(&run.cfg, &data)?;
    let cmp = compare_policies(&post, &pa, &pb, run.cfg.eval_k, derive_seed(run.cfg.seed, 30))?;
    let row = CompareRow {
        policy_a: a_path.display().to_string(),
        policy_b: b_path.display().to_string(),
        null_prob_estimate: cmp.null_prob_estimate,
        k: cmp.num_models,
        seed: run.cfg.seed,
    };
    let ext = run.ext();
    let path = run.output(&format!("comparison.{ext}"));
    write_rows(&path, run.format, &[row])
}

#[derive(Serialize)]
struct RegretRow {
    #[serde(rename = "T")]
    episodes: usize,
    mean_regret: f64,
    se: f64,
    alpha: f64,
    #[serde(rename = "K")]
    k: usize,
    cumulative: f64,
    oracle_borderline_cells: f64,
}

fn regret(run: &mut Run) -> Result<()> {
    let env = environment(&run.cfg)?;
    let expert = expert_policy(&run.cfg, &env)?;
    let mut rows = Vec::new();
    for (i, &alpha) in run.cfg.regret_alpha.iter().enumerate() {
        let config = RegretConfig {
            epsilon: run.cfg.epsilon[0],
            episode_grid: run.cfg.regret_grid.clone(),
            alpha,
            k_rule: run.cfg.regret_k,
            replications: run.cfg.regret_replications,
            seed: derive_seed2(run.cfg.seed, 40, i as u64),
        };
        let curve: Vec<RegretEstimate> = estimate_regret_curve(&env, &expert, &config)?;
        rows.extend(curve.into_iter().map(|e| RegretRow {
            episodes: e.episodes,
            mean_regret: e.mean_regret,
            se: e.se,
            alpha: e.alpha,
            k: e.num_models,
            cumulative: e.cumulative,
            oracle_borderline_cells: e.oracle_borderline_cells,
        }));
    }
    let ext = run.ext();
    let path = run.output(&format!("regret_curve.{ext}"));
    write_rows(&path, run.format, &rows)
}

#[derive(Serialize)]
struct ConfsetSummary {
    episodes: usize,
    candidate: &'static str,
    member: bool,
    violations: Vec<(usize, usize)>,
}

fn confset(run: &mut Run, data_flag: &Option<PathBuf>) -> Result<()> {
    let data = Dataset::load(&run.input("data", data_flag)?)?;
    let env = environment(&run.cfg)?;
    if env.num_states() != data.num_states() || env.num_actions() != data.num_actions() {
        return Err(Error::Dimension(
            "configured environment does not match the dataset".into(),
        ));
    }
    let report = confidence_set_report(&data, std::slice::from_ref(&env))?;
    let ext = run.ext();
    let path = run.output(&format!("confset_report.{ext}"));
    write_rows(&path, run.format, &report.rows())?;
    let summary = ConfsetSummary {
        episodes: report.episodes,
        candidate: "environment",
        member: report.candidates[0].member,
        violations: report.candidates[0].violations.clone(),
    };
    let summary_path = run.output("confset_summary.json");
    write_json(&summary_path, &summary)
}
