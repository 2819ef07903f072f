//! Experiment orchestration: builds the verifier for a configuration, runs
//! the shield × tuple × seed grid, and writes per-run CSVs, an aggregate
//! CSV and a manifest of the resolved configuration.

pub mod cli;
pub mod config;
pub mod metrics;

use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::rl::{action_grid, evaluate_with, train_observed, Agent, AgentKind, TrainSettings};
use crate::safety::{
    compute_invariant_set, load_safe_set, verify_failsafe, FailsafeController, InvariantOptions, SafeSetSource,
    SafetyVerifier,
};
use crate::shields::{ShieldType, TupleMode};
use crate::{Error, Result};
use config::ExperimentConfig;
use metrics::{mean_std, EpisodeMetrics, EvalSummary};

/// Columns of every per-run CSV.
pub const RUN_HEADER: [&str; 10] = [
    "step",
    "episode",
    "return",
    "intervention_rate",
    "mask_volume_ratio",
    "violations",
    "shield",
    "tuple",
    "agent",
    "seed",
];

pub const AGGREGATE_HEADER: [&str; 14] = [
    "agent",
    "shield",
    "tuple",
    "episode",
    "step",
    "runs",
    "return_mean",
    "return_std",
    "intervention_rate_mean",
    "intervention_rate_std",
    "mask_volume_ratio_mean",
    "mask_volume_ratio_std",
    "violations_mean",
    "violations_std",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "agent",
    "shield",
    "tuple",
    "seed",
    "step",
    "episodes",
    "return_mean",
    "return_std",
    "intervention_mean",
    "intervention_std",
    "violation_mean",
    "violation_std",
];

/// Failsafe controller, safe set and verifier described by `cfg`. Loaded
/// sets are checked against the specification box and re-certified.
pub fn build_verifier(cfg: &ExperimentConfig) -> Result<SafetyVerifier> {
    let spec = &cfg.env;
    let (model, w) = spec.verification_model()?;
    let controller = match &cfg.gain {
        Some(k) => FailsafeController::for_spec(spec, k.clone())?,
        None => FailsafeController::lqr_default(spec, &model)?,
    };
    let spec_set = spec.spec_polytope();
    let set = match (&cfg.set_path, cfg.compute_set) {
        (Some(path), false) => load_safe_set(path, &spec.equilibrium, Some(&spec_set))?,
        _ => {
            let opts = InvariantOptions { max_iterations: cfg.max_iterations, ..InvariantOptions::default() };
            compute_invariant_set(&model, &controller, &spec_set, &w, &opts)?
        }
    };
    if !verify_failsafe(&set, &controller, &model, &w)? {
        return Err(Error::Certificate("the failsafe controller does not keep the safe set invariant".into()));
    }
    SafetyVerifier::new(model, w, set, controller, spec_set)
}

/// One finished (or aborted) run of the grid.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub shield: ShieldType,
    pub tuple: TupleMode,
    pub seed: u64,
    pub file: PathBuf,
    pub episodes: Vec<EpisodeMetrics>,
    pub evaluations: Vec<EvalSummary>,
    pub fallbacks: usize,
    /// Trained agent, `None` when the run aborted.
    pub agent: Option<Agent>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out: PathBuf,
    pub runs: Vec<RunOutcome>,
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|r| r.error.is_some())
    }
}

struct Job {
    shield: ShieldType,
    tuple: TupleMode,
    seed: u64,
    file: PathBuf,
}

fn jobs(cfg: &ExperimentConfig, dir: &Path) -> Vec<Job> {
    let mut out = Vec::new();
    for (shield, tuple) in cfg.combinations() {
        for (i, &seed) in cfg.seeds.iter().enumerate() {
            let repeat = cfg.seeds[..i].iter().filter(|&&s| s == seed).count();
            let mut name = format!("{}_{}_seed{seed}", shield.name(), tuple.name());
            if repeat > 0 {
                name.push_str(&format!("_{repeat}"));
            }
            out.push(Job { shield, tuple, seed, file: dir.join(format!("{name}.csv")) });
        }
    }
    out
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn run_job(cfg: &ExperimentConfig, verifier: &SafetyVerifier, job: &Job) -> RunOutcome {
    let mut outcome = RunOutcome {
        shield: job.shield,
        tuple: job.tuple,
        seed: job.seed,
        file: job.file.clone(),
        episodes: Vec::new(),
        evaluations: Vec::new(),
        fallbacks: 0,
        agent: None,
        error: None,
    };
    let result = (|| -> Result<(Agent, crate::rl::RunLog)> {
        let mut writer = csv::Writer::from_writer(create(&job.file)?);
        writer.write_record(RUN_HEADER)?;
        writer.flush().map_err(|e| Error::io(&job.file, e))?;
        let mut agent = Agent::new(&cfg.agent, &cfg.env, job.seed)?;
        let settings = TrainSettings {
            shield: job.shield,
            tuple: job.tuple,
            penalty: cfg.penalty,
            proj_dist_coef: cfg.proj_dist_coef,
            reset: cfg.reset,
            eval_every: cfg.eval_every,
            eval_episodes: cfg.eval_episodes,
            env_seed: cfg.env_seed,
        };
        let (shield, tuple, agent_name) = (job.shield.name(), job.tuple.name(), cfg.agent.kind.name());
        let seed = job.seed.to_string();
        let log = train_observed(&mut agent, &cfg.agent, &settings, &cfg.env, verifier, job.seed, &mut |m| {
            writer.write_record([
                m.step.to_string(),
                m.episode.to_string(),
                m.ret.to_string(),
                m.intervention_rate.to_string(),
                m.mask_volume_ratio.map(|r| r.to_string()).unwrap_or_default(),
                m.violations.to_string(),
                shield.to_string(),
                tuple.to_string(),
                agent_name.to_string(),
                seed.clone(),
            ])?;
            writer.flush().map_err(|e| Error::io(&job.file, e))
        })?;
        Ok((agent, log))
    })();
    match result {
        Ok((agent, log)) => {
            outcome.episodes = log.episodes;
            outcome.evaluations = log.evaluations;
            outcome.fallbacks = log.fallbacks;
            outcome.agent = Some(agent);
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome
}

/// Runs the full grid and writes `runs/*.csv`, `aggregate.csv`,
/// `evaluations.csv` (when periodic evaluation is on) and `manifest.json`
/// under `cfg.out`.
///
/// Runs that abort keep their partial CSV and are reported in the result
/// rather than as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let verifier = build_verifier(cfg)?;
    run_with_verifier(cfg, &verifier)
}

/// [`run_experiment`] with a prebuilt verifier.
pub fn run_with_verifier(cfg: &ExperimentConfig, verifier: &SafetyVerifier) -> Result<ExperimentReport> {
    let runs_dir = cfg.out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let jobs = jobs(cfg, &runs_dir);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<RunOutcome> = pool.install(|| jobs.par_iter().map(|j| run_job(cfg, verifier, j)).collect());
    let report = ExperimentReport { out: cfg.out.clone(), runs };
    write_aggregate(&cfg.out.join("aggregate.csv"), cfg.agent.kind, &report.runs)?;
    if cfg.eval_every > 0 {
        let rows: Vec<_> = report
            .runs
            .iter()
            .flat_map(|r| r.evaluations.iter().map(move |e| (r.shield, r.tuple, r.seed.to_string(), e.clone())))
            .collect();
        write_summaries(&cfg.out.join("evaluations.csv"), cfg.agent.kind.name(), &rows)?;
    }
    write_manifest(cfg, verifier, &report)?;
    Ok(report)
}

/// Per-episode-index mean and population standard deviation across the
/// runs of each shield/tuple pair. Values are sorted before summation so
/// the result does not depend on seed order.
pub fn write_aggregate(path: &Path, agent: AgentKind, runs: &[RunOutcome]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(AGGREGATE_HEADER)?;
    let mut pairs: Vec<(ShieldType, TupleMode)> = Vec::new();
    for r in runs {
        if !pairs.contains(&(r.shield, r.tuple)) {
            pairs.push((r.shield, r.tuple));
        }
    }
    for (shield, tuple) in pairs {
        let group: Vec<&RunOutcome> =
            runs.iter().filter(|r| r.shield == shield && r.tuple == tuple && r.error.is_none()).collect();
        let len = group.iter().map(|r| r.episodes.len()).max().unwrap_or(0);
        for k in 0..len {
            let eps: Vec<&EpisodeMetrics> = group.iter().filter_map(|r| r.episodes.get(k)).collect();
            let stat = |f: &dyn Fn(&EpisodeMetrics) -> Option<f64>| {
                let mut xs: Vec<f64> = eps.iter().filter_map(|e| f(e)).collect();
                if xs.is_empty() {
                    return (String::new(), String::new());
                }
                xs.sort_by(f64::total_cmp);
                let (m, s) = mean_std(&xs);
                (m.to_string(), s.to_string())
            };
            let (rm, rs) = stat(&|e| Some(e.ret));
            let (im, is) = stat(&|e| Some(e.intervention_rate));
            let (mm, ms) = stat(&|e| e.mask_volume_ratio);
            let (vm, vs) = stat(&|e| Some(e.violations as f64));
            writer.write_record([
                agent.name().to_string(),
                shield.name().to_string(),
                tuple.name().to_string(),
                k.to_string(),
                eps[0].step.to_string(),
                eps.len().to_string(),
                rm,
                rs,
                im,
                is,
                mm,
                ms,
                vm,
                vs,
            ])?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes evaluation summaries, one row each.
pub fn write_summaries(path: &Path, agent: &str, rows: &[(ShieldType, TupleMode, String, EvalSummary)]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(SUMMARY_HEADER)?;
    for (shield, tuple, seed, e) in rows {
        writer.write_record([
            agent.to_string(),
            shield.name().to_string(),
            tuple.name().to_string(),
            seed.clone(),
            e.step.to_string(),
            e.episodes.to_string(),
            e.return_mean.to_string(),
            e.return_std.to_string(),
            e.intervention_mean.to_string(),
            e.intervention_std.to_string(),
            e.violation_mean.to_string(),
            e.violation_std.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn write_manifest(cfg: &ExperimentConfig, verifier: &SafetyVerifier, report: &ExperimentReport) -> Result<()> {
    let config: serde_json::Map<String, serde_json::Value> =
        cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v.into())).collect();
    let source = match &verifier.safe_set().source {
        SafeSetSource::Computed => "computed".to_string(),
        SafeSetSource::Loaded(p) => p.to_string_lossy().into_owned(),
    };
    let runs: Vec<serde_json::Value> = report
        .runs
        .iter()
        .map(|r| {
            serde_json::json!({
                "shield": r.shield.name(),
                "tuple": r.tuple.name(),
                "seed": r.seed,
                "file": r.file.strip_prefix(&cfg.out).unwrap_or(&r.file).to_string_lossy(),
                "episodes": r.episodes.len(),
                "fallbacks": r.fallbacks,
                "error": r.error,
            })
        })
        .collect();
    let mut manifest = serde_json::json!({
        "config": config,
        "safe_set": { "rows": verifier.safe_set().polytope.num_rows(), "source": source },
        "runs": runs,
    });
    if cfg.agent.kind == AgentKind::Dqn {
        manifest["action_grid"] = serde_json::json!({
            "per_dim": cfg.agent.actions,
            "actions": action_grid(&cfg.env.action_box, cfg.agent.actions).len(),
        });
    }
    let path = cfg.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Input(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Greedy deployment episodes of a trained agent with its shield active.
pub fn evaluate_deployment(
    cfg: &ExperimentConfig,
    verifier: &SafetyVerifier,
    agent: &Agent,
    shield: ShieldType,
    seed: u64,
) -> Result<EvalSummary> {
    let mut summary = evaluate_with(agent, shield, &cfg.env, verifier, cfg.eval_episodes, seed, cfg.env_seed)?;
    summary.step = cfg.agent.steps;
    Ok(summary)
}

/// Trains the grid, then evaluates every trained agent and the failsafe
/// controller alone; writes `deployment.csv` next to the training outputs.
pub fn run_deployment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let verifier = build_verifier(cfg)?;
    let report = run_with_verifier(cfg, &verifier)?;
    let mut rows = Vec::new();
    for r in &report.runs {
        if let Some(agent) = &r.agent {
            rows.push((r.shield, r.tuple, r.seed.to_string(), evaluate_deployment(cfg, &verifier, agent, r.shield, r.seed)?));
        }
    }
    write_summaries(&cfg.out.join("deployment.csv"), cfg.agent.kind.name(), &rows)?;
    let reference = evaluate_deployment(cfg, &verifier, &Agent::Failsafe, ShieldType::ReplaceFailsafe, cfg.seeds[0])?;
    let path = cfg.out.join("deployment_failsafe.csv");
    write_summaries(&path, "failsafe", &[(ShieldType::ReplaceFailsafe, TupleMode::Naive, cfg.seeds[0].to_string(), reference)])?;
    Ok(report)
}
