//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use safeshield::env::{EnvKind, EnvSpec};
use safeshield::harness::config::ExperimentConfig;
use safeshield::harness::run_experiment;
use safeshield::oracle::{
    suite_containment, suite_finite_mdp, suite_gradients, suite_masking, suite_projection, suite_uniformity,
};
use safeshield::rl::{default_networks, evaluate, Agent, AgentKind};
use safeshield::safety::SafetyVerifier;
use safeshield::shields::{ShieldType, TupleMode};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn quad_verifier() -> SafetyVerifier {
    SafetyVerifier::with_defaults(&EnvSpec::quadrotor()).expect("quadrotor verifier")
}

/// Shielded training with a reduced update cadence: every active shield
/// with every valid tuple, both agents, both environments, 3 seeds.
fn zero_violations(dir: &Path) -> Verdict {
    let mut runs = 0;
    let mut bad = Vec::new();
    let mut rows = 0usize;
    for env in [EnvKind::Pendulum, EnvKind::Quadrotor] {
        for agent in [AgentKind::Dqn, AgentKind::Td3] {
            let mut cfg = ExperimentConfig::defaults(env, agent);
            cfg.shields = vec![ShieldType::ReplaceSample, ShieldType::ReplaceFailsafe, ShieldType::Project, ShieldType::Mask];
            cfg.tuples = TupleMode::ALL.to_vec();
            cfg.seeds = vec![0, 1, 2];
            cfg.agent.steps = 10_000;
            cfg.agent.batch = 32;
            cfg.agent.train_freq = 16;
            cfg.agent.gradient_steps = 1;
            cfg.agent.learning_starts = cfg.agent.learning_starts.min(1_000);
            cfg.out = dir.join(format!("{}_{}", env.name(), agent.name()));
            let report = run_experiment(&cfg).expect("experiment runs");
            for r in &report.runs {
                runs += 1;
                if let Some(e) = &r.error {
                    bad.push(format!("{} {} seed {}: {e}", r.shield.name(), r.tuple.name(), r.seed));
                    continue;
                }
                let mut reader = csv::Reader::from_path(&r.file).expect("run csv");
                for rec in reader.records() {
                    let rec = rec.expect("csv row");
                    rows += 1;
                    if &rec[5] != "0" {
                        bad.push(format!("{}: episode {} has {} violations", r.file.display(), &rec[1], &rec[5]));
                    }
                }
            }
        }
    }
    let detail = format!("{runs} runs, {rows} episode rows, {} with violations or aborts", bad.len());
    verdict(bad.is_empty() && runs == 2 * 2 * 13 * 3, if bad.is_empty() { detail } else { format!("{detail}: {}", bad[0]) })
}

/// Unshielded quadrotor DQN with uniform warmup: share of the first 100
/// episodes with at least one violation.
fn unshielded_failure(dir: &Path) -> Verdict {
    let mut cfg = ExperimentConfig::defaults(EnvKind::Quadrotor, AgentKind::Dqn);
    cfg.shields = vec![ShieldType::None];
    cfg.seeds = vec![0, 1, 2];
    cfg.agent.steps = 100 * cfg.env.horizon;
    cfg.out = dir.join("unshielded");
    let report = run_experiment(&cfg).expect("experiment runs");
    let mut shares = Vec::new();
    let mut step_rates = Vec::new();
    for r in &report.runs {
        let eps = &r.episodes[..r.episodes.len().min(100)];
        shares.push(eps.iter().filter(|e| e.violations > 0).count() as f64 / eps.len() as f64);
        step_rates.push(eps.iter().map(|e| e.violations).sum::<usize>() as f64 / (eps.len() * cfg.env.horizon) as f64);
    }
    let mean = shares.iter().sum::<f64>() / shares.len() as f64;
    verdict(
        mean > 0.2,
        format!("episodes with a violation per seed {shares:.2?} (mean {mean:.2}), violating steps per seed {step_rates:.3?}"),
    )
}

/// Shielded pendulum DQN: evaluation return after 20k steps against the
/// return after 1k steps and the failsafe controller alone.
fn learning_progress(dir: &Path) -> Verdict {
    let mut cfg = ExperimentConfig::defaults(EnvKind::Pendulum, AgentKind::Dqn);
    cfg.shields = vec![ShieldType::Mask];
    cfg.seeds = vec![0, 1, 2];
    cfg.agent.steps = 20_000;
    cfg.eval_every = 1_000;
    cfg.out = dir.join("progress");
    let report = run_experiment(&cfg).expect("experiment runs");
    let verifier = SafetyVerifier::with_defaults(&cfg.env).expect("pendulum verifier");
    let mut good = 0;
    let mut parts = Vec::new();
    for r in &report.runs {
        let at = |step: usize| r.evaluations.iter().find(|e| e.step == step).map(|e| e.return_mean);
        let (Some(first), Some(last)) = (at(1_000), at(20_000)) else {
            parts.push(format!("seed {}: missing evaluations", r.seed));
            continue;
        };
        let failsafe = evaluate(&Agent::Failsafe, ShieldType::ReplaceFailsafe, &cfg.env, &verifier, cfg.eval_episodes, r.seed)
            .expect("failsafe evaluation")
            .return_mean;
        let progress = (last - first) / (failsafe - first);
        if progress >= 0.5 {
            good += 1;
        }
        parts.push(format!("seed {}: 1k {first:.3}, 20k {last:.3}, failsafe {failsafe:.3}, gap closed {progress:.2}", r.seed));
    }
    verdict(good >= 2, format!("{good}/3 seeds close half the gap; {}", parts.join("; ")))
}

/// Two CLI invocations with the same config and seed.
fn determinism(dir: &Path) -> Verdict {
    let bin = env!("CARGO_BIN_EXE_safeshield");
    let configs = [
        ("pendulum", "dqn", "mask", "naive", "2000"),
        ("quadrotor", "td3", "replace_sample", "both", "1000"),
        ("quadrotor", "td3", "project", "both", "1000"),
    ];
    let mut compared = 0;
    for (i, (env, agent, shield, tuple, steps)) in configs.iter().enumerate() {
        let mut outs = Vec::new();
        for k in 0..2 {
            let out = dir.join(format!("det{i}_{k}"));
            let status = Command::new(bin)
                .args(["run", "--env.name", env, "--agent.name", agent, "--shield.type", shield, "--shield.tuple", tuple])
                .args(["--agent.steps", steps, "--experiment.seeds", "7", "--experiment.out"])
                .arg(&out)
                .output()
                .expect("binary runs");
            if !status.status.success() {
                return verdict(
                    false,
                    format!("{env} {shield}: exit {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr).trim()),
                );
            }
            outs.push(out.join("runs"));
        }
        let mut names: Vec<_> = std::fs::read_dir(&outs[0]).expect("runs dir").map(|e| e.expect("entry").file_name()).collect();
        names.sort();
        for name in names {
            let a = std::fs::read(outs[0].join(&name)).expect("first csv");
            let b = std::fs::read(outs[1].join(&name)).expect("second csv");
            if a != b {
                return verdict(false, format!("{} differs", name.to_string_lossy()));
            }
            compared += 1;
        }
    }
    verdict(compared > 0, format!("{compared} per-run CSVs byte-identical across two invocations"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("1 zero violations under every shield and tuple", Box::new(|| zero_violations(dir.path()))),
        ("2 unshielded quadrotor violates", Box::new(|| unshielded_failure(dir.path()))),
        (
            "3 containment matches support oracle",
            Box::new(|| {
                let r = suite_containment(3, 1_000).expect("suite");
                verdict(r.passed, r.detail)
            }),
        ),
        (
            "4 projection optimal within one grid cell",
            Box::new(|| {
                let r = suite_projection(&quad_verifier(), 4, 200, 400).expect("suite");
                verdict(r.passed, r.detail)
            }),
        ),
        (
            "5 continuous masking contract",
            Box::new(|| {
                let r = suite_masking(&quad_verifier(), 5, 1_000).expect("suite");
                verdict(r.passed, r.detail)
            }),
        ),
        (
            "6 shielded MDP closed form",
            Box::new(|| {
                let r = suite_finite_mdp(6, 100_000).expect("suite");
                verdict(r.passed, r.detail)
            }),
        ),
        (
            "7 replacement sampling uniform",
            Box::new(|| {
                let r = suite_uniformity(&quad_verifier(), 7, 10_000, 10).expect("suite");
                verdict(r.passed, r.detail)
            }),
        ),
        (
            "8 gradient checks",
            Box::new(|| {
                let r = suite_gradients(8, &default_networks(), 50).expect("suite");
                verdict(r.passed, r.detail)
            }),
        ),
        ("9 shielded pendulum DQN learns", Box::new(|| learning_progress(dir.path()))),
        ("10 determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let v = check();
        println!(
            "criterion {name}: {} ({}; {:.1} s)",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        failed += !v.passed as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
