use std::path::Path;
use std::process::{Command, Output};

fn safeshield(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safeshield"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SAFESHIELD_OUT")
        .output()
        .expect("binary runs")
}

#[test]
fn safeset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = safeshield(&["safeset", "--env", "pendulum", "--out", "sets/pend.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("sets/pend.txt").exists());
    let out = safeshield(&["safeset", "--verify", "sets/pend.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oversized_set_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    // a set sticking out of the pendulum specification box
    std::fs::write(dir.path().join("big.txt"), "4 2\n1 0 2\n-1 0 2\n0 1 1\n0 -1 1\n").unwrap();
    let out = safeshield(&["safeset", "--verify", "big.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["run", "--config", "missing.cfg"],
        vec!["run", "--no-such-flag", "1"],
        vec!["run", "--agent.gamma", "1.5"],
        vec!["run", "--shield.type", "mask", "--shield.tuple", "both"],
        vec!["eval", "--env.name", "cartpole"],
        vec![],
    ] {
        let out = safeshield(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    std::fs::write(dir.path().join("bad.cfg"), "agent.bogus = 3\n").unwrap();
    assert_eq!(safeshield(&["run", "--config", "bad.cfg"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("bad2.cfg"), "no equals sign\n").unwrap();
    assert_eq!(safeshield(&["run", "--config", "bad2.cfg"], dir.path()).status.code(), Some(2));
}

#[test]
fn help_documents_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let top = String::from_utf8(safeshield(&["--help"], dir.path()).stdout).unwrap();
    let run = String::from_utf8(safeshield(&["run", "--help"], dir.path()).stdout).unwrap();
    for (key, _) in safeshield::harness::config::KEYS {
        assert!(top.contains(key), "top-level help misses {key}");
        assert!(run.contains(&format!("--{key}")), "run help misses {key}");
    }
}

#[test]
fn unshielded_quadrotor_run_violates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "env.name = quadrotor\nagent.name = dqn\nshield.type = none\nagent.steps = 1000\n";
    std::fs::write(dir.path().join("quad.cfg"), cfg).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_safeshield"))
        .args(["run", "--config", "quad.cfg"])
        .current_dir(dir.path())
        .env("SAFESHIELD_OUT", "env_out")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("env_out/runs/none_naive_seed0.csv")).unwrap();
    let total: usize = reader.records().map(|r| r.unwrap()[5].parse::<usize>().unwrap()).sum();
    assert!(total > 0);
}

#[test]
fn flag_beats_env_var_for_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_safeshield"))
        .args(["run", "--agent.steps", "0", "--experiment.out", "flag_out"])
        .current_dir(dir.path())
        .env("SAFESHIELD_OUT", "env_out")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("flag_out/manifest.json").exists());
    assert!(!dir.path().join("env_out").exists());
}

#[test]
fn eval_writes_deployment_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = safeshield(
        &["eval", "--agent.steps", "400", "--experiment.eval_episodes", "2", "--shield.type", "mask,replace_failsafe"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("out/deployment.csv")).unwrap();
    let rows: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        // shielded deployment: zero violations, zero spread
        assert_eq!(&r[10], "0");
        assert_eq!(&r[11], "0");
    }
    assert!(dir.path().join("out/deployment_failsafe.csv").exists());
}
