use std::collections::BTreeMap;
use std::path::Path;

use safeshield::env::EnvKind;
use safeshield::harness::config::{parse_config, ExperimentConfig, KEYS};
use safeshield::harness::metrics::{intervention_rate, mean_std, EvalSummary, StepRecord};
use safeshield::harness::{run_experiment, write_aggregate, RUN_HEADER};
use safeshield::rl::AgentKind;
use safeshield::shields::{ShieldType, TupleMode};

fn small(dir: &Path, seeds: Vec<u64>, steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(EnvKind::Pendulum, AgentKind::Dqn);
    cfg.shields = vec![ShieldType::ReplaceSample, ShieldType::Mask];
    cfg.tuples = vec![TupleMode::Naive, TupleMode::SafeAction];
    cfg.seeds = seeds;
    cfg.agent.steps = steps;
    cfg.out = dir.to_path_buf();
    cfg
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn zero_steps_give_header_only_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small(dir.path(), vec![0], 0)).unwrap();
    assert_eq!(report.runs.len(), 3);
    for r in &report.runs {
        let text = std::fs::read_to_string(&r.file).unwrap();
        assert_eq!(text, RUN_HEADER.join(",") + "\n");
    }
}

#[test]
fn identical_seeds_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small(dir.path(), vec![4, 4], 600)).unwrap();
    let names: Vec<_> = report.runs.iter().map(|r| r.file.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.contains(&"mask_naive_seed4.csv".to_string()));
    assert!(names.contains(&"mask_naive_seed4_1.csv".to_string()));
    for pair in report.runs.chunks(2) {
        assert_eq!(std::fs::read(&pair[0].file).unwrap(), std::fs::read(&pair[1].file).unwrap());
    }
}

#[test]
fn aggregate_matches_recomputation_and_ignores_seed_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), vec![1, 2, 3], 800);
    let report = run_experiment(&cfg).unwrap();
    // recompute from the per-run files
    let mut groups: BTreeMap<(String, String, usize), Vec<(f64, f64, usize)>> = BTreeMap::new();
    for r in &report.runs {
        for row in read_rows(&r.file) {
            let key = (row[6].clone(), row[7].clone(), row[1].parse().unwrap());
            groups.entry(key).or_default().push((row[2].parse().unwrap(), row[3].parse().unwrap(), row[5].parse().unwrap()));
        }
    }
    let agg = read_rows(&dir.path().join("aggregate.csv"));
    assert_eq!(agg.len(), groups.len());
    for row in &agg {
        let vals = &groups[&(row[1].clone(), row[2].clone(), row[3].parse().unwrap())];
        assert_eq!(row[5], vals.len().to_string());
        let n = vals.len() as f64;
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let var = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / n;
        assert!((row[6].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((row[7].parse::<f64>().unwrap() - var.sqrt()).abs() < 1e-12);
        let imean = vals.iter().map(|v| v.1).sum::<f64>() / n;
        assert!((row[8].parse::<f64>().unwrap() - imean).abs() < 1e-12);
        assert_eq!(row[12], "0");
    }
    // masking rows carry the raw volume ratio, replacement rows do not
    assert!(agg.iter().filter(|r| r[1] == "mask").all(|r| !r[10].is_empty()));
    assert!(agg.iter().filter(|r| r[1] != "mask").all(|r| r[10].is_empty()));

    let mut reversed = report.runs.clone();
    reversed.reverse();
    let other = dir.path().join("reversed.csv");
    write_aggregate(&other, cfg.agent.kind, &reversed).unwrap();
    let mut a = read_rows(&dir.path().join("aggregate.csv"));
    let mut b = read_rows(&other);
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn manifest_lists_every_resolved_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), vec![0], 0);
    run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    for (key, _) in KEYS {
        assert!(manifest["config"][key].is_string(), "manifest misses {key}");
    }
    assert_eq!(manifest["config"]["agent.lr"], "0.002");
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["action_grid"]["actions"], 15);
}

#[test]
fn resolved_pairs_round_trip() {
    let text = "# comment\nenv.name = quadrotor\nagent.name = dqn\nshield.type = all\nshield.tuple = all\n\
                safety.spec_box.lower = -1,0.5,-1,-1,-0.5,-3\nsafety.spec_box.upper = 1,1.5,1,1,0.5,3\n\
                experiment.seeds = 3,1\nagent.optimizer = sgd\nsafety.gain = 0,1,0,0,0,0,0,0,0,0,1,0\n";
    let cfg = ExperimentConfig::from_pairs(&parse_config(text).unwrap()).unwrap();
    assert_eq!(cfg.agent.kind, AgentKind::Dqn);
    assert_eq!(cfg.env.spec_box.lower()[1], 0.5);
    assert_eq!(cfg.seeds, vec![3, 1]);
    assert_eq!(cfg.gain.as_ref().unwrap()[(1, 4)], 1.0);
    assert_eq!(cfg.combinations().len(), 1 + 4 + 4 + 4 + 1);
    let pairs: Vec<(String, String)> = cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    assert_eq!(pairs.len(), KEYS.len());
    assert_eq!(ExperimentConfig::from_pairs(&pairs).unwrap(), cfg);
}

#[test]
fn config_rejections() {
    let bad = |text: &str| ExperimentConfig::from_pairs(&parse_config(text).unwrap()).is_err();
    assert!(bad("agent.lr = fast"));
    assert!(bad("unknown.key = 1"));
    assert!(bad("experiment.seeds ="));
    assert!(bad("shield.type = mask\nshield.tuple = adaption_penalty"));
    assert!(bad("safety.spec_box.lower = -1"));
    assert!(bad("safety.compute = false"));
    assert!(bad("safety.gain = 1,2,3"));
    assert!(bad("env.reset = somewhere"));
    assert!(parse_config("just words").is_err());
}

#[test]
fn intervention_metric_identities() {
    let step = |intervened, vol| StepRecord { reward: 0.0, intervened, safe_volume: vol, violation: false };
    let none = vec![step(false, None); 4];
    assert_eq!(intervention_rate(&none, ShieldType::Project, 1.0).unwrap(), (0.0, None));
    let all = vec![step(true, None); 4];
    assert_eq!(intervention_rate(&all, ShieldType::ReplaceSample, 1.0).unwrap(), (1.0, None));
    let full = vec![step(false, Some(60.0)); 4];
    assert_eq!(intervention_rate(&full, ShieldType::Mask, 60.0).unwrap(), (0.0, Some(1.0)));
    assert!(intervention_rate(&full, ShieldType::Mask, 0.0).is_err());
    assert!(intervention_rate(&[], ShieldType::Mask, 1.0).is_err());
    let empty = EvalSummary::from_episodes(0, &[]);
    assert_eq!(empty.episodes, 0);
    assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
}
