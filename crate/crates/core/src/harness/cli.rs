//! Command-line entry point. Every configuration key is also a
//! `--section.key value` flag that overrides the config file.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use super::config::{read_config, ExperimentConfig, KEYS};
use super::{build_verifier, run_deployment, run_experiment, ExperimentReport};
use crate::oracle::{suite_containment, suite_finite_mdp, suite_gradients, suite_masking, suite_projection, suite_uniformity};
use crate::rl::default_networks;
use crate::safety::SafetyVerifier;
use crate::env::EnvSpec;
use crate::{Error, Result};

/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failed runs, certificates or oracle suites.
pub const EXIT_FAILURE: i32 = 1;

fn key_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("config file of `section.key = value` lines"),
    );
    KEYS.iter().fold(cmd, |cmd, &(key, help)| {
        cmd.arg(Arg::new(key).long(key).value_name("VALUE").action(ArgAction::Set).help(help).help_heading("Config keys"))
    })
}

fn keys_listing() -> String {
    let mut s = String::from("Config keys (file lines `key = value`, or flags `--key value`):\n");
    for (k, h) in KEYS {
        s.push_str(&format!("  {k:<28} {h}\n"));
    }
    s.push_str("\nSAFESHIELD_OUT overrides experiment.out unless --experiment.out is given.\n");
    s
}

pub fn command() -> Command {
    Command::new("safeshield")
        .about("Provably safe reinforcement learning with action replacement, projection and masking shields")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help(keys_listing())
        .subcommand(key_args(Command::new("run").about("Train the shield x tuple x seed grid and write CSVs")))
        .subcommand(
            key_args(Command::new("safeset").about("Compute, verify or save a safe state set"))
                .arg(Arg::new("env").long("env").value_name("NAME").help("shorthand for --env.name"))
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("FILE")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("write the computed set to FILE"),
                )
                .arg(
                    Arg::new("verify")
                        .long("verify")
                        .value_name("FILE")
                        .value_parser(clap::value_parser!(PathBuf))
                        .conflicts_with("out")
                        .help("load FILE and certify it with the failsafe controller"),
                ),
        )
        .subcommand(key_args(Command::new("eval").about("Train the grid, then write deployment tables")))
        .subcommand(
            key_args(Command::new("oracle").about("Run the oracle suites (geometric suites use the quadrotor)")).arg(
                Arg::new("seed")
                    .long("seed")
                    .value_name("N")
                    .value_parser(clap::value_parser!(u64))
                    .default_value("0")
                    .help("seed of the random instances"),
            ),
        )
}

/// Config-file pairs, then `SAFESHIELD_OUT`, then flags.
fn resolve(m: &ArgMatches, extra: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut pairs = match m.get_one::<PathBuf>("config") {
        Some(path) => read_config(path)?,
        None => Vec::new(),
    };
    if let Some(out) = std::env::var_os("SAFESHIELD_OUT") {
        pairs.push(("experiment.out".into(), out.to_string_lossy().into_owned()));
    }
    pairs.extend(extra.iter().cloned());
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            pairs.push((key.to_string(), v.clone()));
        }
    }
    ExperimentConfig::from_pairs(&pairs)
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let mut extra = Vec::new();
    if name == "safeset" {
        if let Some(env) = sub.get_one::<String>("env") {
            extra.push(("env.name".to_string(), env.clone()));
        }
        if let Some(path) = sub.get_one::<PathBuf>("verify") {
            extra.push(("safety.set_path".to_string(), path.to_string_lossy().into_owned()));
            extra.push(("safety.compute".to_string(), "false".to_string()));
        }
    }
    let cfg = match resolve(sub, &extra) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let result = match name {
        "run" => run_experiment(&cfg).map(|r| report(&r)),
        "eval" => run_deployment(&cfg).map(|r| report(&r)),
        "safeset" => safeset(&cfg, sub.get_one::<PathBuf>("out"), sub.contains_id("verify")),
        "oracle" => oracle(&cfg, *sub.get_one::<u64>("seed").expect("defaulted")),
        _ => unreachable!("unknown subcommand {name}"),
    };
    match result {
        Ok(code) => code,
        Err(e @ (Error::Config(_) | Error::Parse { .. })) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn report(r: &ExperimentReport) -> i32 {
    for run in &r.runs {
        let violations: usize = run.episodes.iter().map(|e| e.violations).sum();
        println!(
            "{} {} seed {}: {} episodes, {} violations, {} fallbacks{}",
            run.shield.name(),
            run.tuple.name(),
            run.seed,
            run.episodes.len(),
            violations,
            run.fallbacks,
            run.error.as_ref().map(|e| format!(", aborted: {e}")).unwrap_or_default()
        );
    }
    println!("outputs in {}", r.out.display());
    if r.failures().next().is_some() {
        EXIT_FAILURE
    } else {
        0
    }
}

fn safeset(cfg: &ExperimentConfig, out: Option<&PathBuf>, verifying: bool) -> Result<i32> {
    let verifier = match build_verifier(cfg) {
        Ok(v) => v,
        Err(e @ Error::Certificate(_)) if verifying => {
            println!("not certified: {e}");
            return Ok(EXIT_FAILURE);
        }
        Err(e) => return Err(e),
    };
    let set = verifier.safe_set();
    if verifying {
        println!("certified: {} halfspaces, inside the specification box, failsafe invariant", set.polytope.num_rows());
    } else if let Some(path) = out {
        set.save(path)?;
        println!("wrote {} halfspaces to {}", set.polytope.num_rows(), path.display());
    } else {
        print!("{}", set.polytope.format());
    }
    Ok(0)
}

fn oracle(cfg: &ExperimentConfig, seed: u64) -> Result<i32> {
    let quad = if cfg.env.kind() == crate::env::EnvKind::Quadrotor { cfg.env.clone() } else { EnvSpec::quadrotor() };
    let v = SafetyVerifier::with_defaults(&quad)?;
    let reports = [
        suite_containment(seed, 1000)?,
        suite_projection(&v, seed + 1, 200, 400)?,
        suite_masking(&v, seed + 2, 1000)?,
        suite_finite_mdp(seed + 3, 100_000)?,
        suite_uniformity(&v, seed + 4, 10_000, 10)?,
        suite_gradients(seed + 5, &default_networks(), 50)?,
    ];
    let mut code = 0;
    for r in &reports {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            code = EXIT_FAILURE;
        }
    }
    Ok(code)
}
