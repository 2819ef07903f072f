//! Flat `section.key = value` configuration shared by the config file and
//! the command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::env::{EnvKind, EnvSpec, ResetMode};
use crate::geom::Hyperbox;
use crate::rl::{AgentConfig, AgentKind};
use crate::shields::{ShieldType, TupleMode};
use crate::{Error, Result};

/// Every configuration key with its help text, in manifest order.
pub const KEYS: &[(&str, &str)] = &[
    ("env.name", "benchmark: pendulum | quadrotor [pendulum]"),
    ("env.dt", "sampling time in seconds [0.05]"),
    ("env.horizon", "steps per episode [200]"),
    ("env.disturbance.lower", "lower corner of the disturbance box, comma separated"),
    ("env.disturbance.upper", "upper corner of the disturbance box, comma separated"),
    ("env.seed", "selects the initial-state and disturbance streams [0]"),
    ("env.reset", "initial states: uniform (inside the safe set) | equilibrium [uniform]"),
    ("safety.set_path", "safe set file, loaded when safety.compute is false"),
    ("safety.gain", "failsafe gain K, row-major comma list; empty for the LQR default"),
    ("safety.compute", "compute the invariant safe set instead of loading it [true]"),
    ("safety.spec_box.lower", "lower corner of the state specification box"),
    ("safety.spec_box.upper", "upper corner of the state specification box"),
    ("safety.max_iterations", "iteration cap of the invariant-set computation [500]"),
    ("shield.type", "list of none | replace_sample | replace_failsafe | project | mask, or all"),
    ("shield.tuple", "list of naive | adaption_penalty | safe_action | both, or all; invalid pairs are skipped"),
    ("shield.penalty", "adaption penalty added per intervention [-0.1]"),
    ("shield.proj_dist_coef", "adaption penalty per unit of projection distance [0]"),
    ("agent.name", "dqn | td3 [dqn for pendulum, td3 for quadrotor]"),
    ("agent.lr", "learning rate"),
    ("agent.gamma", "discount factor in (0, 1)"),
    ("agent.batch", "minibatch size"),
    ("agent.steps", "training steps per run"),
    ("agent.buffer", "replay capacity"),
    ("agent.learning_starts", "uniform warmup steps before learning"),
    ("agent.train_freq", "environment steps between update phases"),
    ("agent.gradient_steps", "gradient steps per update phase"),
    ("agent.hidden", "units in each of the two hidden layers"),
    ("agent.activation", "relu | tanh"),
    ("agent.optimizer", "adam | sgd"),
    ("agent.eps_start", "initial exploration probability (dqn)"),
    ("agent.eps_end", "final exploration probability (dqn)"),
    ("agent.eps_steps", "steps of linear exploration decay (dqn)"),
    ("agent.target_update", "steps between target copies (dqn)"),
    ("agent.max_grad_norm", "gradient clipping norm (dqn)"),
    ("agent.actions", "grid points per action dimension (dqn)"),
    ("agent.sigma", "exploration noise, fraction of half the action range (td3)"),
    ("agent.tau", "Polyak coefficient (td3)"),
    ("agent.policy_delay", "critic updates per actor update (td3)"),
    ("agent.target_noise", "target smoothing noise (td3)"),
    ("agent.target_noise_clip", "target smoothing clip (td3)"),
    ("experiment.seeds", "comma-separated run seeds [0]"),
    ("experiment.out", "output directory, overridden by SAFESHIELD_OUT [out]"),
    ("experiment.eval_episodes", "deployment episodes per evaluation [30]"),
    ("experiment.eval_every", "steps between evaluations during training, 0 disables [0]"),
    ("experiment.jobs", "parallel runs, 0 uses every core [0]"),
];

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub env_seed: u64,
    pub reset: ResetMode,
    pub set_path: Option<PathBuf>,
    pub gain: Option<DMatrix<f64>>,
    pub compute_set: bool,
    pub max_iterations: usize,
    pub shields: Vec<ShieldType>,
    pub tuples: Vec<TupleMode>,
    pub penalty: f64,
    pub proj_dist_coef: f64,
    pub agent: AgentConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub eval_episodes: usize,
    pub eval_every: usize,
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn defaults(env: EnvKind, agent: AgentKind) -> Self {
        Self {
            env: EnvSpec::new(env),
            env_seed: 0,
            reset: ResetMode::Uniform,
            set_path: None,
            gain: None,
            compute_set: true,
            max_iterations: 500,
            shields: vec![ShieldType::Mask],
            tuples: vec![TupleMode::Naive],
            penalty: -0.1,
            proj_dist_coef: 0.0,
            agent: AgentConfig::defaults(agent, env),
            seeds: vec![0],
            out: PathBuf::from("out"),
            eval_episodes: 30,
            eval_every: 0,
            jobs: 0,
        }
    }

    /// Resolves `key = value` pairs on top of the defaults; later pairs win.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        for (k, _) in pairs {
            if !KEYS.iter().any(|(key, _)| key == k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        let last = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.trim());
        let env: EnvKind = last("env.name").unwrap_or("pendulum").parse()?;
        let agent = match last("agent.name") {
            Some(a) => a.parse()?,
            None if env == EnvKind::Pendulum => AgentKind::Dqn,
            None => AgentKind::Td3,
        };
        let mut cfg = Self::defaults(env, agent);
        // box corners are resolved together so either may move past the other
        let corners = |b: &Hyperbox, lo: &str, hi: &str| -> Result<Hyperbox> {
            let side = |key: &str, default: &[f64]| match last(key) {
                Some(v) => {
                    let xs = list::<f64>(key, v)?;
                    if xs.len() != b.dim() {
                        return Err(Error::Config(format!("{key} needs {} entries, got {}", b.dim(), xs.len())));
                    }
                    Ok(xs)
                }
                None => Ok(default.to_vec()),
            };
            let (l, u) = (side(lo, b.lower().as_slice())?, side(hi, b.upper().as_slice())?);
            Hyperbox::from_slices(&l, &u).map_err(|e| Error::Config(format!("{lo}/{hi}: {e}")))
        };
        cfg.env.disturbance_box = corners(&cfg.env.disturbance_box, "env.disturbance.lower", "env.disturbance.upper")?;
        cfg.env.spec_box = corners(&cfg.env.spec_box, "safety.spec_box.lower", "safety.spec_box.upper")?;
        for (k, v) in pairs {
            cfg.set(k, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let a = &mut self.agent;
        match key {
            "env.name" | "agent.name" | "env.disturbance.lower" | "env.disturbance.upper" | "safety.spec_box.lower"
            | "safety.spec_box.upper" => {}
            "env.dt" => self.env.dt = num(key, v)?,
            "env.horizon" => self.env.horizon = num(key, v)?,
            "env.seed" => self.env_seed = num(key, v)?,
            "env.reset" => {
                self.reset = match v {
                    "uniform" => ResetMode::Uniform,
                    "equilibrium" => ResetMode::Equilibrium,
                    _ => return Err(bad(key, v)),
                }
            }
            "safety.set_path" => self.set_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "safety.gain" => {
                self.gain = if v.is_empty() {
                    None
                } else {
                    let k = list::<f64>(key, v)?;
                    let (m, n) = (self.env.action_dim(), self.env.state_dim());
                    if k.len() != m * n {
                        return Err(Error::Config(format!("{key} needs {m}x{n} = {} entries, got {}", m * n, k.len())));
                    }
                    Some(DMatrix::from_row_slice(m, n, &k))
                }
            }
            "safety.compute" => self.compute_set = num(key, v)?,
            "safety.max_iterations" => self.max_iterations = num(key, v)?,
            "shield.type" => {
                self.shields = if v == "all" { ShieldType::ALL.to_vec() } else { list(key, v)? }
            }
            "shield.tuple" => {
                self.tuples = if v == "all" { TupleMode::ALL.to_vec() } else { list(key, v)? }
            }
            "shield.penalty" => self.penalty = num(key, v)?,
            "shield.proj_dist_coef" => self.proj_dist_coef = num(key, v)?,
            "agent.lr" => a.lr = num(key, v)?,
            "agent.gamma" => a.gamma = num(key, v)?,
            "agent.batch" => a.batch = num(key, v)?,
            "agent.steps" => a.steps = num(key, v)?,
            "agent.buffer" => a.buffer = num(key, v)?,
            "agent.learning_starts" => a.learning_starts = num(key, v)?,
            "agent.train_freq" => a.train_freq = num(key, v)?,
            "agent.gradient_steps" => a.gradient_steps = num(key, v)?,
            "agent.hidden" => a.hidden = num(key, v)?,
            "agent.activation" => a.activation = v.parse()?,
            "agent.optimizer" => a.optimizer = v.parse()?,
            "agent.eps_start" => a.eps_start = num(key, v)?,
            "agent.eps_end" => a.eps_end = num(key, v)?,
            "agent.eps_steps" => a.eps_steps = num(key, v)?,
            "agent.target_update" => a.target_update = num(key, v)?,
            "agent.max_grad_norm" => a.max_grad_norm = num(key, v)?,
            "agent.actions" => a.actions = num(key, v)?,
            "agent.sigma" => a.sigma = num(key, v)?,
            "agent.tau" => a.tau = num(key, v)?,
            "agent.policy_delay" => a.policy_delay = num(key, v)?,
            "agent.target_noise" => a.target_noise = num(key, v)?,
            "agent.target_noise_clip" => a.target_noise_clip = num(key, v)?,
            "experiment.seeds" => self.seeds = list(key, v)?,
            "experiment.out" => self.out = PathBuf::from(v),
            "experiment.eval_episodes" => self.eval_episodes = num(key, v)?,
            "experiment.eval_every" => self.eval_every = num(key, v)?,
            "experiment.jobs" => self.jobs = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must list at least one seed".into()));
        }
        if self.shields.is_empty() || self.tuples.is_empty() {
            return Err(Error::Config("shield.type and shield.tuple must not be empty".into()));
        }
        for &s in &self.shields {
            if !self.tuples.iter().any(|t| s.valid_tuples().contains(t)) {
                return Err(Error::Config(format!("no listed tuple is valid with shield `{}`", s.name())));
            }
        }
        if !self.compute_set && self.set_path.is_none() {
            return Err(Error::Config("safety.compute = false needs safety.set_path".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("safety.max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Valid shield/tuple pairs of the grid, in listing order.
    pub fn combinations(&self) -> Vec<(ShieldType, TupleMode)> {
        let mut out = Vec::new();
        for &s in &self.shields {
            for &t in &self.tuples {
                if s.valid_tuples().contains(&t) && !out.contains(&(s, t)) {
                    out.push((s, t));
                }
            }
        }
        out
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let a = &self.agent;
        let e = &self.env;
        let names = |xs: Vec<&str>| xs.join(",");
        KEYS.iter()
            .map(|&(key, _)| {
                let v = match key {
                    "env.name" => e.kind().name().to_string(),
                    "env.dt" => fmt_f(e.dt),
                    "env.horizon" => e.horizon.to_string(),
                    "env.disturbance.lower" => fmt_list(e.disturbance_box.lower().as_slice()),
                    "env.disturbance.upper" => fmt_list(e.disturbance_box.upper().as_slice()),
                    "env.seed" => self.env_seed.to_string(),
                    "env.reset" => match self.reset {
                        ResetMode::Uniform => "uniform".into(),
                        ResetMode::Equilibrium => "equilibrium".into(),
                    },
                    "safety.set_path" => self.set_path.as_deref().map(path_str).unwrap_or_default(),
                    "safety.gain" => self
                        .gain
                        .as_ref()
                        .map(|k| fmt_list(k.transpose().as_slice()))
                        .unwrap_or_default(),
                    "safety.compute" => self.compute_set.to_string(),
                    "safety.spec_box.lower" => fmt_list(e.spec_box.lower().as_slice()),
                    "safety.spec_box.upper" => fmt_list(e.spec_box.upper().as_slice()),
                    "safety.max_iterations" => self.max_iterations.to_string(),
                    "shield.type" => names(self.shields.iter().map(|s| s.name()).collect()),
                    "shield.tuple" => names(self.tuples.iter().map(|t| t.name()).collect()),
                    "shield.penalty" => fmt_f(self.penalty),
                    "shield.proj_dist_coef" => fmt_f(self.proj_dist_coef),
                    "agent.name" => a.kind.name().into(),
                    "agent.lr" => fmt_f(a.lr),
                    "agent.gamma" => fmt_f(a.gamma),
                    "agent.batch" => a.batch.to_string(),
                    "agent.steps" => a.steps.to_string(),
                    "agent.buffer" => a.buffer.to_string(),
                    "agent.learning_starts" => a.learning_starts.to_string(),
                    "agent.train_freq" => a.train_freq.to_string(),
                    "agent.gradient_steps" => a.gradient_steps.to_string(),
                    "agent.hidden" => a.hidden.to_string(),
                    "agent.activation" => a.activation.name().into(),
                    "agent.optimizer" => a.optimizer.name().into(),
                    "agent.eps_start" => fmt_f(a.eps_start),
                    "agent.eps_end" => fmt_f(a.eps_end),
                    "agent.eps_steps" => a.eps_steps.to_string(),
                    "agent.target_update" => a.target_update.to_string(),
                    "agent.max_grad_norm" => fmt_f(a.max_grad_norm),
                    "agent.actions" => a.actions.to_string(),
                    "agent.sigma" => fmt_f(a.sigma),
                    "agent.tau" => fmt_f(a.tau),
                    "agent.policy_delay" => a.policy_delay.to_string(),
                    "agent.target_noise" => fmt_f(a.target_noise),
                    "agent.target_noise_clip" => fmt_f(a.target_noise_clip),
                    "experiment.seeds" => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
                    "experiment.out" => path_str(&self.out),
                    "experiment.eval_episodes" => self.eval_episodes.to_string(),
                    "experiment.eval_every" => self.eval_every.to_string(),
                    "experiment.jobs" => self.jobs.to_string(),
                    other => unreachable!("key {other} has no formatter"),
                };
                (key, v)
            })
            .collect()
    }
}

/// Reads `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty key".into() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn bad(key: &str, v: &str) -> Error {
    Error::Config(format!("invalid value `{v}` for {key}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| x.trim().parse().map_err(|_| bad(key, x.trim()))).collect()
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
