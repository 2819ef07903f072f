use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dqn::Dqn;
use super::replay::{ReplayBuffer, Transition};
use super::td3::Td3;
use super::{action_grid, nearest_grid_index, AgentConfig, AgentKind};
use crate::env::{EnvSpec, Environment, ResetMode, ResetSampler};
use crate::harness::metrics::{episode_metrics, EpisodeMetrics, EvalSummary, StepRecord};
use crate::shields::{
    make_learning_tuples, mask_discrete, safe_action_box, Fallback, Shield, ShieldDecision, ShieldType, TupleMode,
};
use crate::safety::SafetyVerifier;
use crate::{Error, Result};

/// Random-number streams derived from one run seed.
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_AGENT: u64 = 2;
const STREAM_SHIELD: u64 = 3;
const STREAM_EVAL: u64 = 4;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Environment streams for `env_seed` live above the fixed stream ids.
fn env_stream(id: u64, env_seed: u64) -> u64 {
    id + env_seed.wrapping_mul(8)
}

/// `start → end` linearly over `steps`, then constant.
pub fn linear_schedule(start: f64, end: f64, steps: usize, t: usize) -> f64 {
    if steps == 0 || t >= steps {
        end
    } else {
        start + (end - start) * t as f64 / steps as f64
    }
}

/// A learner, or the failsafe controller used as a reference policy.
#[derive(Debug, Clone)]
pub enum Agent {
    Dqn(Dqn),
    Td3(Td3),
    Failsafe,
}

impl Agent {
    /// Fresh networks for `cfg`, initialized from the run seed.
    pub fn new(cfg: &AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(seed, STREAM_INIT);
        match cfg.kind {
            AgentKind::Dqn => {
                let grid = action_grid(&spec.action_box, cfg.actions);
                Ok(Agent::Dqn(Dqn::new(cfg, spec.observation_dim(), grid, &mut rng)?))
            }
            AgentKind::Td3 => Ok(Agent::Td3(Td3::new(cfg, spec.observation_dim(), spec.action_box.clone(), &mut rng)?)),
        }
    }
}

/// How a training run is wired.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub shield: ShieldType,
    pub tuple: TupleMode,
    pub penalty: f64,
    pub proj_dist_coef: f64,
    pub reset: ResetMode,
    /// Evaluate every this many steps (0 disables).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Selects the environment random streams (initial states and
    /// disturbances) independently of the run seed.
    pub env_seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            shield: ShieldType::None,
            tuple: TupleMode::Naive,
            penalty: -0.1,
            proj_dist_coef: 0.0,
            reset: ResetMode::Uniform,
            eval_every: 0,
            eval_episodes: 30,
            env_seed: 0,
        }
    }
}

/// Per-episode metrics of a run plus any intermediate evaluations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub episodes: Vec<EpisodeMetrics>,
    pub evaluations: Vec<EvalSummary>,
    /// Steps where a shield fell back to the failsafe controller.
    pub fallbacks: usize,
}

/// Shared per-step machinery for training and evaluation.
struct Stepper<'a> {
    spec: &'a EnvSpec,
    verifier: &'a SafetyVerifier,
    shield: Shield,
    equilibrium_volume: f64,
}

/// Action chosen at one step together with its grid index (discrete agents
/// only) and the safe action set size for the masking metric.
struct Choice {
    decision: ShieldDecision,
    index: Option<usize>,
    safe_volume: Option<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a EnvSpec, verifier: &'a SafetyVerifier, kind: ShieldType, agent: &Agent) -> Result<Self> {
        let shield = Shield::new(kind, verifier.clone());
        let mut equilibrium_volume = 1.0;
        if kind == ShieldType::Mask {
            equilibrium_volume = match agent {
                Agent::Dqn(d) => mask_discrete(verifier, &spec.equilibrium, &d.actions)?.indices.len() as f64,
                _ => safe_action_box(verifier, &spec.equilibrium)?.map_or(0.0, |(_, b)| b.volume()),
            };
            if !(equilibrium_volume > 0.0) {
                return Err(Error::Config("no safe actions at the equilibrium".into()));
            }
        }
        Ok(Self { spec, verifier, shield, equilibrium_volume })
    }

    /// Proposes and shields an action. `explore` is `None` for greedy
    /// evaluation, otherwise `(ε or σ, uniform warmup)`.
    fn choose<R: Rng>(
        &self,
        agent: &Agent,
        s: &DVector<f64>,
        explore: Option<(f64, bool)>,
        agent_rng: &mut R,
        shield_rng: &mut R,
    ) -> Result<Choice> {
        let obs = self.spec.observe(s);
        let masking = self.shield.kind == ShieldType::Mask;
        match agent {
            Agent::Dqn(dqn) => {
                let n = dqn.num_actions();
                let mask = if masking { Some(mask_discrete(self.verifier, s, &dqn.actions)?) } else { None };
                if let Some(f) = mask.as_ref().and_then(|m| m.synthetic.clone()) {
                    let decision = ShieldDecision {
                        proposed: f.clone(),
                        executed: f,
                        intervened: true,
                        mask_scale: None,
                        projection_distance: None,
                        fallback: Some(Fallback::EmptyMask),
                    };
                    return Ok(Choice { decision, index: None, safe_volume: Some(0.0) });
                }
                let allowed: Vec<usize> = mask.as_ref().map_or_else(|| (0..n).collect(), |m| m.indices.clone());
                let idx = match explore {
                    Some((_, true)) => allowed[agent_rng.random_range(0..allowed.len())],
                    Some((eps, false)) => dqn.act(&obs, eps, &allowed, agent_rng)?,
                    None => dqn.act(&obs, 0.0, &allowed, agent_rng)?,
                };
                let proposed = dqn.actions[idx].clone();
                let decision = if masking {
                    ShieldDecision::pass_through(proposed)
                } else {
                    self.shield.apply(s, &proposed, shield_rng)?
                };
                Ok(Choice { decision, index: Some(idx), safe_volume: masking.then_some(allowed.len() as f64) })
            }
            Agent::Td3(td3) => {
                let proposed = match explore {
                    Some((_, true)) => {
                        let b = &self.spec.action_box;
                        DVector::from_fn(b.dim(), |i, _| agent_rng.random_range(b.lower()[i]..=b.upper()[i]))
                    }
                    Some((sigma, false)) => td3.act(&obs, sigma, agent_rng)?,
                    None => td3.policy(&obs)?,
                };
                self.continuous(s, proposed, shield_rng)
            }
            Agent::Failsafe => {
                let proposed = self.verifier.controller().action(s);
                self.continuous(s, proposed, shield_rng)
            }
        }
    }

    fn continuous<R: Rng>(&self, s: &DVector<f64>, proposed: DVector<f64>, rng: &mut R) -> Result<Choice> {
        let decision = self.shield.apply(s, &proposed, rng)?;
        let safe_volume = (self.shield.kind == ShieldType::Mask).then(|| {
            let lambda = decision.mask_scale.unwrap_or(0.0);
            lambda.powi(self.spec.action_dim() as i32) * self.spec.action_box.volume()
        });
        Ok(Choice { decision, index: None, safe_volume })
    }

    /// Executes the decision, enforcing the safety invariants when a shield
    /// is active.
    fn execute<R: Rng>(
        &self,
        env: &mut Environment<R>,
        choice: &Choice,
        step: usize,
    ) -> Result<(DVector<f64>, f64, StepRecord)> {
        let s = env.state().clone();
        let executed = &choice.decision.executed;
        let active = self.shield.kind.is_active();
        if active && !self.verifier.phi(&s, executed) {
            return Err(Error::SafetyViolation {
                step,
                msg: format!("executed action {:?} is not verified safe", executed.as_slice()),
            });
        }
        let out = env.step(executed);
        let violation = !self.spec.spec_box.contains(&out.state, 1e-9);
        if active && violation {
            return Err(Error::SafetyViolation {
                step,
                msg: format!("state {:?} left the specification set", out.state.as_slice()),
            });
        }
        let record = StepRecord {
            reward: out.reward,
            intervened: choice.decision.intervened,
            safe_volume: choice.safe_volume,
            violation,
        };
        Ok((out.state, out.reward, record))
    }
}

fn reset_sampler(spec: &EnvSpec, verifier: &SafetyVerifier, mode: ResetMode) -> Result<ResetSampler> {
    ResetSampler::new(spec, &verifier.safe_set().polytope, mode)
}

/// Trains `agent` for `cfg.steps` environment steps.
///
/// Episodes last `spec.horizon` steps and are never cut short; the final
/// transition of an episode is stored as non-terminal since the horizon is
/// a time limit. Only complete episodes are logged.
pub fn train(
    agent: &mut Agent,
    cfg: &AgentConfig,
    settings: &TrainSettings,
    spec: &EnvSpec,
    verifier: &SafetyVerifier,
    seed: u64,
) -> Result<RunLog> {
    train_observed(agent, cfg, settings, spec, verifier, seed, &mut |_| Ok(()))
}

/// [`train`] that hands every completed episode to `on_episode` as soon as
/// it is logged.
pub fn train_observed(
    agent: &mut Agent,
    cfg: &AgentConfig,
    settings: &TrainSettings,
    spec: &EnvSpec,
    verifier: &SafetyVerifier,
    seed: u64,
    on_episode: &mut dyn FnMut(&EpisodeMetrics) -> Result<()>,
) -> Result<RunLog> {
    cfg.validate()?;
    settings.shield.check_tuple(settings.tuple)?;
    let stepper = Stepper::new(spec, verifier, settings.shield, agent)?;
    let sampler = reset_sampler(spec, verifier, settings.reset)?;
    let mut env = Environment::new(spec.clone(), stream(seed, env_stream(STREAM_ENV, settings.env_seed)))?;
    let mut agent_rng = stream(seed, STREAM_AGENT);
    let mut shield_rng = stream(seed, STREAM_SHIELD);
    let mut buffer = ReplayBuffer::new(cfg.buffer)?;
    let mut log = RunLog::default();
    let mut records: Vec<StepRecord> = Vec::with_capacity(spec.horizon);
    let masking_dqn = matches!(agent, Agent::Dqn(_)) && settings.shield == ShieldType::Mask;

    for step in 0..cfg.steps {
        if records.is_empty() {
            env.reset(&sampler)?;
        }
        let s = env.state().clone();
        let warmup = step < cfg.learning_starts;
        let explore = match agent {
            Agent::Dqn(_) => linear_schedule(cfg.eps_start, cfg.eps_end, cfg.eps_steps, step),
            _ => cfg.sigma,
        };
        let choice = stepper.choose(agent, &s, Some((explore, warmup)), &mut agent_rng, &mut shield_rng)?;
        if choice.decision.fallback.is_some() {
            log.fallbacks += 1;
        }
        let (s_next, r, record) = stepper.execute(&mut env, &choice, step)?;
        records.push(record);

        // the synthetic failsafe action is outside the agent's action space
        let storable = !(matches!(agent, Agent::Dqn(_)) && choice.index.is_none());
        if storable {
            let tuples = make_learning_tuples(
                settings.tuple,
                &s,
                &choice.decision,
                &s_next,
                r,
                settings.penalty,
                settings.proj_dist_coef,
            );
            let next_mask = if masking_dqn {
                let Agent::Dqn(d) = &*agent else { unreachable!() };
                let m = mask_discrete(verifier, &s_next, &d.actions)?;
                (!m.is_empty()).then_some(m.indices)
            } else {
                None
            };
            for t in tuples {
                let index = match (&*agent, choice.index) {
                    (Agent::Dqn(d), Some(i)) if t.action == d.actions[i] => i,
                    (Agent::Dqn(d), _) => nearest_grid_index(&d.actions, &spec.action_box, &t.action),
                    _ => 0,
                };
                buffer.push(Transition {
                    obs: spec.observe(&t.s),
                    action: t.action,
                    index,
                    reward: t.reward,
                    next_obs: spec.observe(&t.s_next),
                    done: false,
                    next_mask: next_mask.clone(),
                    mode: t.mode,
                });
            }
        }

        let done_steps = step + 1;
        if done_steps > cfg.learning_starts && done_steps % cfg.train_freq == 0 && !buffer.is_empty() {
            for _ in 0..cfg.gradient_steps {
                let idx = buffer.sample_indices(cfg.batch, &mut agent_rng);
                let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
                match agent {
                    Agent::Dqn(d) => {
                        d.update(&batch)?;
                    }
                    Agent::Td3(t) => {
                        t.update(&batch, &mut agent_rng)?;
                    }
                    Agent::Failsafe => {}
                }
            }
        }
        if let Agent::Dqn(d) = agent {
            if done_steps % cfg.target_update == 0 {
                d.sync_target();
            }
        }

        if records.len() == spec.horizon {
            let m = episode_metrics(log.episodes.len(), done_steps, &records, settings.shield, stepper.equilibrium_volume)?;
            on_episode(&m)?;
            log.episodes.push(m);
            records.clear();
        }
        if settings.eval_every > 0 && done_steps % settings.eval_every == 0 {
            let mut summary =
                evaluate_with(agent, settings.shield, spec, verifier, settings.eval_episodes, seed, settings.env_seed)?;
            summary.step = done_steps;
            log.evaluations.push(summary);
        }
    }
    Ok(log)
}

/// Greedy, noise-free deployment episodes with the shield active.
///
/// Every call with the same seed sees the same initial states and
/// disturbances.
pub fn evaluate(
    agent: &Agent,
    shield: ShieldType,
    spec: &EnvSpec,
    verifier: &SafetyVerifier,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    evaluate_with(agent, shield, spec, verifier, episodes, seed, 0)
}

/// [`evaluate`] with the environment streams selected by `env_seed`.
pub fn evaluate_with(
    agent: &Agent,
    shield: ShieldType,
    spec: &EnvSpec,
    verifier: &SafetyVerifier,
    episodes: usize,
    seed: u64,
    env_seed: u64,
) -> Result<EvalSummary> {
    let stepper = Stepper::new(spec, verifier, shield, agent)?;
    let sampler = reset_sampler(spec, verifier, ResetMode::Uniform)?;
    let mut env = Environment::new(spec.clone(), stream(seed, env_stream(STREAM_EVAL, env_seed)))?;
    let mut agent_rng = stream(seed, STREAM_EVAL + 1);
    let mut shield_rng = stream(seed, STREAM_EVAL + 2);
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        env.reset(&sampler)?;
        let mut records = Vec::with_capacity(spec.horizon);
        for t in 0..spec.horizon {
            let s = env.state().clone();
            let choice = stepper.choose(agent, &s, None, &mut agent_rng, &mut shield_rng)?;
            let (_, _, record) = stepper.execute(&mut env, &choice, t)?;
            records.push(record);
        }
        out.push(episode_metrics(ep, (ep + 1) * spec.horizon, &records, shield, stepper.equilibrium_volume)?);
    }
    Ok(EvalSummary::from_episodes(0, &out))
}
