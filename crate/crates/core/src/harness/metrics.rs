use crate::shields::ShieldType;
use crate::{Error, Result};

/// What the harness records about one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Base environment reward of the executed action.
    pub reward: f64,
    pub intervened: bool,
    /// Size of the safe action set (masking only): box volume for
    /// continuous actions, safe grid count for discrete ones.
    pub safe_volume: Option<f64>,
    /// Successor outside the specification set 𝕊_s.
    pub violation: bool,
}

/// Per-episode summary written to the run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Environment steps completed at the end of the episode.
    pub step: usize,
    /// Mean base reward per step.
    pub ret: f64,
    pub intervention_rate: f64,
    pub mask_volume_ratio: Option<f64>,
    pub violations: usize,
    pub wall_steps: usize,
}

/// Intervention metric of one episode and, for masking, the raw ratio
/// `mean volume / equilibrium volume`.
///
/// Replacement and projection: share of steps where the action was
/// altered. Masking: `1 − ratio`, clipped to `[0, 1]`, so that larger
/// values mean a more restricted action space.
pub fn intervention_rate(
    steps: &[StepRecord],
    shield: ShieldType,
    equilibrium_volume: f64,
) -> Result<(f64, Option<f64>)> {
    if steps.is_empty() {
        return Err(Error::Input("intervention rate of an empty episode".into()));
    }
    let n = steps.len() as f64;
    if shield == ShieldType::Mask {
        if !(equilibrium_volume > 0.0) {
            return Err(Error::Config("safe action set at the equilibrium has zero volume".into()));
        }
        let mean = steps.iter().map(|s| s.safe_volume.unwrap_or(0.0)).sum::<f64>() / n;
        let ratio = mean / equilibrium_volume;
        Ok(((1.0 - ratio).clamp(0.0, 1.0), Some(ratio)))
    } else {
        Ok((steps.iter().filter(|s| s.intervened).count() as f64 / n, None))
    }
}

pub fn episode_metrics(
    episode: usize,
    step: usize,
    steps: &[StepRecord],
    shield: ShieldType,
    equilibrium_volume: f64,
) -> Result<EpisodeMetrics> {
    let (rate, ratio) = intervention_rate(steps, shield, equilibrium_volume)?;
    Ok(EpisodeMetrics {
        episode,
        step,
        ret: steps.iter().map(|s| s.reward).sum::<f64>() / steps.len() as f64,
        intervention_rate: rate,
        mask_volume_ratio: ratio,
        violations: steps.iter().filter(|s| s.violation).count(),
        wall_steps: steps.len(),
    })
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Deployment summary over evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    /// Training steps completed when the evaluation ran.
    pub step: usize,
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub intervention_mean: f64,
    pub intervention_std: f64,
    /// Per-episode share of steps that violated 𝕊_s.
    pub violation_mean: f64,
    pub violation_std: f64,
}

impl EvalSummary {
    pub fn from_episodes(step: usize, episodes: &[EpisodeMetrics]) -> Self {
        let col = |f: &dyn Fn(&EpisodeMetrics) -> f64| mean_std(&episodes.iter().map(f).collect::<Vec<_>>());
        let (return_mean, return_std) = col(&|e| e.ret);
        let (intervention_mean, intervention_std) = col(&|e| e.intervention_rate);
        let (violation_mean, violation_std) = col(&|e| e.violations as f64 / e.wall_steps.max(1) as f64);
        Self {
            step,
            episodes: episodes.len(),
            return_mean,
            return_std,
            intervention_mean,
            intervention_std,
            violation_mean,
            violation_std,
        }
    }
}
