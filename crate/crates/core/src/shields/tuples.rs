use nalgebra::DVector;

use super::ShieldDecision;
use crate::{Error, Result};

/// How experience is written to the replay buffer after a shield decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TupleMode {
    /// `(s, a, s', r)` with the proposed action.
    Naive,
    /// Proposed action, reward penalized on intervention.
    AdaptionPenalty,
    /// Executed action.
    SafeAction,
    /// The penalty tuple plus, on intervention, the executed-action tuple.
    Both,
}

impl TupleMode {
    pub const ALL: [TupleMode; 4] =
        [TupleMode::Naive, TupleMode::AdaptionPenalty, TupleMode::SafeAction, TupleMode::Both];

    pub fn name(self) -> &'static str {
        match self {
            TupleMode::Naive => "naive",
            TupleMode::AdaptionPenalty => "adaption_penalty",
            TupleMode::SafeAction => "safe_action",
            TupleMode::Both => "both",
        }
    }
}

impl std::str::FromStr for TupleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tuple mode `{s}`")))
    }
}

/// One transition for the replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningTuple {
    pub s: DVector<f64>,
    pub action: DVector<f64>,
    pub s_next: DVector<f64>,
    pub reward: f64,
    pub mode: TupleMode,
}

/// Tuples for one step. `s_next` and `r` always come from executing
/// `decision.executed`; only the stored action and the reward adjustment
/// depend on the mode.
pub fn make_learning_tuples(
    mode: TupleMode,
    s: &DVector<f64>,
    decision: &ShieldDecision,
    s_next: &DVector<f64>,
    r: f64,
    penalty: f64,
    proj_dist_coef: f64,
) -> Vec<LearningTuple> {
    let tuple = |action: &DVector<f64>, reward: f64| LearningTuple {
        s: s.clone(),
        action: action.clone(),
        s_next: s_next.clone(),
        reward,
        mode,
    };
    let penalized = || {
        let mut reward = r;
        if decision.intervened {
            reward += penalty;
        }
        reward + proj_dist_coef * decision.projection_distance.unwrap_or(0.0)
    };
    match mode {
        TupleMode::Naive => vec![tuple(&decision.proposed, r)],
        TupleMode::AdaptionPenalty => vec![tuple(&decision.proposed, penalized())],
        TupleMode::SafeAction => vec![tuple(&decision.executed, r)],
        TupleMode::Both => {
            let mut out = vec![tuple(&decision.proposed, penalized())];
            if decision.intervened {
                out.push(tuple(&decision.executed, r));
            }
            out
        }
    }
}
