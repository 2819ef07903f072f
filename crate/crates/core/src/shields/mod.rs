//! Action correction: replacement, projection and masking, the learning
//! tuples built from a shield decision, and the shielded finite-MDP model.

mod mask;
mod mdp;
mod project;
mod replace;
mod tuples;

use nalgebra::DVector;
use rand::Rng;

pub use mask::{
    mask_continuous, mask_discrete, masking_inverse, masking_transform, safe_action_box, DiscreteMask,
};
pub use mdp::{shielded_mdp_model, simulate_shielded, FiniteMDP};
pub use project::{project_onto, shield_project, PROJECTION_MARGIN};
pub use replace::{sample_safe_action, shield_replace, ReplaceStrategy, SAMPLING_BUDGET};
pub use tuples::{make_learning_tuples, LearningTuple, TupleMode};

use crate::safety::SafetyVerifier;
use crate::{Error, Result};

/// Which correction mechanism is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShieldType {
    None,
    ReplaceSample,
    ReplaceFailsafe,
    Project,
    Mask,
}

impl ShieldType {
    pub const ALL: [ShieldType; 5] = [
        ShieldType::None,
        ShieldType::ReplaceSample,
        ShieldType::ReplaceFailsafe,
        ShieldType::Project,
        ShieldType::Mask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShieldType::None => "none",
            ShieldType::ReplaceSample => "replace_sample",
            ShieldType::ReplaceFailsafe => "replace_failsafe",
            ShieldType::Project => "project",
            ShieldType::Mask => "mask",
        }
    }

    pub fn is_active(self) -> bool {
        self != ShieldType::None
    }

    /// Tuple modes that make sense with this shield. Masking only changes
    /// the action space the agent acts in, so there is nothing to adapt.
    pub fn valid_tuples(self) -> &'static [TupleMode] {
        match self {
            ShieldType::None | ShieldType::Mask => &[TupleMode::Naive],
            _ => &TupleMode::ALL,
        }
    }

    pub fn check_tuple(self, mode: TupleMode) -> Result<()> {
        if self.valid_tuples().contains(&mode) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "tuple mode `{}` cannot be combined with shield `{}`",
                mode.name(),
                self.name()
            )))
        }
    }
}

impl std::str::FromStr for ShieldType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shield type `{s}`")))
    }
}

/// Why a shield fell back to the failsafe controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// Rejection sampling ran out of attempts.
    SamplingBudget,
    /// The projection QP had no verified solution.
    Projection,
    /// No action of the discrete grid was safe.
    EmptyMask,
    /// The safe action box around the center of 𝔸 is empty.
    DegenerateBox,
}

/// Outcome of passing one proposed action through a shield.
#[derive(Debug, Clone, PartialEq)]
pub struct ShieldDecision {
    pub proposed: DVector<f64>,
    pub executed: DVector<f64>,
    pub intervened: bool,
    /// λ of the safe action box (masking only).
    pub mask_scale: Option<f64>,
    /// `‖executed − proposed‖₂` (projection only).
    pub projection_distance: Option<f64>,
    pub fallback: Option<Fallback>,
}

impl ShieldDecision {
    pub fn pass_through(a: DVector<f64>) -> Self {
        Self {
            proposed: a.clone(),
            executed: a,
            intervened: false,
            mask_scale: None,
            projection_distance: None,
            fallback: None,
        }
    }

    fn failsafe(v: &SafetyVerifier, s: &DVector<f64>, proposed: DVector<f64>, why: Fallback) -> Result<Self> {
        Ok(Self {
            executed: v.failsafe_action(s)?,
            proposed,
            intervened: true,
            mask_scale: None,
            projection_distance: None,
            fallback: Some(why),
        })
    }
}

/// A shield for continuous proposals: the verifier plus the mechanism.
///
/// `ShieldType::None` passes actions through unchanged.
#[derive(Debug, Clone)]
pub struct Shield {
    pub kind: ShieldType,
    pub verifier: SafetyVerifier,
}

impl Shield {
    pub fn new(kind: ShieldType, verifier: SafetyVerifier) -> Self {
        Self { kind, verifier }
    }

    pub fn apply<R: Rng + ?Sized>(&self, s: &DVector<f64>, a: &DVector<f64>, rng: &mut R) -> Result<ShieldDecision> {
        let v = &self.verifier;
        match self.kind {
            ShieldType::None => Ok(ShieldDecision::pass_through(a.clone())),
            ShieldType::ReplaceSample => shield_replace(v, s, a, ReplaceStrategy::Sample, rng),
            ShieldType::ReplaceFailsafe => shield_replace(v, s, a, ReplaceStrategy::Failsafe, rng),
            ShieldType::Project => shield_project(v, s, a),
            ShieldType::Mask => mask_continuous(v, s, a),
        }
    }
}
