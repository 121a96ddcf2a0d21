//! Model adaptation during operation as a Plan-Do-Check-Act loop: detect
//! the gap between measured and virtual behavior, search the model pool by
//! depth, fit each candidate, rank them by quality, time and cost, and
//! activate the best one.

mod compare;
mod fit;
mod pdca;

pub use compare::{compare_traces, Channels, DeviationReport};
pub use fit::{fit_objective, fit_parameters, replay, FitOptions, FitResult};
pub use pdca::{
    act, check, diagnose, do_structural, evaluate_candidate, plan, quality_residual, run_pdca,
    ActiveModelConfiguration, ActiveSlot, AdaptationGoal, AdaptationResult, AdaptationStatus,
    Cause, CheckOutcome, Diagnosis, DiagnosisTolerances, GoalCause, GoalTarget,
    ModelConfiguration, PdcaLimits, QualityChannel, Requirements, UtilityWeights, LEAKAGE_CAUSE,
    NO_FAULT, PUMP_CAUSE,
};

use thiserror::Error;

use crate::models::ModelError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("incomparable traces: {0}")]
    Incomparable(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parameter fit failed: {0}")]
    FitFailed(String),
    #[error("no candidate model: {0}")]
    NoCandidate(String),
    #[error("no active model configuration")]
    NoActive,
    #[error("model `{0}` is not in the pool")]
    UnknownModel(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
