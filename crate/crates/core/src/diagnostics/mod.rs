//! Failure-signature catalog, the replay-based diagnosis, and the momentum
//! fit over a reliability series.

mod catalog;
mod diagnose;
mod momentum;

use thiserror::Error;

pub use catalog::{
    catalog, match_signatures, FailureSignature, MatchWindow, Pattern, SignatureMatch,
};
pub use diagnose::{
    diagnose, Diagnosis, DiagnosisReport, DiagnosticConfig, FailureCase, ReplayOutcome,
    MIGRATION_ADVICE,
};
pub use momentum::{
    estimate_momentum, estimate_momentum_at, rolling_reliability, MomentumEstimate,
    ReliabilitySeries, DEFAULT_WINDOW, MIN_SAMPLES,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiagnosticsError {
    #[error("replay unavailable: need at least two model versions, have {0}")]
    ReplayUnavailable(usize),
    #[error("no prior model version below {0}")]
    NoPriorVersion(crate::sdb::ModelVersion),
    #[error("empty failure batch")]
    EmptyBatch,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("insufficient data: {have} samples, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("sample {0}: time is not strictly increasing")]
    NonIncreasing(usize),
    #[error("sample {0}: value is not finite")]
    NonFinite(usize),
}
