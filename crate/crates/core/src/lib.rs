//! Runtime kernel for agents built around a stochastic proposer.
//!
//! Every proposal crosses the same four-part boundary before it can touch the
//! world: a proposer emits it, a deterministic verifier judges it, an accepted
//! proposal is committed durably, and a rejected one is answered with a typed
//! reject signal. The modules here assemble that boundary into the six runtime
//! patterns:
//!
//! | module           | patterns                                            |
//! |------------------|-----------------------------------------------------|
//! | [`sdb`]          | the boundary itself, plus the simulated proposer   |
//! | [`spine`]        | P3 event log with replay, P5 versioned CAS rows     |
//! | [`coordination`] | P1 delegation + merge, P2 scatter-gather + saga     |
//! | [`control`]      | P4 supervisor + gate, P6 human control planes      |
//! | [`selector`]     | workload profile → six-line decision record        |
//! | [`diagnostics`]  | signature catalog, diagnosis, momentum estimate    |
//! | [`observability`]| request-threaded trace store and its three lenses  |
//!
//! Everything runs against a [`LogicalTime`] clock and seeded randomness, so
//! two runs with the same inputs produce byte-identical traces.
//!
//! The numeric pieces (merge weights, momentum fits) are generic over their
//! scalar type; the aliases below name the concrete instantiations used by
//! the rest of the workspace.

pub mod audit;
pub mod clock;
pub mod control;
pub mod coordination;
pub mod diagnostics;
pub mod observability;
pub mod sdb;
pub mod selector;
pub mod spine;
pub mod value;

pub use audit::{AuditRecord, AuditTrail, Plane};
pub use clock::LogicalTime;
pub use value::{Record, Scalar};

/// Exact rational merge weight.
pub type Weight = num_rational::Ratio<i64>;

pub type ReliabilitySeries64 = diagnostics::ReliabilitySeries<f64>;
pub type ReliabilitySeries32 = diagnostics::ReliabilitySeries<f32>;
pub type MomentumEstimate64 = diagnostics::MomentumEstimate<f64>;
pub type MomentumEstimate32 = diagnostics::MomentumEstimate<f32>;
