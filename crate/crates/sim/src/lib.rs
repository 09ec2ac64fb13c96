//! Contract-renewal reference workload on the sdb runtime, plus the `sdb`
//! command line.
//!
//! A renewal opens ninety days before contract end, is scored and drafted by
//! three delegated sub-agents, passes the policy gate and, above a discount
//! threshold, a human approval. Outreach goes through the proposer boundary;
//! a customer reply triggers a supervised billing and CRM saga. A versioned
//! state row owns the renewal throughout, and a churn timer closes it if the
//! customer stays silent.

pub mod agents;
pub mod cli;
pub mod config;
pub mod engine;
pub mod injection;
pub mod replay;
pub mod report;
pub mod telco;

pub use config::SimulationConfig;
pub use engine::{run_simulation, LedgerEntry, SimError, SimulationOutcome};
pub use report::SimulationReport;
pub use telco::{load_telco, RenewalScenario};
