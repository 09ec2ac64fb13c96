use sdb_core::control::{
    GatePolicy, GateRule, RuleKind, SupervisorSpec, ThrottleCaps, ThrottleScope,
};
use sdb_core::sdb::ModelVersion;
use sdb_core::{LogicalTime, Scalar};
use serde::{Deserialize, Serialize};

use crate::telco::CONTRACT_END_DAY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scenario_count: usize,
    /// Base seed for the dataset sample and every keyed draw in the run.
    pub seed: u64,
    pub model_version: ModelVersion,
    pub proposer_sigma: f64,
    pub divergence_rate_delta: f64,
    /// Day offset of the product end-of-life event, relative to contract end.
    pub eol_event_day: i32,
    pub policy_before_eol: GatePolicy,
    pub policy_after_eol: GatePolicy,
    /// Discounts above this need an approval.
    pub approval_threshold_pct: i64,
    /// The automated approver grants a discount iff it is at most half this cap.
    pub discount_cap_pct: i64,
    pub approval_sla: u64,
    /// Share of approvals the automated approver answers only after the SLA.
    pub approver_overload_rate: f64,
    pub throttle: ThrottleCaps,
    pub supervisor: SupervisorSpec,
    pub billing_failure_rate: f64,
    /// Share of renewals whose billing peer fails on every attempt.
    pub fragile_billing_rate: f64,
    pub kill_propagation_ms: u64,
    /// Wall-clock pause after each simulated day, for interactive sessions.
    pub tick_delay_ms: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            scenario_count: 100,
            seed: 7,
            model_version: ModelVersion(1),
            proposer_sigma: 0.1,
            divergence_rate_delta: 0.2,
            eol_event_day: -47,
            policy_before_eol: default_policy_v1(),
            policy_after_eol: default_policy_v2(),
            approval_threshold_pct: 10,
            discount_cap_pct: 40,
            approval_sla: 2 * LogicalTime::MILLIS_PER_DAY,
            approver_overload_rate: 0.15,
            throttle: ThrottleCaps::new(4, 40, ThrottleScope::Global).expect("positive caps"),
            supervisor: SupervisorSpec::new(2, 3_600_000, 2.0).expect("factor above one"),
            billing_failure_rate: 0.10,
            fragile_billing_rate: 0.04,
            kill_propagation_ms: 250,
            tick_delay_ms: 0,
        }
    }
}

impl SimulationConfig {
    /// Absolute simulation day of the end-of-life event.
    pub fn eol_day(&self) -> u64 {
        (i64::from(CONTRACT_END_DAY) + i64::from(self.eol_event_day)).max(0) as u64
    }

    pub fn eol_time(&self) -> LogicalTime {
        LogicalTime::from_days(self.eol_day())
    }
}

pub fn default_policy_v1() -> GatePolicy {
    GatePolicy::new(
        "policy-v1",
        vec![GateRule::new(
            "max_discount",
            RuleKind::MaxInt {
                field: "discount_pct".into(),
                max: 25,
            },
        )
        .for_action("offer")],
    )
    .expect("non-empty rules")
}

pub fn default_policy_v2() -> GatePolicy {
    GatePolicy::new(
        "policy-v2",
        vec![
            GateRule::new(
                "max_discount",
                RuleKind::MaxInt {
                    field: "discount_pct".into(),
                    max: 20,
                },
            )
            .for_action("offer"),
            GateRule::new(
                "eol_restructure",
                RuleKind::Require {
                    when_field: "product_eol".into(),
                    when_value: Scalar::Bool(true),
                    field: "offer".into(),
                    value: Scalar::from("restructure"),
                },
            )
            .for_action("offer"),
        ],
    )
    .expect("non-empty rules")
}
