//! The renewal workflow's simulated workers: three delegated sub-agents, the
//! outreach composer, and the two contract peers.

use std::collections::BTreeMap;

use sdb_core::coordination::{Peer, PeerPlan, PlannedWrite, SubAgent, SubAgentCall, SubAgentRun};
use sdb_core::sdb::{propose, ModelVersion, OutputDistribution, ProposerConfig, WeightedOption};
use sdb_core::{record, Record, Scalar, Weight};
use sha2::{Digest, Sha256};

use crate::telco::{RenewalScenario, SignalKind};

/// Deterministic 64-bit draw keyed by the run seed, a purpose and a request.
pub fn keyed(seed: u64, purpose: &str, request_id: &str, extra: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update((request_id.len() as u64).to_le_bytes());
    h.update(request_id.as_bytes());
    h.update(extra.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Uniform draw in `[0, 1)`.
pub fn keyed_unit(seed: u64, purpose: &str, request_id: &str, extra: u64) -> f64 {
    (keyed(seed, purpose, request_id, extra) >> 11) as f64 / (1u64 << 53) as f64
}

/// Churn-risk class from the features, used to pick bias-table rows.
pub fn risk_class(s: &RenewalScenario) -> &'static str {
    let mut score = 0;
    for k in [
        SignalKind::EarlyTenure,
        SignalKind::PricePressure,
        SignalKind::PaymentFriction,
        SignalKind::SupportGap,
    ] {
        if s.has_signal(k) {
            score += 1;
        }
    }
    if s.text("contract").eq_ignore_ascii_case("month-to-month") {
        score += 1;
    }
    match score {
        3.. => "high",
        1 | 2 => "mid",
        _ => "low",
    }
}

pub fn offer(kind: &str, discount_pct: i64, term_months: i64) -> Record {
    record! { "offer" => kind, "discount_pct" => discount_pct, "term_months" => term_months }
}

fn weighted(options: Vec<(u32, Record)>) -> OutputDistribution {
    OutputDistribution::new(
        options
            .into_iter()
            .map(|(weight, content)| WeightedOption { weight, content })
            .collect(),
    )
    .expect("static distributions are valid")
}

pub fn drafter_config(sigma: f64, delta: f64) -> ProposerConfig {
    ProposerConfig::new(sigma, delta)
        .expect("validated by the caller")
        .with_class(
            "high",
            weighted(vec![
                (3, offer("discount", 20, 12)),
                (2, offer("discount", 30, 12)),
                (2, offer("discount", 15, 12)),
                (1, offer("discount", 25, 24)),
                (1, offer("restructure", 5, 24)),
            ]),
        )
        .with_class(
            "mid",
            weighted(vec![
                (3, offer("discount", 10, 12)),
                (2, offer("discount", 15, 12)),
                (2, offer("standard", 0, 12)),
                (1, offer("restructure", 5, 24)),
            ]),
        )
        .with_class(
            "low",
            weighted(vec![
                (5, offer("standard", 0, 12)),
                (2, offer("discount", 10, 12)),
            ]),
        )
}

pub fn scorer_config(sigma: f64, delta: f64) -> ProposerConfig {
    let score = |s: i64| record! { "churn_score" => s };
    ProposerConfig::new(sigma, delta)
        .expect("validated by the caller")
        .with_class("high", weighted(vec![(3, score(80)), (1, score(65))]))
        .with_class("mid", weighted(vec![(2, score(50)), (1, score(35))]))
        .with_class("low", weighted(vec![(3, score(15)), (1, score(30))]))
}

pub fn builder_config(sigma: f64, delta: f64) -> ProposerConfig {
    let terms = |t: i64, plan: &str| record! { "term_months" => t, "plan" => plan };
    let dist = weighted(vec![(2, terms(12, "annual")), (1, terms(24, "biennial"))]);
    ProposerConfig::new(sigma, delta)
        .expect("validated by the caller")
        .with_class("*", dist)
}

pub fn channel_config(sigma: f64, delta: f64) -> ProposerConfig {
    let ch = |c: &str| record! { "channel" => c };
    ProposerConfig::new(sigma, delta)
        .expect("validated by the caller")
        .with_class(
            "*",
            weighted(vec![(5, ch("email")), (2, ch("phone")), (2, ch("sms"))]),
        )
}

/// Sub-agent whose work is one simulated proposer call.
pub struct ProposerAgent {
    id: String,
    cfg: ProposerConfig,
    seed: u64,
    model_version: ModelVersion,
    latency_ms: u64,
}

impl ProposerAgent {
    pub fn new(
        id: &str,
        cfg: ProposerConfig,
        seed: u64,
        model_version: ModelVersion,
        latency_ms: u64,
    ) -> Self {
        Self {
            id: id.into(),
            cfg,
            seed,
            model_version,
            latency_ms,
        }
    }
}

impl SubAgent for ProposerAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn invoke(&mut self, task: &Record, call: &mut SubAgentCall) -> SubAgentRun {
        call.propose();
        let p = propose(task, &self.cfg, self.seed, self.model_version);
        call.advance(self.latency_ms);
        Ok(p.content)
    }
}

pub const SCORER: &str = "churn-scorer";
pub const DRAFTER: &str = "offer-drafter";
pub const BUILDER: &str = "contract-builder";

/// Merge weights: the drafter owns the offer terms.
pub fn sub_agent_weights() -> BTreeMap<String, Weight> {
    [
        (SCORER.to_owned(), Weight::new(1, 4)),
        (DRAFTER.to_owned(), Weight::new(1, 2)),
        (BUILDER.to_owned(), Weight::new(1, 4)),
    ]
    .into()
}

/// Billing side of the contract saga. Writes plan then discount, and on a
/// failing attempt dies after both writes landed.
pub struct BillingPeer {
    pub renewal_id: String,
    pub plan: String,
    pub discount_pct: i64,
    pub fail: Option<String>,
}

impl Peer for BillingPeer {
    fn id(&self) -> &str {
        "billing"
    }

    fn plan(&mut self, _input: &Record) -> PeerPlan {
        let writes = vec![
            PlannedWrite::new(
                10,
                "billing",
                &format!("{}.plan", self.renewal_id),
                self.plan.as_str(),
            ),
            PlannedWrite::new(
                20,
                "billing",
                &format!("{}.discount_pct", self.renewal_id),
                self.discount_pct,
            ),
        ];
        match &self.fail {
            Some(reason) => PeerPlan {
                writes,
                duration: 30,
                result: Err(reason.clone()),
                fail_at: Some(30),
            },
            None => PeerPlan {
                writes,
                duration: 25,
                result: Ok(record! { "billing_ref" => format!("bill-{}", self.renewal_id) }),
                fail_at: None,
            },
        }
    }
}

pub struct CrmPeer {
    pub renewal_id: String,
    pub status: String,
}

impl Peer for CrmPeer {
    fn id(&self) -> &str {
        "crm"
    }

    fn plan(&mut self, _input: &Record) -> PeerPlan {
        PeerPlan {
            writes: vec![PlannedWrite::new(
                15,
                "crm",
                &format!("{}.status", self.renewal_id),
                self.status.as_str(),
            )],
            duration: 18,
            result: Ok(record! { "crm_ref" => format!("crm-{}", self.renewal_id) }),
            fail_at: None,
        }
    }
}

pub fn text_of(r: &Record, key: &str) -> String {
    r.get(key)
        .and_then(Scalar::as_text)
        .unwrap_or_default()
        .to_owned()
}

pub fn int_of(r: &Record, key: &str) -> i64 {
    r.get(key).and_then(Scalar::as_int).unwrap_or(0)
}
