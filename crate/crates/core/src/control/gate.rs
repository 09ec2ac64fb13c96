use serde::{Deserialize, Serialize};

use super::{ControlError, PolicyVersion};
use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;
use crate::value::{Record, Scalar};

/// One deterministic check. A rule only applies when every field it names
/// is present; fields are looked up in the action first, then the context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum RuleKind {
    MaxInt {
        field: String,
        max: i64,
    },
    MinInt {
        field: String,
        min: i64,
    },
    Forbid {
        field: String,
        value: Scalar,
    },
    AllowedValues {
        field: String,
        values: Vec<Scalar>,
    },
    /// When `when_field == when_value`, `field` must equal `value`.
    Require {
        when_field: String,
        when_value: Scalar,
        field: String,
        value: Scalar,
    },
    /// Denies while the context flag is true.
    ContextFlag {
        flag: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateRule {
    pub id: String,
    /// Restricts the rule to actions whose `action` field has this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(flatten)]
    pub kind: RuleKind,
}

impl GateRule {
    pub fn new(id: &str, kind: RuleKind) -> Self {
        Self {
            id: id.into(),
            action: None,
            kind,
        }
    }

    pub fn for_action(mut self, action: &str) -> Self {
        self.action = Some(action.into());
        self
    }

    /// `Some(true)` allows, `Some(false)` denies, `None` when it does not apply.
    fn check(&self, action: &Record, ctx: &Record) -> Option<bool> {
        if let Some(kind) = &self.action {
            if action.get("action").and_then(Scalar::as_text) != Some(kind.as_str()) {
                return None;
            }
        }
        let get = |f: &str| action.get(f).or_else(|| ctx.get(f));
        match &self.kind {
            RuleKind::MaxInt { field, max } => get(field)?.as_int().map(|v| v <= *max),
            RuleKind::MinInt { field, min } => get(field)?.as_int().map(|v| v >= *min),
            RuleKind::Forbid { field, value } => Some(get(field)? != value),
            RuleKind::AllowedValues { field, values } => Some(values.contains(get(field)?)),
            RuleKind::Require {
                when_field,
                when_value,
                field,
                value,
            } => {
                if get(when_field)? != when_value {
                    return None;
                }
                Some(get(field) == Some(value))
            }
            RuleKind::ContextFlag { flag } => Some(ctx.get(flag)? != &Scalar::Bool(true)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub policy_version: PolicyVersion,
    pub rules: Vec<GateRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision")]
pub enum GateDecision {
    Allow,
    Deny { rule_id: String },
}

impl GateDecision {
    pub fn is_allow(&self) -> bool {
        matches!(self, GateDecision::Allow)
    }
}

impl GatePolicy {
    pub fn new(version: &str, rules: Vec<GateRule>) -> Result<Self, ControlError> {
        if rules.is_empty() {
            return Err(ControlError::InvalidSpec("gate policy has no rules".into()));
        }
        Ok(Self {
            policy_version: PolicyVersion::new(version),
            rules,
        })
    }

    /// Pure evaluation: first denying rule wins, at most one pass over the rules.
    pub fn evaluate(&self, action: &Record, context: &Record) -> GateDecision {
        self.rules
            .iter()
            .find(|r| r.check(action, context) == Some(false))
            .map_or(GateDecision::Allow, |r| GateDecision::Deny {
                rule_id: r.id.clone(),
            })
    }
}

/// Evaluates `policy`; a deny is written to the audit trail with the
/// policy version it was decided under.
pub fn gate_check(
    action: &Record,
    context: &Record,
    policy: &GatePolicy,
    request_id: &str,
    at: LogicalTime,
    audit: &mut AuditTrail,
) -> GateDecision {
    let d = policy.evaluate(action, context);
    if let GateDecision::Deny { rule_id } = &d {
        audit.append(
            AuditEntry::new(request_id, Plane::Gate, "deny", at)
                .policy(&policy.policy_version)
                .detail(rule_id.clone()),
        );
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record;

    fn policy() -> GatePolicy {
        GatePolicy::new(
            "v1",
            vec![
                GateRule::new(
                    "max_discount",
                    RuleKind::MaxInt {
                        field: "discount_pct".into(),
                        max: 20,
                    },
                ),
                GateRule::new(
                    "eol_restructure",
                    RuleKind::Require {
                        when_field: "product_eol".into(),
                        when_value: true.into(),
                        field: "offer".into(),
                        value: "restructure".into(),
                    },
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn ninety_percent_discount_is_denied_and_audited() {
        let mut audit = AuditTrail::new();
        let d = gate_check(
            &record! { "discount_pct" => 90i64 },
            &Record::new(),
            &policy(),
            "r1",
            LogicalTime(5),
            &mut audit,
        );
        assert_eq!(
            d,
            GateDecision::Deny {
                rule_id: "max_discount".into()
            }
        );
        assert_eq!(audit.count(Plane::Gate), 1);
        assert_eq!(
            audit.records()[0].policy_version,
            Some(PolicyVersion::new("v1"))
        );
    }

    #[test]
    fn untouched_action_is_allowed() {
        let mut audit = AuditTrail::new();
        let d = gate_check(
            &record! { "note" => "hi" },
            &Record::new(),
            &policy(),
            "r1",
            LogicalTime(0),
            &mut audit,
        );
        assert!(d.is_allow());
        assert!(audit.is_empty());
    }

    #[test]
    fn require_reads_context() {
        let p = policy();
        let ctx = record! { "product_eol" => true };
        assert!(!p
            .evaluate(&record! { "offer" => "discount" }, &ctx)
            .is_allow());
        assert!(p
            .evaluate(&record! { "offer" => "restructure" }, &ctx)
            .is_allow());
        assert!(p
            .evaluate(&record! { "offer" => "discount" }, &Record::new())
            .is_allow());
    }

    #[test]
    fn scoped_and_flag_rules() {
        let p = GatePolicy::new(
            "v",
            vec![
                GateRule::new(
                    "no_refunds",
                    RuleKind::Forbid {
                        field: "kind".into(),
                        value: "refund".into(),
                    },
                )
                .for_action("billing"),
                GateRule::new(
                    "frozen",
                    RuleKind::ContextFlag {
                        flag: "frozen".into(),
                    },
                ),
            ],
        )
        .unwrap();
        assert!(!p
            .evaluate(
                &record! { "action" => "billing", "kind" => "refund" },
                &Record::new()
            )
            .is_allow());
        assert!(p
            .evaluate(
                &record! { "action" => "crm", "kind" => "refund" },
                &Record::new()
            )
            .is_allow());
        assert!(!p
            .evaluate(&Record::new(), &record! { "frozen" => true })
            .is_allow());
    }

    #[test]
    fn empty_policy_rejected_and_serde_round_trips() {
        assert!(GatePolicy::new("v", vec![]).is_err());
        let p = policy();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<GatePolicy>(&s).unwrap(), p);
    }
}
