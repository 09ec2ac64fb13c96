//! Pattern selection: workload profile in, four decisions and a six-row
//! architecture decision record out.

mod adr;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlPlane, ControlPlaneConfig, Deferral};

pub use adr::{contrast_table, emit_adr, AdrRecord, AdrRow, AdrStep, ContrastRow, Signoff};

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("incomplete profile: {0}")]
    IncompleteProfile(String),
    #[error("inconsistent profile: {unit} unit with {duration} duration")]
    InconsistentProfile {
        unit: UnitOfWork,
        duration: DurationClass,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitOfWork {
    Session,
    Task,
    Process,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationClass {
    Seconds,
    Minutes,
    HoursToDays,
}

impl fmt::Display for UnitOfWork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitOfWork::Session => "session",
            UnitOfWork::Task => "task",
            UnitOfWork::Process => "process",
        })
    }
}

impl fmt::Display for DurationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DurationClass::Seconds => "seconds",
            DurationClass::Minutes => "minutes",
            DurationClass::HoursToDays => "hours_to_days",
        })
    }
}

/// Every decision predicate, answered yes or no.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    pub name: String,
    pub unit_of_work: UnitOfWork,
    pub duration_class: DurationClass,
    pub world_changes_midflight: bool,
    pub pauses_over_one_hour: bool,
    /// When present, recomputes `pauses_over_one_hour` against the configured threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub longest_pause_minutes: Option<u64>,
    pub state_reconstructible_from_input: bool,
    pub external_side_effects: bool,
    pub single_outcome_owner: bool,
    pub subtasks_independent: bool,
    pub deterministic_merge_feasible: bool,
    pub peers_with_side_effects: bool,
    pub partial_failure_tolerated: bool,
    pub partial_write_cost_exceeds_compensation_cost: bool,
    pub wrong_write_cost_exceeds_latency_cost: bool,
    pub legally_consequential: bool,
    pub cases_outside_policy_envelope: bool,
    pub auditors_ask_who_decided: bool,
    #[serde(default)]
    pub annotations: Annotations,
}

/// Optional text carried into the decision record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signoff: Option<Signoff>,
    /// Replaces the generated "predicate fired" text per step.
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub predicate_text: std::collections::BTreeMap<AdrStep, String>,
    /// Date and rationale stamped on deferred control planes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deferral_date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deferral_rationale: Option<String>,
}

impl WorkloadProfile {
    pub fn from_toml(s: &str) -> Result<Self, SelectorError> {
        toml::from_str(s).map_err(|e| SelectorError::IncompleteProfile(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, SelectorError> {
        serde_json::from_str(s).map_err(|e| SelectorError::IncompleteProfile(e.to_string()))
    }

    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, SelectorError> {
        let text = std::fs::read_to_string(path).map_err(|source| SelectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub pause_threshold_minutes: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            pause_threshold_minutes: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeClass {
    Conversational,
    Autonomous,
    LongHorizon,
}

impl fmt::Display for RuntimeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuntimeClass::Conversational => "Conversational",
            RuntimeClass::Autonomous => "Autonomous",
            RuntimeClass::LongHorizon => "Long-Horizon",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concern {
    Coordination,
    State,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeDecision {
    pub class: RuntimeClass,
    pub dominant: Concern,
    pub fired: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spine {
    P5,
    P3,
    None,
}

impl fmt::Display for Spine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spine::P5 => "P5",
            Spine::P3 => "P3",
            Spine::None => "None",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpineDecision {
    pub spine: Spine,
    /// Spine predicates (1), (2), (3).
    pub predicates: [bool; 3],
    pub fired: String,
    /// Predicate (3) failed with (1) and (2) true: P3 pending a cost review.
    pub cost_review: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationDecision {
    pub p1: bool,
    pub p2: bool,
    pub fired: Vec<String>,
    /// Neither pattern fired; flagged for review.
    pub empty_selection: bool,
}

impl CoordinationDecision {
    pub fn label(&self) -> String {
        match (self.p1, self.p2) {
            (true, true) => "P1 + P2".into(),
            (true, false) => "P1".into(),
            (false, true) => "P2".into(),
            (false, false) => "none".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P6Level {
    /// Throttle only; the other planes deferred.
    Light,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub p4: bool,
    pub p6: Option<P6Level>,
    pub fired: Vec<String>,
    /// Planes shipping at v1 and the deferral ledger for the rest.
    pub planes: ControlPlaneConfig,
}

impl ControlDecision {
    pub fn label(&self) -> String {
        let p6 = match self.p6 {
            Some(P6Level::Light) => Some("P6 light"),
            Some(P6Level::Full) => Some("P6 full"),
            None => None,
        };
        match (self.p4, p6) {
            (true, Some(p6)) => format!("P4 + {p6}"),
            (true, None) => "P4".into(),
            (false, Some(p6)) => p6.into(),
            (false, None) => "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions {
    pub runtime: RuntimeDecision,
    pub spine: SpineDecision,
    pub coordination: CoordinationDecision,
    pub control: ControlDecision,
}

pub fn classify_runtime(p: &WorkloadProfile) -> Result<RuntimeDecision, SelectorError> {
    use DurationClass as D;
    use UnitOfWork as U;
    let (class, dominant) = match (p.unit_of_work, p.duration_class) {
        (U::Session, D::Seconds) => (RuntimeClass::Conversational, Concern::Coordination),
        (U::Task, D::Minutes) if p.external_side_effects => {
            (RuntimeClass::Autonomous, Concern::Control)
        }
        (U::Task, D::Minutes) => (RuntimeClass::Autonomous, Concern::Coordination),
        (U::Process, D::HoursToDays) => (RuntimeClass::LongHorizon, Concern::State),
        (unit, duration) => return Err(SelectorError::InconsistentProfile { unit, duration }),
    };
    let change = if p.world_changes_midflight {
        "world changes mid-flight"
    } else {
        "no mid-flight change"
    };
    Ok(RuntimeDecision {
        class,
        dominant,
        fired: format!("{} unit, {}, {change}", p.unit_of_work, p.duration_class),
    })
}

/// Spine rule. Predicate (2) false means no durable state to protect, unless
/// (1) still fires, in which case the pauses are carried by an event log.
pub fn choose_spine(p: &WorkloadProfile, cfg: &SelectorConfig) -> SpineDecision {
    let pauses = match p.longest_pause_minutes {
        Some(m) => m > cfg.pause_threshold_minutes,
        None => p.pauses_over_one_hour,
    };
    let preds = [
        pauses,
        !p.state_reconstructible_from_input,
        p.world_changes_midflight,
    ];
    let [p1, p2, p3] = preds;
    let (spine, cost_review, fired) = if !p2 {
        if p1 {
            (
                Spine::P3,
                false,
                "(1) holds, (2) fails: state rebuilds from the log".to_owned(),
            )
        } else {
            (
                Spine::None,
                false,
                "(2) fails: reconstruct on demand".to_owned(),
            )
        }
    } else if !p1 {
        (
            Spine::P3,
            false,
            "(1) fails: short pauses, event log suffices".to_owned(),
        )
    } else if !p3 {
        (
            Spine::P3,
            true,
            "(1), (2) hold, (3) fails: cost review".to_owned(),
        )
    } else {
        (Spine::P5, false, "(1), (2), (3) all hold".to_owned())
    };
    let fired = if !p1 && !p2 && !p3 {
        "no spine predicate holds".to_owned()
    } else {
        fired
    };
    SpineDecision {
        spine,
        predicates: preds,
        fired,
        cost_review,
    }
}

pub fn choose_coordination(p: &WorkloadProfile) -> CoordinationDecision {
    let p1 = p.single_outcome_owner && p.subtasks_independent && p.deterministic_merge_feasible;
    let mut fired = Vec::new();
    if p1 {
        fired.push("single owner, independent sub-tasks, deterministic merge".to_owned());
    }
    let p2_reasons: Vec<&str> = [
        (p.peers_with_side_effects, "peers write to external systems"),
        (
            p.partial_failure_tolerated,
            "partial results must survive peer failure",
        ),
        (
            p.partial_write_cost_exceeds_compensation_cost,
            "partial writes cost more than a compensation log",
        ),
    ]
    .into_iter()
    .filter_map(|(on, why)| on.then_some(why))
    .collect();
    let p2 = !p2_reasons.is_empty();
    fired.extend(p2_reasons.into_iter().map(str::to_owned));
    CoordinationDecision {
        p1,
        p2,
        fired,
        empty_selection: !p1 && !p2,
    }
}

pub fn choose_control(p: &WorkloadProfile) -> ControlDecision {
    let mut fired = Vec::new();
    if p.external_side_effects {
        fired.push("external side-effects".to_owned());
    }
    if p.wrong_write_cost_exceeds_latency_cost {
        fired.push("wrong write costs more than a policy check".to_owned());
    }
    let p4 = p.external_side_effects || p.wrong_write_cost_exceeds_latency_cost;
    let p6_reasons: Vec<&str> = [
        (p.legally_consequential, "legal or financial consequence"),
        (
            p.cases_outside_policy_envelope,
            "cases outside the policy envelope",
        ),
        (p.auditors_ask_who_decided, "auditors need the decider"),
    ]
    .into_iter()
    .filter_map(|(on, why)| on.then_some(why))
    .collect();
    let p6 = if p6_reasons.is_empty() {
        None
    } else if p.legally_consequential {
        Some(P6Level::Full)
    } else {
        Some(P6Level::Light)
    };
    fired.extend(p6_reasons.into_iter().map(str::to_owned));

    let date = p
        .annotations
        .deferral_date
        .clone()
        .unwrap_or_else(|| "unscheduled".into());
    let planes = match p6 {
        Some(P6Level::Full) => ControlPlaneConfig::full(),
        Some(P6Level::Light) => ControlPlaneConfig::light(
            &date,
            p.annotations
                .deferral_rationale
                .as_deref()
                .unwrap_or("no legal consequence; throttle bounds blast radius"),
        ),
        None => ControlPlaneConfig {
            enabled: Default::default(),
            deferrals: ControlPlane::ALL
                .into_iter()
                .map(|plane| Deferral {
                    plane,
                    date: date.clone(),
                    rationale: p
                        .annotations
                        .deferral_rationale
                        .clone()
                        .unwrap_or_else(|| "no P6 predicate holds".into()),
                })
                .collect(),
        },
    };
    ControlDecision {
        p4,
        p6,
        fired,
        planes,
    }
}

/// Runs steps one through four.
pub fn select(p: &WorkloadProfile, cfg: &SelectorConfig) -> Result<Decisions, SelectorError> {
    Ok(Decisions {
        runtime: classify_runtime(p)?,
        spine: choose_spine(p, cfg),
        coordination: choose_coordination(p),
        control: choose_control(p),
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Everything true except tolerated partial failure.
    pub fn renewal() -> WorkloadProfile {
        WorkloadProfile {
            name: "Contract Renewal".into(),
            unit_of_work: UnitOfWork::Process,
            duration_class: DurationClass::HoursToDays,
            world_changes_midflight: true,
            pauses_over_one_hour: true,
            longest_pause_minutes: None,
            state_reconstructible_from_input: false,
            external_side_effects: true,
            single_outcome_owner: true,
            subtasks_independent: true,
            deterministic_merge_feasible: true,
            peers_with_side_effects: true,
            partial_failure_tolerated: false,
            partial_write_cost_exceeds_compensation_cost: true,
            wrong_write_cost_exceeds_latency_cost: true,
            legally_consequential: true,
            cases_outside_policy_envelope: true,
            auditors_ask_who_decided: true,
            annotations: Annotations::default(),
        }
    }

    pub fn billing() -> WorkloadProfile {
        WorkloadProfile {
            name: "Billing & Payment Assist".into(),
            unit_of_work: UnitOfWork::Session,
            duration_class: DurationClass::Seconds,
            world_changes_midflight: false,
            pauses_over_one_hour: false,
            state_reconstructible_from_input: true,
            peers_with_side_effects: false,
            partial_write_cost_exceeds_compensation_cost: false,
            legally_consequential: false,
            cases_outside_policy_envelope: false,
            auditors_ask_who_decided: false,
            ..renewal()
        }
    }

    pub fn lead_warming() -> WorkloadProfile {
        WorkloadProfile {
            name: "Lead Warming".into(),
            state_reconstructible_from_input: true,
            peers_with_side_effects: false,
            partial_write_cost_exceeds_compensation_cost: false,
            legally_consequential: false,
            auditors_ask_who_decided: false,
            ..renewal()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn runtime_classes() {
        assert_eq!(
            classify_runtime(&billing()).unwrap().class,
            RuntimeClass::Conversational
        );
        assert_eq!(
            classify_runtime(&billing()).unwrap().dominant,
            Concern::Coordination
        );
        let r = classify_runtime(&renewal()).unwrap();
        assert_eq!(
            (r.class, r.dominant),
            (RuntimeClass::LongHorizon, Concern::State)
        );
        let mut auto = renewal();
        auto.unit_of_work = UnitOfWork::Task;
        auto.duration_class = DurationClass::Minutes;
        auto.external_side_effects = false;
        assert_eq!(
            classify_runtime(&auto).unwrap().dominant,
            Concern::Coordination
        );
        auto.external_side_effects = true;
        assert_eq!(classify_runtime(&auto).unwrap().dominant, Concern::Control);
        auto.duration_class = DurationClass::Seconds;
        assert!(matches!(
            classify_runtime(&auto),
            Err(SelectorError::InconsistentProfile { .. })
        ));
    }

    #[test]
    fn spine_rule_cases() {
        let cfg = SelectorConfig::default();
        assert_eq!(choose_spine(&renewal(), &cfg).spine, Spine::P5);
        assert_eq!(choose_spine(&lead_warming(), &cfg).spine, Spine::P3);
        assert_eq!(choose_spine(&billing(), &cfg).spine, Spine::None);
        let mut p = renewal();
        p.world_changes_midflight = false;
        let d = choose_spine(&p, &cfg);
        assert_eq!(d.spine, Spine::P3);
        assert!(d.cost_review);
        p = renewal();
        p.pauses_over_one_hour = false;
        assert_eq!(choose_spine(&p, &cfg).spine, Spine::P3);
    }

    #[test]
    fn pause_threshold_is_configurable() {
        let mut p = renewal();
        p.longest_pause_minutes = Some(90);
        assert_eq!(
            choose_spine(&p, &SelectorConfig::default()).spine,
            Spine::P5
        );
        assert_eq!(
            choose_spine(
                &p,
                &SelectorConfig {
                    pause_threshold_minutes: 120
                }
            )
            .spine,
            Spine::P3
        );
    }

    #[test]
    fn coordination_and_control() {
        assert_eq!(choose_coordination(&renewal()).label(), "P1 + P2");
        assert_eq!(choose_coordination(&lead_warming()).label(), "P1");
        assert_eq!(choose_control(&renewal()).label(), "P4 + P6 full");
        assert_eq!(choose_control(&lead_warming()).label(), "P4 + P6 light");
        assert_eq!(choose_control(&billing()).label(), "P4");
        for p in [renewal(), lead_warming(), billing()] {
            choose_control(&p).planes.validate().unwrap();
        }
        let mut none = billing();
        none.single_outcome_owner = false;
        assert!(choose_coordination(&none).empty_selection);
    }

    #[test]
    fn toml_profile_round_trip_and_missing_field() {
        let p = renewal();
        let s = toml::to_string(&p).unwrap();
        assert_eq!(WorkloadProfile::from_toml(&s).unwrap(), p);
        let broken = s.replace("legally_consequential = true\n", "");
        assert!(matches!(
            WorkloadProfile::from_toml(&broken),
            Err(SelectorError::IncompleteProfile(_))
        ));
    }
}
