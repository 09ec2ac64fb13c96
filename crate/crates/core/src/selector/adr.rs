use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Decisions, SelectorError, Spine, WorkloadProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdrStep {
    RuntimeClass,
    Spine,
    Coordination,
    Control,
    Sequence,
    DateModelVersion,
}

impl AdrStep {
    pub const ALL: [AdrStep; 6] = [
        AdrStep::RuntimeClass,
        AdrStep::Spine,
        AdrStep::Coordination,
        AdrStep::Control,
        AdrStep::Sequence,
        AdrStep::DateModelVersion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AdrStep::RuntimeClass => "Runtime class",
            AdrStep::Spine => "Spine",
            AdrStep::Coordination => "Coordination",
            AdrStep::Control => "Control",
            AdrStep::Sequence => "Sequence",
            AdrStep::DateModelVersion => "Date / model ver.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signoff {
    pub name: String,
    pub date: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdrRow {
    pub step: AdrStep,
    pub pattern: String,
    pub predicate_fired: String,
    pub failure_signature_if_wrong: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdrRecord {
    pub workload: String,
    pub rows: Vec<AdrRow>,
    /// Required on the spine choice; absent means the record is a draft.
    pub signoff: Option<Signoff>,
    /// Review flags such as `cost_review` or `empty_selection`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// One line of the cross-workload comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub workload: String,
    pub class: String,
    pub spine: String,
    pub coordination: String,
    pub control: String,
}

pub fn emit_adr(
    profile: &WorkloadProfile,
    d: &Decisions,
    model_version_tag: &str,
    date_tag: &str,
) -> AdrRecord {
    let text = |step: AdrStep, generated: String| {
        profile
            .annotations
            .predicate_text
            .get(&step)
            .cloned()
            .unwrap_or(generated)
    };
    let spine_sig = match d.spine.spine {
        Spine::P5 | Spine::P3 => "p3.replay_divergence",
        Spine::None => "durability_overhead",
    };
    let coord_sig = match (d.coordination.p1, d.coordination.p2) {
        (_, true) => "p2.unclean_compensation",
        (true, false) => "p1.merge_dominance",
        (false, false) => "n/a",
    };
    let control_sig = match (d.control.p4, d.control.p6) {
        (_, Some(_)) => "p6.kill_switch_leak",
        (true, None) => "p4.gate_latency",
        (false, None) => "ungated_write",
    };
    let runtime_sig = match d.runtime.class {
        super::RuntimeClass::Conversational => "response_sla_miss",
        super::RuntimeClass::Autonomous => "stale_context",
        super::RuntimeClass::LongHorizon => "latency_budget_violation",
    };
    let join = |v: &[String]| {
        if v.is_empty() {
            "no predicate holds".to_owned()
        } else {
            v.join("; ")
        }
    };
    let rows = vec![
        AdrRow {
            step: AdrStep::RuntimeClass,
            pattern: d.runtime.class.to_string(),
            predicate_fired: text(AdrStep::RuntimeClass, d.runtime.fired.clone()),
            failure_signature_if_wrong: runtime_sig.into(),
        },
        AdrRow {
            step: AdrStep::Spine,
            pattern: d.spine.spine.to_string(),
            predicate_fired: text(AdrStep::Spine, d.spine.fired.clone()),
            failure_signature_if_wrong: spine_sig.into(),
        },
        AdrRow {
            step: AdrStep::Coordination,
            pattern: d.coordination.label(),
            predicate_fired: text(AdrStep::Coordination, join(&d.coordination.fired)),
            failure_signature_if_wrong: coord_sig.into(),
        },
        AdrRow {
            step: AdrStep::Control,
            pattern: d.control.label(),
            predicate_fired: text(AdrStep::Control, join(&d.control.fired)),
            failure_signature_if_wrong: control_sig.into(),
        },
        AdrRow {
            step: AdrStep::Sequence,
            pattern: "Console-first".into(),
            predicate_fired: text(
                AdrStep::Sequence,
                "console and trace ship before the agent".into(),
            ),
            failure_signature_if_wrong: "blind_operations".into(),
        },
        AdrRow {
            step: AdrStep::DateModelVersion,
            pattern: date_tag.into(),
            predicate_fired: model_version_tag.into(),
            failure_signature_if_wrong: "n/a".into(),
        },
    ];
    let mut flags = Vec::new();
    if d.spine.cost_review {
        flags.push("cost_review".to_owned());
    }
    if d.coordination.empty_selection {
        flags.push("empty_selection".to_owned());
    }
    AdrRecord {
        workload: profile.name.clone(),
        rows,
        signoff: profile.annotations.signoff.clone(),
        flags,
    }
}

impl AdrRecord {
    pub fn row(&self, step: AdrStep) -> &AdrRow {
        self.rows
            .iter()
            .find(|r| r.step == step)
            .expect("validated record has every step")
    }

    /// Exactly six rows, one per step, in order.
    pub fn validate(&self) -> Result<(), SelectorError> {
        let steps: Vec<AdrStep> = self.rows.iter().map(|r| r.step).collect();
        if steps != AdrStep::ALL {
            return Err(SelectorError::IncompleteProfile(format!(
                "decision record rows out of shape: {steps:?}"
            )));
        }
        if let Some(r) = self
            .rows
            .iter()
            .find(|r| r.predicate_fired.trim().is_empty())
        {
            return Err(SelectorError::IncompleteProfile(format!(
                "empty rationale on {:?}",
                r.step
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SelectorError> {
        let r: AdrRecord =
            serde_json::from_str(s).map_err(|e| SelectorError::IncompleteProfile(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn is_draft(&self) -> bool {
        self.signoff.is_none()
    }

    /// Fixed-width four-column table.
    pub fn to_table(&self) -> String {
        let header = [
            "Step",
            "Pattern",
            "Predicate that fired",
            "Failure signature if wrong",
        ];
        let cells: Vec<[&str; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.step.label(),
                    r.pattern.as_str(),
                    r.predicate_fired.as_str(),
                    r.failure_signature_if_wrong.as_str(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        match &self.signoff {
            None => out.push_str("DRAFT: spine choice not signed off\n"),
            Some(s) => {
                let _ = writeln!(out, "Signed off: {} ({})", s.name, s.date);
            }
        }
        let _ = writeln!(out, "Workload: {}", self.workload);
        let line = |out: &mut String, row: [&str; 4]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
        };
        line(&mut out, header);
        let _ = writeln!(out, "{}", widths.map(|w| "-".repeat(w)).join("-+-"));
        for row in cells {
            line(&mut out, row);
        }
        if !self.flags.is_empty() {
            let _ = writeln!(out, "Flags: {}", self.flags.join(", "));
        }
        out
    }

    pub fn contrast_row(&self) -> ContrastRow {
        let spine = match self.row(AdrStep::Spine).pattern.as_str() {
            "None" => "none".to_owned(),
            s => s.to_owned(),
        };
        ContrastRow {
            workload: self.workload.clone(),
            class: self.row(AdrStep::RuntimeClass).pattern.clone(),
            spine,
            coordination: self.row(AdrStep::Coordination).pattern.clone(),
            control: self.row(AdrStep::Control).pattern.clone(),
        }
    }
}

/// Side-by-side comparison of several records.
pub fn contrast_table(records: &[AdrRecord]) -> String {
    let header = ["Workload", "Class", "Spine", "Coordination", "Control"];
    let rows: Vec<[String; 5]> = records
        .iter()
        .map(|r| {
            let c = r.contrast_row();
            [c.workload, c.class, c.spine, c.coordination, c.control]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        parts.join(" | ").trim_end().to_owned()
    };
    let _ = writeln!(out, "{}", fmt_row(header.to_vec()));
    let _ = writeln!(out, "{}", widths.map(|w| "-".repeat(w)).join("-+-"));
    for row in &rows {
        let _ = writeln!(out, "{}", fmt_row(row.iter().map(String::as_str).collect()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{select, SelectorConfig};
    use super::*;

    fn adr(p: &WorkloadProfile) -> AdrRecord {
        emit_adr(
            p,
            &select(p, &SelectorConfig::default()).unwrap(),
            "model-x",
            "2026 Q2",
        )
    }

    #[test]
    fn renewal_record_shape() {
        let r = adr(&renewal());
        r.validate().unwrap();
        let patterns: Vec<&str> = r.rows.iter().map(|r| r.pattern.as_str()).collect();
        assert_eq!(
            patterns,
            [
                "Long-Horizon",
                "P5",
                "P1 + P2",
                "P4 + P6 full",
                "Console-first",
                "2026 Q2"
            ]
        );
        assert_eq!(r.row(AdrStep::DateModelVersion).predicate_fired, "model-x");
        assert!(r.is_draft());
        assert!(r.to_table().starts_with("DRAFT"));
    }

    #[test]
    fn json_round_trip() {
        let mut p = renewal();
        p.annotations.signoff = Some(Signoff {
            name: "R. Lee".into(),
            date: "2026-04-01".into(),
        });
        let r = adr(&p);
        assert_eq!(AdrRecord::from_json(&r.to_json()).unwrap(), r);
        assert!(r.to_table().starts_with("Signed off"));
    }

    #[test]
    fn spine_row_present_for_none() {
        let r = adr(&billing());
        assert_eq!(r.row(AdrStep::Spine).pattern, "None");
        assert_eq!(r.contrast_row().spine, "none");
    }

    #[test]
    fn narrative_override_and_malformed_record() {
        let mut p = billing();
        p.annotations
            .predicate_text
            .insert(AdrStep::Sequence, "screen is the console".into());
        let mut r = adr(&p);
        assert_eq!(
            r.row(AdrStep::Sequence).predicate_fired,
            "screen is the console"
        );
        r.rows.pop();
        assert!(AdrRecord::from_json(&r.to_json()).is_err());
    }

    #[test]
    fn contrast_table_lists_each_workload() {
        let t = contrast_table(&[adr(&renewal()), adr(&billing()), adr(&lead_warming())]);
        assert_eq!(t.lines().count(), 5);
        assert!(t.contains("Lead Warming"));
    }
}
