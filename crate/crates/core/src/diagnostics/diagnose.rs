use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::catalog::{catalog, match_signatures, SignatureMatch};
use super::DiagnosticsError;
use crate::observability::TraceRow;
use crate::sdb::ModelVersion;

pub const MIGRATION_ADVICE: &str = "Consider migrating from P3 to P5";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticConfig {
    /// Repetitions per replay; a replay passes only if all `k` pass.
    pub k: u32,
    pub model_versions_available: Vec<ModelVersion>,
}

impl DiagnosticConfig {
    pub fn new(
        k: u32,
        versions: impl IntoIterator<Item = ModelVersion>,
    ) -> Result<Self, DiagnosticsError> {
        if k == 0 {
            return Err(DiagnosticsError::ZeroK);
        }
        let mut v: Vec<ModelVersion> = versions.into_iter().collect();
        v.sort();
        v.dedup();
        Ok(Self {
            k,
            model_versions_available: v,
        })
    }
}

/// One failed unit of work from production, with the rows it left behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCase {
    pub request_id: String,
    pub model_version: ModelVersion,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplayOutcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Diagnosis {
    Functional { signatures: Vec<SignatureMatch> },
    ReplayDivergence { advice: String },
    Variance { new_k: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Vote {
    Functional,
    ReplayDivergence,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub pinned: ModelVersion,
    pub prior: ModelVersion,
    pub k: u32,
    pub votes: BTreeMap<String, usize>,
    pub diagnosis: Diagnosis,
}

impl DiagnosisReport {
    pub fn summary(&self) -> String {
        let head = format!(
            "pinned {} vs prior {} with pass^{} over {} case(s)",
            self.pinned,
            self.prior,
            self.k,
            self.votes.values().sum::<usize>()
        );
        let verdict = match &self.diagnosis {
            Diagnosis::Functional { signatures } => {
                let mut ids: Vec<&str> =
                    signatures.iter().map(|s| s.signature_id.as_str()).collect();
                ids.dedup();
                format!(
                    "functional failure; matched signatures: {}",
                    if ids.is_empty() {
                        "none".into()
                    } else {
                        ids.join(", ")
                    }
                )
            }
            Diagnosis::ReplayDivergence { advice } => format!("replay divergence; {advice}"),
            Diagnosis::Variance { new_k } => format!("variance; raise k to {new_k} and observe"),
        };
        format!("{head}\n{verdict}")
    }
}

/// Classifies a failure batch by replaying it on the pinned and prior model
/// versions. `replay` gets the case, the version and the repetition index.
pub fn diagnose<F>(
    batch: &[FailureCase],
    mut replay: F,
    cfg: &DiagnosticConfig,
) -> Result<DiagnosisReport, DiagnosticsError>
where
    F: FnMut(&FailureCase, ModelVersion, u32) -> ReplayOutcome,
{
    if cfg.k == 0 {
        return Err(DiagnosticsError::ZeroK);
    }
    let mut versions = cfg.model_versions_available.clone();
    versions.sort();
    versions.dedup();
    if versions.len() < 2 {
        return Err(DiagnosticsError::ReplayUnavailable(versions.len()));
    }
    let pinned = batch
        .iter()
        .map(|c| c.model_version)
        .max()
        .ok_or(DiagnosticsError::EmptyBatch)?;
    let prior = *versions
        .iter()
        .rev()
        .find(|v| **v < pinned)
        .ok_or(DiagnosticsError::NoPriorVersion(pinned))?;

    let mut pass_k = |case: &FailureCase, v: ModelVersion| {
        (0..cfg.k).all(|rep| replay(case, v, rep) == ReplayOutcome::Pass)
    };

    let mut tally: BTreeMap<Vote, usize> = BTreeMap::new();
    for case in batch {
        let vote = if pass_k(case, pinned) {
            Vote::Variance
        } else if pass_k(case, prior) {
            Vote::ReplayDivergence
        } else {
            Vote::Functional
        };
        *tally.entry(vote).or_default() += 1;
    }
    // Largest count wins; ties go to the earlier class.
    let winner = tally
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(v, _)| *v)
        .expect("non-empty batch");

    let diagnosis = match winner {
        Vote::Functional => {
            let rows: Vec<TraceRow> = batch.iter().flat_map(|c| c.trace.iter().cloned()).collect();
            Diagnosis::Functional {
                signatures: match_signatures(&rows, &catalog()),
            }
        }
        Vote::ReplayDivergence => Diagnosis::ReplayDivergence {
            advice: MIGRATION_ADVICE.to_owned(),
        },
        Vote::Variance => Diagnosis::Variance {
            new_k: cfg.k.saturating_mul(2),
        },
    };
    let votes = tally
        .into_iter()
        .map(|(v, n)| {
            (
                serde_json::to_value(v)
                    .ok()
                    .and_then(|j| j.as_str().map(str::to_owned))
                    .unwrap_or_default(),
                n,
            )
        })
        .collect();
    Ok(DiagnosisReport {
        pinned,
        prior,
        k: cfg.k,
        votes,
        diagnosis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, v: u32) -> Vec<FailureCase> {
        (0..n)
            .map(|i| FailureCase {
                request_id: format!("r{i}"),
                model_version: ModelVersion(v),
                trace: vec![],
            })
            .collect()
    }

    fn cfg() -> DiagnosticConfig {
        DiagnosticConfig::new(3, [ModelVersion(1), ModelVersion(2)]).unwrap()
    }

    #[test]
    fn one_version_is_replay_unavailable() {
        let c = DiagnosticConfig::new(3, [ModelVersion(2)]).unwrap();
        let err = diagnose(&batch(3, 2), |_, _, _| ReplayOutcome::Fail, &c).unwrap_err();
        assert_eq!(err, DiagnosticsError::ReplayUnavailable(1));
    }

    #[test]
    fn zero_k_rejected() {
        assert_eq!(
            DiagnosticConfig::new(0, [ModelVersion(1)]).unwrap_err(),
            DiagnosticsError::ZeroK
        );
    }

    #[test]
    fn three_way_classification() {
        let b = batch(5, 2);
        let f = diagnose(&b, |_, _, _| ReplayOutcome::Fail, &cfg()).unwrap();
        assert!(matches!(f.diagnosis, Diagnosis::Functional { .. }));
        let d = diagnose(
            &b,
            |_, v, _| {
                if v == ModelVersion(2) {
                    ReplayOutcome::Fail
                } else {
                    ReplayOutcome::Pass
                }
            },
            &cfg(),
        )
        .unwrap();
        assert_eq!(
            d.diagnosis,
            Diagnosis::ReplayDivergence {
                advice: MIGRATION_ADVICE.into()
            }
        );
        assert_eq!(d.prior, ModelVersion(1));
        let v = diagnose(&b, |_, _, _| ReplayOutcome::Pass, &cfg()).unwrap();
        assert_eq!(v.diagnosis, Diagnosis::Variance { new_k: 6 });
        assert!(v.summary().contains("raise k to 6"));
    }

    #[test]
    fn pass_k_needs_every_repetition() {
        // One failing repetition in three means the failure reproduced.
        let b = batch(1, 2);
        let r = diagnose(
            &b,
            |_, v, rep| {
                if v == ModelVersion(2) && rep == 2 {
                    ReplayOutcome::Fail
                } else {
                    ReplayOutcome::Pass
                }
            },
            &cfg(),
        )
        .unwrap();
        assert!(matches!(r.diagnosis, Diagnosis::ReplayDivergence { .. }));
    }

    #[test]
    fn oldest_version_has_no_prior() {
        let err = diagnose(&batch(1, 1), |_, _, _| ReplayOutcome::Fail, &cfg()).unwrap_err();
        assert_eq!(err, DiagnosticsError::NoPriorVersion(ModelVersion(1)));
    }
}
