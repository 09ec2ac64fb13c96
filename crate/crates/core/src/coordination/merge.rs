use std::collections::{BTreeMap, BTreeSet};

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Record, Scalar};

/// Scalar usable as a declared merge weight: exact rationals or floats.
pub trait MergeWeight: Clone + PartialOrd + Zero + ToPrimitive {}

impl<T: Clone + PartialOrd + Zero + ToPrimitive> MergeWeight for T {}

/// Ordered conflict rules; the first rule that resolves a field wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConflictRule {
    /// Unique heaviest contender wins. Ties fall through.
    HighestWeight,
    /// Unique lightest contender wins. Ties fall through.
    LowestWeight,
    PreferAgent {
        agent: String,
    },
    /// Largest value wins (scalar order).
    MaxValue,
    MinValue,
    /// Applies `rule` only to `field`.
    ForField {
        field: String,
        rule: Box<ConflictRule>,
    },
}

impl ConflictRule {
    fn resolve<W: MergeWeight>(
        &self,
        field: &str,
        contenders: &[(&str, &Scalar)],
        weights: &BTreeMap<String, W>,
    ) -> Option<String> {
        let weight = |a: &str| weights.get(a).cloned().unwrap_or_else(W::zero);
        let unique_by = |better: &dyn Fn(&W, &W) -> bool| -> Option<String> {
            let mut best: Option<(&str, W)> = None;
            let mut tied = false;
            for (agent, _) in contenders {
                let w = weight(agent);
                match &best {
                    None => best = Some((agent, w)),
                    Some((_, bw)) if better(&w, bw) => {
                        best = Some((agent, w));
                        tied = false;
                    }
                    Some((_, bw)) if !better(bw, &w) => tied = true,
                    _ => {}
                }
            }
            if tied {
                None
            } else {
                best.map(|(a, _)| a.to_owned())
            }
        };
        match self {
            ConflictRule::HighestWeight => unique_by(&|a, b| a > b),
            ConflictRule::LowestWeight => unique_by(&|a, b| a < b),
            ConflictRule::PreferAgent { agent } => contenders
                .iter()
                .any(|(a, _)| a == agent)
                .then(|| agent.clone()),
            ConflictRule::MaxValue => contenders
                .iter()
                .max_by_key(|(_, v)| *v)
                .map(|(a, _)| (*a).to_owned()),
            ConflictRule::MinValue => contenders
                .iter()
                .min_by_key(|(_, v)| *v)
                .map(|(a, _)| (*a).to_owned()),
            ConflictRule::ForField { field: f, rule } => {
                if f == field {
                    rule.resolve(field, contenders, weights)
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedConflict {
    pub field: String,
    pub contenders: Vec<String>,
    pub winner: String,
    pub rule_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeResult {
    pub merged: Record,
    /// Fields each sub-agent ended up contributing.
    pub contributions: BTreeMap<String, BTreeSet<String>>,
    pub conflicts: Vec<ResolvedConflict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("no rule resolves field `{field}` between {contenders:?}")]
pub struct MergeConflict {
    pub field: String,
    pub contenders: Vec<(String, Scalar)>,
}

/// Deterministic merge of sub-agent outputs. Fields written by one agent, or
/// by several agents that agree, pass through; disagreements go to `rules`.
pub fn merge<W: MergeWeight>(
    outputs: &BTreeMap<String, Record>,
    weights: &BTreeMap<String, W>,
    rules: &[ConflictRule],
) -> Result<MergeResult, MergeConflict> {
    let mut by_field: BTreeMap<&str, Vec<(&str, &Scalar)>> = BTreeMap::new();
    for (agent, out) in outputs {
        for (field, value) in out {
            by_field.entry(field).or_default().push((agent, value));
        }
    }
    let mut result = MergeResult::default();
    for agent in outputs.keys() {
        result.contributions.insert(agent.clone(), BTreeSet::new());
    }
    for (field, contenders) in by_field {
        let first = contenders[0].1;
        let winner = if contenders.iter().all(|(_, v)| *v == first) {
            // Agreement: every writer contributed the value.
            for (agent, _) in &contenders {
                result
                    .contributions
                    .get_mut(*agent)
                    .expect("known agent")
                    .insert(field.to_owned());
            }
            result.merged.insert(field.to_owned(), first.clone());
            continue;
        } else {
            rules
                .iter()
                .enumerate()
                .find_map(|(i, r)| r.resolve(field, &contenders, weights).map(|w| (i, w)))
        };
        let Some((rule_index, agent)) = winner else {
            return Err(MergeConflict {
                field: field.to_owned(),
                contenders: contenders
                    .iter()
                    .map(|(a, v)| ((*a).to_owned(), (*v).clone()))
                    .collect(),
            });
        };
        let value = contenders
            .iter()
            .find(|(a, _)| *a == agent)
            .map(|(_, v)| (*v).clone())
            .expect("winner is a contender");
        result.merged.insert(field.to_owned(), value);
        result
            .contributions
            .get_mut(&agent)
            .expect("known agent")
            .insert(field.to_owned());
        result.conflicts.push(ResolvedConflict {
            field: field.to_owned(),
            contenders: contenders.iter().map(|(a, _)| (*a).to_owned()).collect(),
            winner: agent,
            rule_index,
        });
    }
    Ok(result)
}
