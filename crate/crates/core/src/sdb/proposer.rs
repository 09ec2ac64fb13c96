//! Seeded stand-in for the stochastic proposer.
//!
//! Every draw comes from a ChaCha stream keyed by a SHA-256 digest of the
//! draw's purpose and its inputs, so the output never depends on call order.
//!
//! Three knobs shape the output distribution:
//!
//! * the bias table picks an output distribution from the input's class;
//! * `divergence_rate_delta` is the chance that a given input's preferred
//!   output moves when the model version is bumped by one;
//! * `sigma` is the chance that a single call, keyed by its seed, departs
//!   from the preferred output.
//!
//! With `sigma == 0` the output is a pure function of `(input, model_version)`.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelVersion, Proposal, ProposerMeta, SdbError};
use crate::value::{canonical_bytes, Record, Scalar};

/// Number of options in the fallback distribution used when the bias table
/// has no entry for an input class.
const FALLBACK_OPTIONS: i64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedOption {
    pub weight: u32,
    pub content: Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDistribution {
    pub options: Vec<WeightedOption>,
}

impl OutputDistribution {
    pub fn new(options: Vec<WeightedOption>) -> Result<Self, SdbError> {
        let d = Self { options };
        d.validate()?;
        Ok(d)
    }

    /// Equal-weight distribution over the given contents.
    pub fn uniform(contents: impl IntoIterator<Item = Record>) -> Result<Self, SdbError> {
        Self::new(
            contents
                .into_iter()
                .map(|content| WeightedOption { weight: 1, content })
                .collect(),
        )
    }

    fn validate(&self) -> Result<(), SdbError> {
        if self.options.is_empty() {
            return Err(SdbError::InvalidConfig(
                "distribution has no options".into(),
            ));
        }
        for o in &self.options {
            if o.weight == 0 {
                return Err(SdbError::InvalidConfig(
                    "option weight must be positive".into(),
                ));
            }
            if o.content.is_empty() {
                return Err(SdbError::InvalidConfig(
                    "option content must be non-empty".into(),
                ));
            }
        }
        Ok(())
    }

    fn fallback() -> Self {
        Self::uniform((0..FALLBACK_OPTIONS).map(|i| crate::record! { "choice" => i }))
            .expect("fallback is valid")
    }

    fn sample(&self, rng: &mut ChaCha8Rng, exclude: Option<usize>) -> usize {
        let total: u64 = self
            .options
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(_, o)| u64::from(o.weight))
            .sum();
        if total == 0 {
            // Single option and it is excluded: nothing else to move to.
            return exclude.unwrap_or(0);
        }
        let mut pick = rng.next_u64() % total;
        for (i, o) in self.options.iter().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            let w = u64::from(o.weight);
            if pick < w {
                return i;
            }
            pick -= w;
        }
        unreachable!("pick is below the total weight")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerConfig {
    pub sigma: f64,
    pub divergence_rate_delta: f64,
    #[serde(default)]
    pub bias_table: BTreeMap<String, OutputDistribution>,
    /// Input field whose text value selects the bias-table entry.
    #[serde(default = "default_class_field")]
    pub class_field: String,
}

fn default_class_field() -> String {
    "class".to_owned()
}

impl ProposerConfig {
    pub fn new(sigma: f64, divergence_rate_delta: f64) -> Result<Self, SdbError> {
        let cfg = Self {
            sigma,
            divergence_rate_delta,
            bias_table: BTreeMap::new(),
            class_field: default_class_field(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_class(mut self, class: impl Into<String>, dist: OutputDistribution) -> Self {
        self.bias_table.insert(class.into(), dist);
        self
    }

    pub fn validate(&self) -> Result<(), SdbError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SdbError::InvalidConfig(format!(
                "sigma {} must be >= 0",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.divergence_rate_delta) {
            return Err(SdbError::InvalidConfig(format!(
                "divergence_rate_delta {} must lie in [0, 1]",
                self.divergence_rate_delta
            )));
        }
        self.bias_table
            .values()
            .try_for_each(OutputDistribution::validate)
    }

    fn distribution_for(&self, input: &Record) -> std::borrow::Cow<'_, OutputDistribution> {
        let class = input.get(&self.class_field).and_then(Scalar::as_text);
        class
            .and_then(|c| self.bias_table.get(c))
            .or_else(|| self.bias_table.get("*"))
            .map(std::borrow::Cow::Borrowed)
            .unwrap_or_else(|| std::borrow::Cow::Owned(OutputDistribution::fallback()))
    }
}

/// ChaCha stream keyed by `(purpose, input, extra...)`.
pub(crate) fn keyed_rng(purpose: &str, input: &[u8], extra: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update((input.len() as u64).to_le_bytes());
    h.update(input);
    for e in extra {
        h.update(e.to_le_bytes());
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub(crate) fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Index of the output the model "prefers" for this input under `version`.
fn preferred_index(
    dist: &OutputDistribution,
    input: &[u8],
    delta: f64,
    version: ModelVersion,
) -> usize {
    let mut idx = dist.sample(&mut keyed_rng("base", input, &[]), None);
    for v in 2..=version.0 {
        let moved = unit(&mut keyed_rng("diverge", input, &[u64::from(v)])) < delta;
        if moved {
            idx = dist.sample(&mut keyed_rng("epoch", input, &[u64::from(v)]), Some(idx));
        }
    }
    idx
}

fn request_id_for(input: &Record, bytes: &[u8]) -> String {
    match input.get("request_id") {
        Some(Scalar::Text(id)) => id.clone(),
        Some(other) => other.to_string(),
        None => {
            let digest = Sha256::digest(bytes);
            format!(
                "req-{:02x}{:02x}{:02x}{:02x}{:02x}{:02x}",
                digest[0], digest[1], digest[2], digest[3], digest[4], digest[5]
            )
        }
    }
}

/// Simulated proposal for `input`. Deterministic in all four arguments.
pub fn propose(
    input: &Record,
    cfg: &ProposerConfig,
    seed: u64,
    model_version: ModelVersion,
) -> Proposal {
    let bytes = canonical_bytes(input);
    let dist = cfg.distribution_for(input);
    let mut idx = preferred_index(&dist, &bytes, cfg.divergence_rate_delta, model_version);
    let n = dist.options.len();
    if n > 1 && unit(&mut keyed_rng("noise", &bytes, &[seed])) < cfg.sigma.min(1.0) {
        // Shift is keyed by (input, seed) only, so a version bump changes the
        // noisy output exactly when it changes the preferred one.
        let shift = 1 + (keyed_rng("alt", &bytes, &[seed]).next_u64() % (n as u64 - 1)) as usize;
        idx = (idx + shift) % n;
    }
    Proposal {
        request_id: request_id_for(input, &bytes),
        content: dist.options[idx].content.clone(),
        proposer_meta: ProposerMeta {
            model_version,
            seed,
            temperature_sigma: cfg.sigma,
        },
    }
}

/// Re-proposal after a reject. The model reconsiders: attempt `k > 0` draws
/// afresh from the class distribution on a stream keyed by the attempt.
pub fn repropose(
    input: &Record,
    cfg: &ProposerConfig,
    seed: u64,
    model_version: ModelVersion,
    attempt: u32,
) -> Proposal {
    if attempt == 0 {
        return propose(input, cfg, seed, model_version);
    }
    let bytes = canonical_bytes(input);
    let dist = cfg.distribution_for(input);
    let mut rng = keyed_rng(
        "retry",
        &bytes,
        &[seed, u64::from(model_version.0), u64::from(attempt)],
    );
    let idx = dist.sample(&mut rng, None);
    Proposal {
        request_id: request_id_for(input, &bytes),
        content: dist.options[idx].content.clone(),
        proposer_meta: ProposerMeta {
            model_version,
            seed,
            temperature_sigma: cfg.sigma,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record;

    fn cfg(sigma: f64, delta: f64) -> ProposerConfig {
        ProposerConfig::new(sigma, delta).unwrap()
    }

    #[test]
    fn same_arguments_give_identical_bytes() {
        let input = record! { "x" => 5i64 };
        let c = cfg(0.3, 0.2);
        let a = propose(&input, &c, 11, ModelVersion(1));
        let b = propose(&input, &c, 11, ModelVersion(1));
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn zero_sigma_ignores_seed() {
        let c = cfg(0.0, 0.5);
        for i in 0..200i64 {
            let input = record! { "x" => i };
            let a = propose(&input, &c, 1, ModelVersion(3));
            let b = propose(&input, &c, 987_654, ModelVersion(3));
            assert_eq!(a.content, b.content);
        }
    }

    #[test]
    fn seed_variation_tracks_sigma() {
        let count = |sigma: f64| {
            let c = cfg(sigma, 0.0);
            (0..2000i64)
                .filter(|i| {
                    let input = record! { "x" => *i };
                    propose(&input, &c, 1, ModelVersion(1)).content
                        != propose(&input, &c, 2, ModelVersion(1)).content
                })
                .count()
        };
        let low = count(0.05);
        let high = count(0.4);
        assert!(low < high, "low={low} high={high}");
        assert!(high > 700 && high < 1700, "high={high}");
    }

    #[test]
    fn invalid_configs_are_refused() {
        assert!(ProposerConfig::new(-0.1, 0.2).is_err());
        assert!(ProposerConfig::new(0.1, 1.5).is_err());
        assert!(OutputDistribution::new(vec![]).is_err());
        assert!(OutputDistribution::uniform([Record::new()]).is_err());
    }

    #[test]
    fn bias_table_selects_by_class() {
        let only = OutputDistribution::uniform([record! { "offer" => "discount" }]).unwrap();
        let c = cfg(0.9, 0.9).with_class("high", only);
        let input = record! { "class" => "high", "id" => 4i64 };
        for seed in 0..20 {
            let p = propose(&input, &c, seed, ModelVersion(4));
            assert_eq!(p.content, record! { "offer" => "discount" });
        }
    }

    #[test]
    fn request_id_is_taken_from_input() {
        let input = record! { "request_id" => "ren-1", "x" => 1i64 };
        assert_eq!(
            propose(&input, &cfg(0.0, 0.0), 0, ModelVersion(1)).request_id,
            "ren-1"
        );
    }
}
