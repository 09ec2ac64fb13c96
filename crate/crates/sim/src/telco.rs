//! Telco churn CSV ingestion and projection into renewal scenarios.
//!
//! Signals are synthesized from feature columns with a fixed table; a column
//! that is absent or blank yields no signal.
//!
//! | Column(s) | Condition | Signal | Day offset |
//! |---|---|---|---|
//! | `tenure` | below 12 months | `early_tenure` | −80 |
//! | `MonthlyCharges` | above 90 | `price_pressure` | −70 |
//! | `Contract`, `Partner`, `Dependents` | two year, yes, yes | `contract_merger` | −60 |
//! | `TechSupport`, `InternetService` | no support on an internet plan | `support_gap` | −55 |
//! | `InternetService` | DSL | `product_eol` | −47 |
//! | `PaymentMethod` | electronic check | `payment_friction` | −40 |

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdb_core::{record, Record, Scalar};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable naming the dataset path.
pub const TELCO_ENV: &str = "TELCO_CSV";

/// Signal kinds the renewal workflow knows about but the dataset cannot ground.
pub const UNSUPPORTED_SIGNALS: [&str; 2] = ["network_event", "plan_fit_shift"];

/// Logical day the contract ends; renewals open 90 days earlier at day 0.
pub const CONTRACT_END_DAY: u32 = 90;
pub const OPEN_WINDOW_DAYS: i32 = 90;

#[derive(Debug, Error)]
pub enum TelcoError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at record {line}: {msg}")]
    MalformedCsv { line: u64, msg: String },
    #[error("asked for {need} scenarios but the dataset has {have} rows")]
    InsufficientRows { have: usize, need: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    EarlyTenure,
    PricePressure,
    ContractMerger,
    SupportGap,
    ProductEol,
    PaymentFriction,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::EarlyTenure => "early_tenure",
            SignalKind::PricePressure => "price_pressure",
            SignalKind::ContractMerger => "contract_merger",
            SignalKind::SupportGap => "support_gap",
            SignalKind::ProductEol => "product_eol",
            SignalKind::PaymentFriction => "payment_friction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signal {
    /// Days relative to the contract end, in `[-90, 0]`.
    pub offset: i32,
    pub kind: SignalKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenewalScenario {
    pub renewal_id: String,
    pub customer_features: Record,
    pub churn_label: bool,
    pub contract_end: u32,
    pub signal_schedule: Vec<Signal>,
}

impl RenewalScenario {
    pub fn feature(&self, key: &str) -> Option<&Scalar> {
        self.customer_features.get(key)
    }

    pub fn text(&self, key: &str) -> &str {
        self.feature(key).and_then(Scalar::as_text).unwrap_or("")
    }

    pub fn int(&self, key: &str) -> i64 {
        self.feature(key).and_then(Scalar::as_int).unwrap_or(0)
    }

    pub fn has_signal(&self, kind: SignalKind) -> bool {
        self.signal_schedule.iter().any(|s| s.kind == kind)
    }
}

#[derive(Debug, Deserialize)]
struct TelcoRow {
    #[serde(rename = "customerID")]
    customer_id: String,
    #[serde(rename = "SeniorCitizen", default)]
    senior: Option<String>,
    #[serde(rename = "Partner", default)]
    partner: Option<String>,
    #[serde(rename = "Dependents", default)]
    dependents: Option<String>,
    #[serde(default)]
    tenure: Option<String>,
    #[serde(rename = "InternetService", default)]
    internet: Option<String>,
    #[serde(rename = "TechSupport", default)]
    tech_support: Option<String>,
    #[serde(rename = "Contract", default)]
    contract: Option<String>,
    #[serde(rename = "PaperlessBilling", default)]
    paperless: Option<String>,
    #[serde(rename = "PaymentMethod", default)]
    payment: Option<String>,
    #[serde(rename = "MonthlyCharges", default)]
    monthly: Option<String>,
    #[serde(rename = "Churn")]
    churn: String,
}

fn clean(v: &Option<String>) -> &str {
    v.as_deref().map(str::trim).unwrap_or("")
}

/// Dataset path: explicit argument, then `TELCO_CSV`, then the bundled fixture.
pub fn telco_path(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_owned();
    }
    if let Ok(p) = std::env::var(TELCO_ENV) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    fixture_path()
}

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("testdata")
        .join("telco_fixture.csv")
}

fn project(row: &TelcoRow) -> Result<RenewalScenario, String> {
    let yes = |v: &Option<String>| clean(v).eq_ignore_ascii_case("yes");
    let churn_label = match row.churn.trim() {
        c if c.eq_ignore_ascii_case("yes") => true,
        c if c.eq_ignore_ascii_case("no") => false,
        other => return Err(format!("Churn must be Yes or No, got `{other}`")),
    };
    let tenure = match clean(&row.tenure) {
        "" => None,
        t => Some(t.parse::<i64>().map_err(|e| format!("tenure `{t}`: {e}"))?),
    };
    let monthly_cents = match clean(&row.monthly) {
        "" => None,
        m => Some(
            (m.parse::<f64>()
                .map_err(|e| format!("MonthlyCharges `{m}`: {e}"))?
                * 100.0)
                .round() as i64,
        ),
    };

    let mut f = record! {
        "internet_service" => clean(&row.internet),
        "tech_support" => clean(&row.tech_support),
        "contract" => clean(&row.contract),
        "paperless_billing" => yes(&row.paperless),
        "payment_method" => clean(&row.payment),
        "partner" => yes(&row.partner),
        "dependents" => yes(&row.dependents),
        "senior" => clean(&row.senior) == "1",
    };
    if let Some(t) = tenure {
        f.insert("tenure".into(), t.into());
    }
    if let Some(m) = monthly_cents {
        f.insert("monthly_cents".into(), m.into());
    }

    let mut signals = Vec::new();
    let mut add = |offset: i32, kind| signals.push(Signal { offset, kind });
    if tenure.is_some_and(|t| t < 12) {
        add(-80, SignalKind::EarlyTenure);
    }
    if monthly_cents.is_some_and(|m| m > 9_000) {
        add(-70, SignalKind::PricePressure);
    }
    if clean(&row.contract).eq_ignore_ascii_case("two year")
        && yes(&row.partner)
        && yes(&row.dependents)
    {
        add(-60, SignalKind::ContractMerger);
    }
    let internet = clean(&row.internet);
    if clean(&row.tech_support).eq_ignore_ascii_case("no")
        && !internet.is_empty()
        && internet != "No"
    {
        add(-55, SignalKind::SupportGap);
    }
    if internet.eq_ignore_ascii_case("dsl") {
        add(-47, SignalKind::ProductEol);
    }
    if clean(&row.payment).eq_ignore_ascii_case("electronic check") {
        add(-40, SignalKind::PaymentFriction);
    }

    Ok(RenewalScenario {
        renewal_id: row.customer_id.trim().to_owned(),
        customer_features: f,
        churn_label,
        contract_end: CONTRACT_END_DAY,
        signal_schedule: signals,
    })
}

/// Parses every row of a Telco CSV.
pub fn read_telco(path: &Path) -> Result<Vec<RenewalScenario>, TelcoError> {
    let file = std::fs::File::open(path).map_err(|source| TelcoError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_telco_from(file)
}

pub fn read_telco_from(r: impl std::io::Read) -> Result<Vec<RenewalScenario>, TelcoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<TelcoRow>().enumerate() {
        let line = i as u64 + 2;
        let row = rec.map_err(|e| TelcoError::MalformedCsv {
            line,
            msg: e.to_string(),
        })?;
        out.push(project(&row).map_err(|msg| TelcoError::MalformedCsv { line, msg })?);
    }
    Ok(out)
}

/// Seeded uniform sample of `count` rows, kept in file order.
pub fn load_telco(
    path: &Path,
    count: usize,
    seed: u64,
) -> Result<Vec<RenewalScenario>, TelcoError> {
    sample(read_telco(path)?, count, seed)
}

pub fn sample(
    all: Vec<RenewalScenario>,
    count: usize,
    seed: u64,
) -> Result<Vec<RenewalScenario>, TelcoError> {
    if count > all.len() {
        return Err(TelcoError::InsufficientRows {
            have: all.len(),
            need: count,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, all.len(), count).into_vec();
    idx.sort_unstable();
    let mut all: Vec<Option<RenewalScenario>> = all.into_iter().map(Some).collect();
    Ok(idx
        .into_iter()
        .map(|i| all[i].take().expect("indices are distinct"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "customerID,gender,SeniorCitizen,Partner,Dependents,tenure,PhoneService,MultipleLines,InternetService,OnlineSecurity,OnlineBackup,DeviceProtection,TechSupport,StreamingTV,StreamingMovies,Contract,PaperlessBilling,PaymentMethod,MonthlyCharges,TotalCharges,Churn";

    fn csv(rows: &[&str]) -> String {
        std::iter::once(HEADER)
            .chain(rows.iter().copied())
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn projects_signals_from_columns() {
        let text = csv(&[
            "A-1,Male,0,Yes,Yes,5,Yes,No,DSL,No,No,No,No,No,No,Two year,Yes,Electronic check,95.5,100,Yes",
            "B-2,Female,1,No,No,40,Yes,No,No,No internet service,No internet service,No internet service,No internet service,No internet service,No internet service,One year,No,Mailed check,20.0, ,No",
        ]);
        let s = read_telco_from(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        let kinds: Vec<SignalKind> = s[0].signal_schedule.iter().map(|g| g.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SignalKind::EarlyTenure,
                SignalKind::PricePressure,
                SignalKind::ContractMerger,
                SignalKind::SupportGap,
                SignalKind::ProductEol,
                SignalKind::PaymentFriction
            ]
        );
        assert!(s[0].churn_label);
        assert_eq!(s[0].int("monthly_cents"), 9550);
        assert!(s[1].signal_schedule.is_empty());
        assert!(s[1].feature("senior").and_then(Scalar::as_bool).unwrap());
        for sc in &s {
            assert!(sc
                .signal_schedule
                .iter()
                .all(|g| (-OPEN_WINDOW_DAYS..=0).contains(&g.offset)));
        }
    }

    #[test]
    fn blank_columns_fall_back_to_no_signal() {
        let text = "customerID,Churn\nC-3,No\n";
        let s = read_telco_from(text.as_bytes()).unwrap();
        assert!(s[0].signal_schedule.is_empty());
    }

    #[test]
    fn bad_churn_is_malformed() {
        let text = csv(&["A-1,Male,0,Yes,Yes,5,Yes,No,DSL,No,No,No,No,No,No,Two year,Yes,Electronic check,95.5,100,Maybe"]);
        assert!(matches!(
            read_telco_from(text.as_bytes()),
            Err(TelcoError::MalformedCsv { line: 2, .. })
        ));
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let all = read_telco(&fixture_path()).unwrap();
        assert!(sample(all.clone(), 0, 7).unwrap().is_empty());
        let a = sample(all.clone(), 25, 7).unwrap();
        let b = sample(all.clone(), 25, 7).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample(all.clone(), all.len() + 1, 7),
            Err(TelcoError::InsufficientRows { .. })
        ));
    }
}
