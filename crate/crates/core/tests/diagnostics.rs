use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sdb_core::diagnostics::{
    catalog, diagnose, estimate_momentum, match_signatures, rolling_reliability, Diagnosis,
    DiagnosticConfig, DiagnosticsError, FailureCase, ReliabilitySeries, ReplayOutcome,
    MIGRATION_ADVICE,
};
use sdb_core::observability::{Module, RowKind, TraceRow};
use sdb_core::sdb::ModelVersion;
use sdb_core::LogicalTime;

fn slope_by_normal_equations(s: &[(f64, f64)]) -> f64 {
    let n = s.len() as f64;
    let (st, sy, stt, sty) = s.iter().fold((0.0, 0.0, 0.0, 0.0), |(a, b, c, d), (t, y)| {
        (a + t, b + y, c + t * t, d + t * y)
    });
    (n * sty - st * sy) / (n * stt - st * st)
}

fn synthetic(mu: f64, sigma: f64, n: usize, seed: u64) -> ReliabilitySeries<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    ReliabilitySeries::new(
        (0..n)
            .map(|i| (i as f64, 0.5 + mu * i as f64 + sigma * z.sample(&mut rng)))
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn rolling_reliability_matches_brute_force(outcomes in prop::collection::vec(any::<bool>(), 0..120), window in 1usize..30) {
        let units: Vec<(f64, bool)> = outcomes.iter().enumerate().map(|(i, ok)| (i as f64 * 1.5, *ok)).collect();
        let s = rolling_reliability(&units, window).unwrap();
        let expected: Vec<(f64, f64)> = (0..units.len())
            .filter(|i| i + 1 >= window)
            .map(|i| {
                let hits = units[i + 1 - window..=i].iter().filter(|(_, ok)| *ok).count();
                (units[i].0, hits as f64 / window as f64)
            })
            .collect();
        prop_assert_eq!(s.len(), expected.len());
        for (a, b) in s.samples().iter().zip(&expected) {
            prop_assert_eq!(a.0, b.0);
            prop_assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_matches_normal_equations(mu in -0.05f64..0.05, sigma in 0.01f64..1.0, n in 10usize..300, seed in any::<u64>()) {
        let s = synthetic(mu, sigma, n, seed);
        let e = estimate_momentum(&s).unwrap();
        let oracle = slope_by_normal_equations(s.samples());
        prop_assert!((e.mu - oracle).abs() < 1e-9 * (1.0 + oracle.abs()));
        prop_assert!(e.ci_mu.0 <= e.mu && e.mu <= e.ci_mu.1);
        prop_assert!(e.residual_mean.abs() < 1e-9);
    }

    /// Each case carries its per-repetition outcomes on the pinned and prior
    /// versions; the oracle votes with pass^k and breaks ties toward the
    /// functional class first.
    #[test]
    fn diagnose_follows_the_vote_table(
        table in prop::collection::vec((prop::collection::vec(any::<bool>(), 4), prop::collection::vec(any::<bool>(), 4)), 1..15),
        k in 1u32..5,
    ) {
        let batch: Vec<FailureCase> = (0..table.len())
            .map(|i| FailureCase { request_id: format!("c{i}"), model_version: ModelVersion(3), trace: vec![] })
            .collect();
        let cfg = DiagnosticConfig::new(k, [ModelVersion(1), ModelVersion(2), ModelVersion(3)]).unwrap();
        let r = diagnose(&batch, |case, v, rep| {
            let i: usize = case.request_id[1..].parse().unwrap();
            let row = if v == ModelVersion(3) { &table[i].0 } else { &table[i].1 };
            if row[rep as usize] { ReplayOutcome::Pass } else { ReplayOutcome::Fail }
        }, &cfg).unwrap();
        prop_assert_eq!(r.pinned, ModelVersion(3));
        prop_assert_eq!(r.prior, ModelVersion(2));
        let k = k as usize;
        let mut counts = [0usize; 3];
        for (pinned, prior) in &table {
            let idx = if pinned[..k].iter().all(|p| *p) { 2 } else if prior[..k].iter().all(|p| *p) { 1 } else { 0 };
            counts[idx] += 1;
        }
        let max = *counts.iter().max().unwrap();
        let winner = counts.iter().position(|c| *c == max).unwrap();
        match (&r.diagnosis, winner) {
            (Diagnosis::Functional { .. }, 0) => {}
            (Diagnosis::ReplayDivergence { advice }, 1) => prop_assert_eq!(advice.as_str(), MIGRATION_ADVICE),
            (Diagnosis::Variance { new_k }, 2) => prop_assert_eq!(*new_k as usize, 2 * k),
            (d, w) => return Err(TestCaseError::fail(format!("{d:?} vs oracle {w} from {counts:?}"))),
        }
        prop_assert_eq!(r.votes.values().sum::<usize>(), table.len());
    }
}

#[test]
fn momentum_interval_covers_the_true_slope() {
    let (mu, runs) = (0.01, 200);
    let covered = (0..runs)
        .filter(|seed| {
            estimate_momentum(&synthetic(mu, 0.5, 200, *seed))
                .unwrap()
                .ci_contains(mu)
        })
        .count();
    let rate = covered as f64 / runs as f64;
    // Nominal 95%; binomial sd over 200 runs is about 1.5 points.
    assert!((0.90..=0.99).contains(&rate), "coverage {rate}");
}

#[test]
fn momentum_rejects_short_and_unordered_series() {
    let short = ReliabilitySeries::new((0..5).map(|i| (i as f64, 0.5)).collect()).unwrap();
    assert!(matches!(
        estimate_momentum(&short),
        Err(DiagnosticsError::InsufficientData { have: 5, .. })
    ));
    assert_eq!(
        ReliabilitySeries::new(vec![(1.0, 0.5), (1.0, 0.6)]).unwrap_err(),
        DiagnosticsError::NonIncreasing(1)
    );
    assert_eq!(
        ReliabilitySeries::new(vec![(0.0, f64::NAN)]).unwrap_err(),
        DiagnosticsError::NonFinite(0)
    );
}

#[test]
fn momentum_is_generic_over_f32() {
    let s: ReliabilitySeries<f32> =
        ReliabilitySeries::new((0..40).map(|i| (i as f32, 0.2 + 0.01 * i as f32)).collect())
            .unwrap();
    let e = estimate_momentum(&s).unwrap();
    assert!((e.mu - 0.01).abs() < 1e-4);
}

fn case(v: u32) -> FailureCase {
    FailureCase {
        request_id: "r".into(),
        model_version: ModelVersion(v),
        trace: vec![],
    }
}

#[test]
fn diagnose_needs_two_versions_and_a_prior() {
    let one = DiagnosticConfig::new(3, [ModelVersion(2)]).unwrap();
    assert_eq!(
        diagnose(&[case(2)], |_, _, _| ReplayOutcome::Pass, &one).unwrap_err(),
        DiagnosticsError::ReplayUnavailable(1)
    );
    let two = DiagnosticConfig::new(3, [ModelVersion(1), ModelVersion(2)]).unwrap();
    assert_eq!(
        diagnose(&[case(1)], |_, _, _| ReplayOutcome::Pass, &two).unwrap_err(),
        DiagnosticsError::NoPriorVersion(ModelVersion(1))
    );
    assert_eq!(
        diagnose(&[], |_, _, _| ReplayOutcome::Pass, &two).unwrap_err(),
        DiagnosticsError::EmptyBatch
    );
    assert_eq!(
        DiagnosticConfig::new(0, [ModelVersion(1)]).unwrap_err(),
        DiagnosticsError::ZeroK
    );
}

#[test]
fn functional_diagnosis_carries_matched_signatures() {
    let rows: Vec<TraceRow> = (0..3)
        .map(|i| {
            TraceRow::new(
                "r",
                Module::Control,
                RowKind::SupervisorRestart,
                LogicalTime(i * 100),
            )
            .with("decision", "restart")
            .with("detail", format!("restart {}: disk full", i + 1))
        })
        .collect();
    let mut c = case(2);
    c.trace = rows;
    let cfg = DiagnosticConfig::new(2, [ModelVersion(1), ModelVersion(2)]).unwrap();
    let r = diagnose(&[c], |_, _, _| ReplayOutcome::Fail, &cfg).unwrap();
    let Diagnosis::Functional { signatures } = r.diagnosis else {
        panic!("expected functional")
    };
    assert!(signatures
        .iter()
        .any(|s| s.signature_id == "p4.repeated_crash"));
}

#[test]
fn catalog_ids_are_unique_and_quiet_on_empty_traces() {
    let cat = catalog();
    assert_eq!(cat.len(), 12);
    let mut ids: Vec<&str> = cat.iter().map(|s| s.signature_id).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 12);
    assert!(match_signatures(&[], &cat).is_empty());
}

#[test]
fn differing_crashes_do_not_match_repeated_crash() {
    let rows: Vec<TraceRow> = ["disk full", "timeout"]
        .iter()
        .enumerate()
        .map(|(i, why)| {
            TraceRow::new(
                "r",
                Module::Control,
                RowKind::SupervisorRestart,
                LogicalTime(i as u64),
            )
            .with("detail", format!("restart {}: {why}", i + 1))
        })
        .collect();
    assert!(match_signatures(&rows, &catalog())
        .iter()
        .all(|m| m.signature_id != "p4.repeated_crash"));
}
