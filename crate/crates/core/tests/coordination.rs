use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use sdb_core::coordination::{
    delegate, merge, scatter_gather, ConflictRule, CoordinationKind, ExternalStore, ExternalStores,
    FaultPlan, Peer, PeerPlan, PlannedWrite, SagaEventKind, SagaLog, ScriptedPeer, SeededScheduler,
    SubAgent, SubAgentCall, SubAgentRun, SubTaskContract,
};
use sdb_core::{record, LogicalTime, Record, Scalar, Weight};

fn base_stores() -> ExternalStores {
    [
        (
            "billing".to_owned(),
            ExternalStore::new().with("k0", "orig0").with("k1", "orig1"),
        ),
        ("crm".to_owned(), ExternalStore::new().with("k0", 5i64)),
    ]
    .into()
}

#[derive(Debug, Clone)]
struct PeerSpec {
    writes: Vec<(u64, bool, u8)>,
    fail_at: Option<u64>,
}

fn peer_spec() -> impl Strategy<Value = PeerSpec> {
    (
        prop::collection::vec((1u64..50, any::<bool>(), 0u8..3), 0..4),
        prop::option::weighted(0.3, 1u64..60),
    )
        .prop_map(|(writes, fail_at)| PeerSpec { writes, fail_at })
}

fn build(i: usize, s: &PeerSpec) -> Box<dyn Peer> {
    let writes: Vec<PlannedWrite> = s
        .writes
        .iter()
        .map(|(at, billing, key)| {
            let store = if *billing { "billing" } else { "crm" };
            PlannedWrite::new(*at, store, &format!("k{key}"), format!("p{i}@{at}"))
        })
        .collect();
    let id = format!("peer{i}");
    Box::new(match s.fail_at {
        Some(f) => ScriptedPeer::failing(&id, f, writes),
        None => ScriptedPeer::ok(&id, 60, writes, record! { "ok" => true }),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn require_all_aborts_restore_the_snapshot(
        specs in prop::collection::vec(peer_spec(), 1..5),
        seed in any::<u64>(),
        redeliver in prop::collection::btree_set(0u32..12, 0..4),
    ) {
        let mut peers: Vec<Box<dyn Peer>> = specs.iter().enumerate().map(|(i, s)| build(i, s)).collect();
        let contracts = vec![SubTaskContract::new("in", "out", 100); peers.len()];
        let mut stores = base_stores();
        let before = stores.clone();
        let mut saga = SagaLog::new("s");
        let faults = FaultPlan { redeliver: redeliver.clone(), ..FaultPlan::default() };
        let r = scatter_gather(&Record::new(), &mut peers, &contracts, &mut saga, &mut stores, SeededScheduler::new(seed), &faults, LogicalTime(0)).unwrap();
        let any_failed = specs.iter().any(|s| s.fail_at.is_some());
        prop_assert_eq!(r.committed, !any_failed);
        if any_failed {
            // Reverse completion order, every completed step exactly once.
            let mut rev = r.completion_order.clone();
            rev.reverse();
            prop_assert_eq!(&r.compensated, &rev);
            for (name, s) in &stores {
                prop_assert_eq!(s.data(), before[name].data());
            }
            let dups = saga.count(SagaEventKind::CompensationDuplicate);
            let expected_dups = redeliver.iter().filter(|s| r.completion_order.contains(s)).count();
            prop_assert_eq!(dups, expected_dups);
            prop_assert_eq!(saga.count(SagaEventKind::Aborted), 1);
        } else {
            prop_assert!(r.compensated.is_empty());
            prop_assert_eq!(saga.count(SagaEventKind::Committed), 1);
        }
    }

    #[test]
    fn highest_weight_picks_the_unique_heaviest(values in prop::collection::vec(0i64..4, 2..6), weights in prop::collection::vec(1i64..20, 6)) {
        let outputs: BTreeMap<String, Record> =
            values.iter().enumerate().map(|(i, v)| (format!("a{i}"), record! { "x" => *v, "agree" => 1i64 })).collect();
        let w: BTreeMap<String, Weight> = weights.iter().enumerate().map(|(i, w)| (format!("a{i}"), Weight::new(*w, 20))).collect();
        let r = merge(&outputs, &w, &[ConflictRule::HighestWeight]);
        if let Ok(m) = &r {
            prop_assert_eq!(&m.merged["agree"], &Scalar::Int(1));
        }
        let distinct: BTreeSet<i64> = values.iter().copied().collect();
        let participants: Vec<(String, Weight)> = (0..values.len()).map(|i| (format!("a{i}"), w[&format!("a{i}")])).collect();
        let max = participants.iter().map(|(_, w)| *w).max().unwrap();
        let heaviest: Vec<&String> = participants.iter().filter(|(_, w)| *w == max).map(|(a, _)| a).collect();
        match r {
            Ok(m) if distinct.len() > 1 => {
                prop_assert_eq!(heaviest.len(), 1);
                prop_assert_eq!(&m.merged["x"], &outputs[heaviest[0]]["x"]);
            }
            Ok(m) => prop_assert_eq!(m.merged["x"].as_int(), Some(values[0])),
            Err(c) => {
                prop_assert!(distinct.len() > 1 && heaviest.len() > 1);
                prop_assert_eq!(c.field, "x");
            }
        }
    }
}

#[test]
fn compensation_retries_then_fails_loudly() {
    let mut peers: Vec<Box<dyn Peer>> = vec![
        build(
            0,
            &PeerSpec {
                writes: vec![(5, true, 0)],
                fail_at: None,
            },
        ),
        build(
            1,
            &PeerSpec {
                writes: vec![],
                fail_at: Some(10),
            },
        ),
    ];
    let contracts = vec![SubTaskContract::new("in", "out", 100); 2];
    let mut stores = base_stores();
    stores
        .get_mut("billing")
        .unwrap()
        .fail_compensation("s", 0, 2);
    let mut saga = SagaLog::new("s");
    let r = scatter_gather(
        &Record::new(),
        &mut peers,
        &contracts,
        &mut saga,
        &mut stores,
        SeededScheduler::new(1),
        &FaultPlan::default(),
        LogicalTime(0),
    )
    .unwrap();
    assert_eq!(saga.count(SagaEventKind::CompensationRetry), 2);
    assert_eq!(r.compensated, vec![0]);
    assert_eq!(stores["billing"].get("k0"), Some(&Scalar::from("orig0")));

    let mut stores = base_stores();
    stores
        .get_mut("billing")
        .unwrap()
        .fail_compensation("s", 0, 5);
    let mut saga = SagaLog::new("s");
    let err = scatter_gather(
        &Record::new(),
        &mut peers,
        &contracts,
        &mut saga,
        &mut stores,
        SeededScheduler::new(1),
        &FaultPlan::default(),
        LogicalTime(0),
    );
    assert!(err.is_err());
}

struct Fixed {
    id: String,
    out: Record,
    latency: u64,
    self_retries: u32,
}

impl SubAgent for Fixed {
    fn id(&self) -> &str {
        &self.id
    }

    fn invoke(&mut self, _task: &Record, call: &mut SubAgentCall) -> SubAgentRun {
        for _ in 0..=self.self_retries {
            call.propose();
            call.advance(self.latency);
        }
        Ok(self.out.clone())
    }
}

#[test]
fn delegation_merges_by_weight_and_flags_sub_agent_retries() {
    let mut agents: Vec<Box<dyn SubAgent>> = vec![
        Box::new(Fixed {
            id: "a".into(),
            out: record! { "offer" => "x", "score" => 1i64 },
            latency: 10,
            self_retries: 0,
        }),
        Box::new(Fixed {
            id: "b".into(),
            out: record! { "offer" => "y" },
            latency: 10,
            self_retries: 2,
        }),
    ];
    let w: BTreeMap<String, Weight> = [
        ("a".to_owned(), Weight::new(1, 3)),
        ("b".to_owned(), Weight::new(2, 3)),
    ]
    .into();
    let contracts = vec![SubTaskContract::new("t", "o", 25); 2];
    let out = delegate(
        &Record::new(),
        &mut agents,
        &contracts,
        &w,
        &[ConflictRule::HighestWeight],
        LogicalTime(0),
    );
    assert!(out.sub_agent_retries >= 2);
    assert!(out
        .trace
        .iter()
        .any(|e| e.kind == CoordinationKind::RetryAfterDeadline
            || e.kind == CoordinationKind::SubAgentRetry));
    if let Ok(m) = &out.result {
        assert_eq!(m.merged["offer"], Scalar::from("y"));
    }
}

#[test]
fn peer_plans_are_replayed_by_scripted_peers() {
    let plan = PeerPlan {
        writes: vec![],
        duration: 3,
        result: Ok(Record::new()),
        fail_at: None,
    };
    let mut p = ScriptedPeer {
        id: "p".into(),
        plan: plan.clone(),
    };
    assert_eq!(p.plan(&Record::new()), plan);
}
