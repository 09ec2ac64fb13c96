use proptest::prelude::*;
use sdb_core::control::{
    await_approval, check_cancel, gate_check, revoke, supervise, ApprovalRequest, CancelCheck,
    CancellationToken, Crash, GateDecision, GatePolicy, GateRule, HumanResponse, KillHarness,
    Resolution, RuleKind, SupervisionOutcome, SupervisorSpec, Throttle, ThrottleCaps,
    ThrottleDecision, ThrottleScope, WorkerSchedule, KILL_LATENCY_BOUND_MS,
};
use sdb_core::{record, AuditTrail, LogicalTime, Plane, Record};

proptest! {
    #[test]
    fn restarts_are_bounded_and_backoff_is_exact(
        max in 0u32..6,
        fail_times in 0u32..9,
        base in 1u64..10_000,
        factor in 1.01f64..4.0,
        start in 0u64..1_000_000,
    ) {
        let spec = SupervisorSpec::new(max, base, factor).unwrap();
        let mut audit = AuditTrail::new();
        let r = supervise("c", |run| if run.attempt < fail_times { Err(Crash::Transient("boom".into())) } else { Ok(run.attempt) }, &spec, LogicalTime(start), &mut audit);
        prop_assert!(r.restarts.len() as u32 <= max);
        // Oracle: cumulative delays by repeated multiplication.
        let mut delay = base as f64;
        let mut expected = Vec::new();
        let mut at = start;
        for _ in 0..r.restarts.len() {
            at += delay.round() as u64;
            expected.push(LogicalTime(at));
            delay *= factor;
        }
        prop_assert_eq!(&r.restarts, &expected);
        prop_assert_eq!(audit.count(Plane::Supervisor), r.restarts.len() + usize::from(matches!(r.outcome, SupervisionOutcome::Escalated { .. })));
        if fail_times > max {
            prop_assert!(matches!(r.outcome, SupervisionOutcome::Escalated { .. }), "expected escalation");
            prop_assert_eq!(r.restarts.len() as u32, max);
        } else {
            prop_assert_eq!(r.outcome, SupervisionOutcome::Completed(fail_times));
        }
    }

    #[test]
    fn throttle_matches_a_sliding_window_oracle(
        gaps in prop::collection::vec(0u64..40_000, 1..200),
        per_minute in 1u32..8,
        per_day in 1u32..60,
    ) {
        let mut t = Throttle::new(ThrottleCaps::new(per_minute, per_day, ThrottleScope::Global).unwrap());
        let mut audit = AuditTrail::new();
        let mut admitted: Vec<u64> = Vec::new();
        let mut now = 0u64;
        let mut refusals = 0;
        for g in gaps {
            now += g * 37;
            let in_min = admitted.iter().filter(|a| now < **a + 60_000).count();
            let in_day = admitted.iter().filter(|a| now < **a + 86_400_000).count();
            let oracle = in_min < per_minute as usize && in_day < per_day as usize;
            let d = t.admit("k", "r", LogicalTime(now), &mut audit);
            prop_assert_eq!(d == ThrottleDecision::Admitted, oracle);
            if oracle {
                admitted.push(now);
            } else {
                refusals += 1;
            }
        }
        prop_assert_eq!(audit.count(Plane::Throttle), refusals);
    }

    #[test]
    fn late_or_missing_replies_always_deny(sla in 1u64..100_000, reply in prop::option::of(0u64..200_000), approve in any::<bool>()) {
        let mut req = ApprovalRequest::new("r", Record::new(), LogicalTime(1_000), sla).unwrap();
        let mut audit = AuditTrail::new();
        let human = reply.map(|d| HumanResponse { approve, at: LogicalTime(1_000 + d) });
        let res = await_approval(&mut req, human, &mut audit).unwrap();
        let in_time = reply.is_some_and(|d| d < sla);
        match (in_time, approve) {
            (true, true) => prop_assert_eq!(res, Resolution::Approved),
            (true, false) => prop_assert_eq!(res, Resolution::Denied),
            (false, _) => {
                prop_assert_eq!(res, Resolution::SlaExpiredDenied);
                prop_assert_eq!(audit.records()[0].logical_time, LogicalTime(1_000 + sla));
            }
        }
        prop_assert_eq!(audit.count(Plane::Approval), 1);
    }

    #[test]
    fn kill_halts_within_the_bound(
        propagation in 0u64..5_000,
        revoke_at in 0u64..20_000,
        workers in prop::collection::vec((0u64..5_000, 1u64..800), 1..10),
    ) {
        let tok = CancellationToken::new("k").with_propagation(propagation);
        let schedules = workers.iter().enumerate().map(|(i, (s, gap))| WorkerSchedule::every(&format!("w{i}"), LogicalTime(*s), *gap, 60)).collect();
        let mut audit = AuditTrail::new();
        let r = KillHarness::new(schedules).run(&tok, Some(LogicalTime(revoke_at)), &mut audit);
        prop_assert!(r.leaks.is_empty());
        // Oracle: a worker stops at its first call once the revoke is visible.
        let visible = revoke_at + propagation.min(KILL_LATENCY_BOUND_MS);
        for (i, (s, gap)) in workers.iter().enumerate() {
            let id = format!("w{i}");
            let calls: Vec<u64> = (0..60).map(|k| s + k * gap).collect();
            let halt = calls.iter().copied().find(|c| *c >= visible);
            let started: Vec<u64> = r.started.iter().filter(|(w, _)| *w == id).map(|(_, t)| t.0).collect();
            prop_assert_eq!(started, calls.iter().copied().filter(|c| *c < visible).collect::<Vec<_>>());
            let halted = r.halted.iter().find(|(w, _)| *w == id).map(|(_, t)| t.0);
            prop_assert_eq!(halted, halt);
            if let Some(h) = halt {
                prop_assert!(h == *s || h < visible + gap, "a running worker halts within one call gap");
            }
        }
        prop_assert_eq!(audit.count(Plane::Kill), 1);
    }
}

#[test]
fn cancel_check_observes_propagation() {
    let tok = CancellationToken::new("k").with_propagation(250);
    let mut audit = AuditTrail::new();
    assert_eq!(check_cancel(&tok, LogicalTime(10)), CancelCheck::Continue);
    revoke(&tok, LogicalTime(100), "r", &mut audit);
    assert_eq!(check_cancel(&tok, LogicalTime(349)), CancelCheck::Continue);
    assert_eq!(check_cancel(&tok, LogicalTime(350)), CancelCheck::Halt);
}

#[test]
fn gate_denies_are_audited_with_the_policy() {
    let p = GatePolicy::new(
        "p1",
        vec![GateRule::new(
            "cap",
            RuleKind::MaxInt {
                field: "d".into(),
                max: 10,
            },
        )
        .for_action("offer")],
    )
    .unwrap();
    let mut audit = AuditTrail::new();
    let ok = gate_check(
        &record! { "action" => "offer", "d" => 5i64 },
        &Record::new(),
        &p,
        "r",
        LogicalTime(1),
        &mut audit,
    );
    assert_eq!(ok, GateDecision::Allow);
    let other = gate_check(
        &record! { "action" => "other", "d" => 50i64 },
        &Record::new(),
        &p,
        "r",
        LogicalTime(2),
        &mut audit,
    );
    assert_eq!(other, GateDecision::Allow);
    let no = gate_check(
        &record! { "action" => "offer", "d" => 11i64 },
        &Record::new(),
        &p,
        "r",
        LogicalTime(3),
        &mut audit,
    );
    assert!(matches!(no, GateDecision::Deny { .. }));
    assert_eq!(audit.count(Plane::Gate), 1);
    assert_eq!(
        audit.records()[0]
            .policy_version
            .as_ref()
            .map(|v| v.as_str()),
        Some("p1")
    );
}
