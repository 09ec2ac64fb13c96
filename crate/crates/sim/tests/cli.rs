use std::path::PathBuf;
use std::process::{Command, Output};

fn sdb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn profile(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("profiles")
        .join(format!("{name}.toml"))
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn select_prints_a_contrast_table_for_several_profiles() {
    let (a, b) = (profile("port_in"), profile("lead_warming"));
    let o = sdb(&["select", "--profile", &a, "--profile", &b]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let row = |name: &str| {
        out.lines()
            .rev()
            .find(|l| l.starts_with(name))
            .unwrap()
            .to_owned()
    };
    let cells = |l: String| {
        l.split('|')
            .map(|c| c.trim().to_owned())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        cells(row("Number Port-in")),
        [
            "Number Port-in",
            "Long-Horizon",
            "P5",
            "P1 + P2",
            "P4 + P6 full"
        ]
    );
    assert_eq!(
        cells(row("Lead Warming")),
        ["Lead Warming", "Long-Horizon", "P3", "P1", "P4 + P6 light"]
    );
}

#[test]
fn select_json_round_trips() {
    let o = sdb(&[
        "select",
        "--profile",
        &profile("renewal"),
        "--json",
        "--model-version",
        "v2",
        "--date",
        "2026-01-02",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let adr = sdb_core::selector::AdrRecord::from_json(&stdout(&o)).unwrap();
    let last = adr.rows.last().unwrap();
    assert!(last.pattern.contains("2026-01-02") || last.predicate_fired.contains("2026-01-02"));
}

#[test]
fn select_rejects_a_missing_file() {
    let o = sdb(&["select", "--profile", "/nonexistent/profile.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(
        sdb(&["simulate", "--scenarios", "many"]).status.code(),
        Some(1)
    );
    assert_eq!(sdb(&["replay", "--versions", "v1"]).status.code(), Some(1));
    assert_eq!(sdb(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn offline_simulate_refuses_with_exit_two() {
    let o = sdb(&["simulate", "--scenarios", "5", "--offline"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("console"));
}

#[test]
fn replay_reports_the_divergent_fraction() {
    let o = sdb(&["replay", "--inputs", "400", "--delta", "0.2"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let f = v["diverged_fraction"].as_f64().unwrap();
    assert!((0.1..=0.3).contains(&f), "{f}");
    assert_eq!(v["self_consistent"], true);
    assert_eq!(v["class"], "replay_divergence");
}

#[test]
fn simulate_writes_artifacts_that_diagnose_reads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sdb(&["simulate", "--scenarios", "40", "--seed", "7", "--out", out]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in ["trace.jsonl", "audit.jsonl", "report.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["scenarios"], 40);

    let trace = dir.path().join("trace.jsonl");
    let trace = trace.to_str().unwrap();
    let d = sdb(&["diagnose", "--trace", trace, "--versions", "v1"]);
    assert_eq!(d.status.code(), Some(1));
    let d = sdb(&["diagnose", "--trace", trace, "--versions", "v1,v2"]);
    assert_eq!(d.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&d.stderr).contains("no prior model version"));
}

#[test]
fn diagnose_classifies_a_v2_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sdb(&[
        "simulate",
        "--scenarios",
        "100",
        "--seed",
        "7",
        "--model-version",
        "v2",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0));
    let trace = dir.path().join("trace.jsonl");
    let d = sdb(&["diagnose", "--trace", trace.to_str().unwrap()]);
    assert_eq!(
        d.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&d.stderr)
    );
    let text = stdout(&d);
    assert!(
        text.starts_with("pinned v2 vs prior v1 with pass^3"),
        "{text}"
    );
    assert!(text.contains("failure") || text.contains("divergence") || text.contains("variance"));
}

#[test]
fn inject_prints_one_line_per_class() {
    let o = sdb(&["inject", "--runs", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 3);
}
