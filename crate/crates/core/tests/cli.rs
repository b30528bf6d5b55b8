use std::path::Path;
use std::process::{Command, Output};

fn qbin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbin"))
        .current_dir(dir)
        .env_remove("QBIN_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = qbin(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn employee_csv(dir: &Path) {
    std::fs::write(
        dir.join("emp.csv"),
        "row_id,sensitive,EId,FirstName,Dept\n\
         t1,true,E101,Adam,Defense\n\
         t2,false,E259,John,Design\n\
         t3,false,E199,Eve,Design\n\
         t4,true,E259,John,Defense\n\
         t5,true,E152,Clarke,Defense\n\
         t6,false,E254,David,Design\n\
         t7,true,E159,Lisa,Defense\n\
         t8,false,E152,Clarke,Design\n",
    )
    .unwrap();
}

#[test]
fn owner_to_cloud_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    employee_csv(d);
    ok(d, &["plan", "-i", "emp.csv", "-a", "EId", "--strategy", "base", "-o", "owner/layout.ndjson"]);
    let layout = std::fs::read_to_string(d.join("owner/layout.ndjson")).unwrap();
    assert!(layout.lines().next().unwrap().contains("Never upload it"));

    ok(d, &["upload", "-i", "emp.csv", "-a", "EId", "-l", "owner/layout.ndjson", "-s", "cloud"]);
    let cloud = std::fs::read_to_string(d.join("cloud/encrypted.ndjson")).unwrap();
    assert!(!cloud.contains("Adam") && !cloud.contains("E101"));

    let rows = ok(d, &["query", "-l", "owner/layout.ndjson", "-s", "cloud", "--value", "E259", "--view", "view.ndjson"]);
    let ids: Vec<&str> = rows.lines().map(|l| if l.contains("\"t2\"") { "t2" } else { "t4" }).collect();
    assert_eq!(ids, ["t2", "t4"]);
    assert_eq!(std::fs::read_to_string(d.join("view.ndjson")).unwrap().lines().count(), 2);
}

#[test]
fn layout_may_not_live_in_the_store() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    employee_csv(d);
    ok(d, &["plan", "-i", "emp.csv", "-a", "EId", "--strategy", "base", "-o", "cloud/layout.ndjson"]);
    let out = qbin(d, &["upload", "-i", "emp.csv", "-a", "EId", "-l", "cloud/layout.ndjson", "-s", "cloud"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("must stay with the owner"));
}

#[test]
fn workload_verifies_and_audits() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--values", "20", "--shared", "5", "-o", "data.ndjson"]);
    ok(d, &["workload", "-i", "data.ndjson", "-a", "c_custkey", "--strategy", "base", "--verify", "-o", "run"]);
    for f in ["results.ndjson", "view.ndjson", "report.json", "stats.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let graph = d.join("g.csv");
    ok(d, &["audit", "--view", "run/view.ndjson", "--graph", graph.to_str().unwrap(), "--attacks"]);
    assert_eq!(std::fs::read_to_string(&graph).unwrap().lines().count(), 1 + 5 * 2);
}

#[test]
fn naive_audit_exits_with_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    employee_csv(d);
    ok(d, &["workload", "-i", "emp.csv", "-a", "EId", "--strategy", "base", "--mechanism", "naive", "--dist", "list:E259,E101,E199", "-o", "run"]);
    let out = qbin(d, &["audit", "--view", "run/view.ndjson", "--oracle"]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("E199"));
    ok(d, &["workload", "-i", "emp.csv", "-a", "EId", "--strategy", "base", "--dist", "list:E259,E101,E199", "-o", "qb"]);
    ok(d, &["audit", "--view", "qb/view.ndjson", "--oracle"]);
}

#[test]
fn seed_env_changes_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--values", "40", "--shared", "8", "-o", "data.ndjson"]);
    let plan = |seed: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_qbin"));
        c.current_dir(d).env_remove("QBIN_SEED");
        if let Some(s) = seed {
            c.env("QBIN_SEED", s);
        }
        assert!(c.args(["plan", "-i", "data.ndjson", "-a", "c_custkey", "-o", out]).output().unwrap().status.success());
        std::fs::read_to_string(d.join(out)).unwrap()
    };
    assert_eq!(plan(None, "a"), plan(Some("0"), "b"));
    assert_ne!(plan(None, "a"), plan(Some("77"), "c"));
}

#[test]
fn model_emits_curve_and_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let csv = ok(d, &["model", "--rho", "0.1", "--gamma-range", "10:1000:3", "--alphas", "0.2,0.4", "--ns", "100"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "gamma,alpha,eta");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("10.0,0.2,"));
    let out = qbin(d, &["model", "--gamma-range", "1:2"]);
    assert!(!out.status.success());

    ok(d, &["generate", "--values", "200", "--rows", "5000", "--sensitive-mult", "uniform:1:5", "-o", "data.ndjson"]);
    ok(d, &["bench", "-i", "data.ndjson", "-a", "c_custkey", "--dist", "uniform", "--queries", "50", "-o", "b"]);
    assert!(!d.join("b/results.ndjson").exists());
    let cal: serde_json::Value = serde_json::from_str(&ok(d, &["model", "--calibrate", "b/stats.json"])).unwrap();
    assert!(cal["eta_empirical"].as_f64().unwrap() > 0.0);
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("x.csv"), "row_id,sensitive,k\nr1,true,1\n").unwrap();
    let out = qbin(d, &["ingest", "-i", "x.csv", "-a", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing searchable attribute"));
}
