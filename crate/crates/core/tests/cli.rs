use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcsim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

#[test]
fn reproduce_passes_for_every_figure() {
    for fig in mcsim::sim::golden::FIGURES {
        let o = mcsim(&["reproduce", fig]);
        assert!(o.status.success(), "{fig}: {}", stdout(&o));
        assert!(stdout(&o).ends_with(&format!("{fig}: pass\n")));
    }
}

#[test]
fn reproduce_rejects_unknown_figure() {
    let o = mcsim(&["reproduce", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unknown figure `nope`"), "{err}");
    assert!(err.contains("budget-ex-a"), "{err}");
}

#[test]
fn reproduce_write_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.csv");
    let o = mcsim(&["reproduce", "budget-ex-a", "--write", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap(), mcsim::sim::golden::golden("budget-ex-a").unwrap());
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let summary = dir.path().join("s.csv");
    let o = mcsim(&[
        "run",
        &scenario("fig3a.json"),
        "--trace",
        trace.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).is_empty());
    let t = fs::read_to_string(&trace).unwrap();
    assert!(t.lines().count() > 1);
    let s = fs::read_to_string(&summary).unwrap();
    assert!(s.contains("p1") && s.contains("p3"), "{s}");

    let o = mcsim(&["run", &scenario("fig3a.json")]);
    assert_eq!(stdout(&o), s);
}

#[test]
fn gen_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcsim(&["gen", "--n", "3", "--u", "0.6", "--sets", "2", "--seed", "9", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    for i in 0..2 {
        let f = dir.path().join(format!("set-{i:03}.json"));
        let o = mcsim(&["analyze", f.to_str().unwrap()]);
        assert!(o.status.success());
        let text = stdout(&o);
        assert!(text.starts_with("tasks,3\n"), "{text}");
        assert!(text.contains(",0.6000\n"), "{text}");
        assert_eq!(text.lines().filter(|l| l.starts_with("response,")).count(), 3);
    }
    let a = stdout(&mcsim(&["gen", "--n", "3", "--u", "0.6", "--seed", "9"]));
    let b = stdout(&mcsim(&["gen", "--n", "3", "--u", "0.6", "--seed", "9"]));
    assert_eq!(a, b);
}

#[test]
fn check_invariants_on_bundled_scenarios() {
    for name in ["fig3a.json", "passive-server.json", "rollback.json", "table1-handler.json"] {
        let o = mcsim(&["check-invariants", &scenario(name)]);
        assert!(o.status.success(), "{name}: {}", stdout(&o));
        assert!(stdout(&o).starts_with("ok: invariants held"));
    }
}

#[test]
fn malformed_scenario_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.json");
    fs::write(&f, "{\n  \"duration\": 10,\n  \"threads\": [ }\n").unwrap();
    let o = mcsim(&["run", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_file_is_an_error() {
    let o = mcsim(&["run", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
}
