use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn swlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swlab")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .map(|it| it.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_command_exits_1() {
    assert_eq!(code(&swlab(&["frobnicate"])), 1);
    assert_eq!(code(&swlab(&[])), 1);
    assert_eq!(code(&swlab(&["--help"])), 0);
}

#[test]
fn rejected_parameters_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    let r = swlab(&["solve", "--n", "2", "--out", o]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("n = 2 excluded by Theorem hypotheses"));
    let r = swlab(&["solve", "--kappa", "0.25", "--out", o]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("κ must lie in (−1/2, 0)"));
    assert!(!out.exists());
}

#[test]
fn config_file_and_unknown_key() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.cfg");
    let out = tmp.path().join("o");
    fs::write(&good, format!("# small run\nn = 3\nkappa = -0.4\nT = 0.25\nn_r = 48\nout = {}\n", out.display())).unwrap();
    let r = swlab(&["solve", "--config", good.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let m = manifest(&out);
    assert_eq!(m["status"], "passed");
    assert!(m["config"].as_array().unwrap().iter().any(|l| l == "n = 3"));

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "n = 3\ncolour = blue\n").unwrap();
    assert_eq!(code(&swlab(&["solve", "--config", bad.to_str().unwrap()])), 1);
}

#[test]
fn solve_writes_versioned_tables_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o");
    let r = swlab(&["solve", "--n", "3", "--kappa", "-0.25", "--T", "0.5", "--nr", "200", "--equation", "free", "--out", o.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(
        listing(&o),
        ["energy.csv", "manifest.json", "trace-l0.csv", "trace-l1.csv", "trace-l2.csv", "trace-l3.csv"]
    );
    let energy = fs::read_to_string(o.join("energy.csv")).unwrap();
    let mut lines = energy.lines();
    assert_eq!(lines.next(), Some("# swlab energy v1"));
    assert_eq!(lines.next(), Some("t,e1,e2,e_conserved"));
    let trace = fs::read_to_string(o.join("trace-l1.csv")).unwrap();
    assert!(trace.starts_with("# swlab trace-l1 v1\nt,neumann,dirichlet\n"));
    let m = manifest(&o);
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(files.len(), 5);
    assert!(m["checks"].as_array().unwrap().iter().any(|c| c["name"] == "energy-drift" && c["passed"] == true));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |o: &Path| {
        vec![
            "verify-carleman".to_string(), "--n".into(), "3".into(), "--kappa".into(), "-0.25".into(),
            "--nr".into(), "64".into(), "--nt".into(), "33".into(), "--lambda-grid".into(), "10,20,40".into(),
            "--seed".into(), "7".into(), "--out".into(), o.display().to_string(),
        ]
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let r = Command::new(env!("CARGO_BIN_EXE_swlab")).args(args(dir)).env("SWL_THREADS", "2").output().unwrap();
        assert!(code(&r) == 0 || code(&r) == 2, "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["sweep.csv", "sweep.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn divergent_sweep_exits_2_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o");
    let r = swlab(&[
        "sweep", "--n", "3", "--kappa", "-0.25", "--nr", "64", "--nt", "33", "--lambda-grid", "10,20",
        "--corpus", "power:-0.25", "--out", o.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);
    let csv = fs::read_to_string(o.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.contains("divergent")), "{csv}");
    assert_eq!(manifest(&o)["status"], "check-failed");
}

#[test]
fn no_staging_left_behind() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o");
    swlab(&["solve", "--n", "1", "--T", "0.2", "--nr", "32", "--out", o.to_str().unwrap()]);
    assert!(listing(&o).iter().all(|f| !f.starts_with('.')));
}
