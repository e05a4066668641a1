use std::fs;

use swlab::error::Error;
use swlab::experiments::{ObservabilityRecord, SuiteEntry, SweepRecord};
use swlab::report::{
    observability_table, suite_table, sweep_table, ReportWriter, RunManifest,
};

fn header(csv: &[u8]) -> Vec<String> {
    String::from_utf8(csv.to_vec()).unwrap().lines().map(String::from).collect()
}

// Golden headers: changing a column set must bump the schema version.
#[test]
fn golden_headers() {
    let suite = suite_table("identities", &[]).to_csv().unwrap();
    assert_eq!(
        header(&suite),
        [
            "# swlab identities v1",
            "n,kappa,n_r,field,check,lhs,rhs,residual,relative_residual,slack,scale,refinement_order,pass",
        ]
    );
    let sweep = sweep_table(&[]).to_csv().unwrap();
    assert_eq!(
        header(&sweep),
        [
            "# swlab sweep v1",
            "n,kappa,c,T,n_r,field,lambda,boundary,bulk_box,gradient,weighted,lambda3_coeff,extra,lhs,rhs0,log_scale,c0_hat,flag,pass",
        ]
    );
    let obs = observability_table(1, -0.25, &[]).to_csv().unwrap();
    assert_eq!(
        header(&obs),
        [
            "# swlab observability v1",
            "n,kappa,T,seed,n_r,boundary_observation,e1_0,ratio,threshold,clears_threshold,vacuous",
        ]
    );
}

#[test]
fn empty_records_give_manifest_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut w = ReportWriter::new(tmp.path()).unwrap();
    w.csv(&sweep_table(&[])).unwrap();
    w.jsonl::<SweepRecord>("sweep", &[]).unwrap();
    w.jsonl::<SuiteEntry>("identities", &[]).unwrap();
    w.jsonl::<ObservabilityRecord>("observability", &[]).unwrap();
    let written = w.finish(RunManifest::new("sweep", "n = 1\n")).unwrap();
    assert_eq!(written, [tmp.path().join("manifest.json")]);
    let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["manifest.json"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&written[0]).unwrap()).unwrap();
    assert_eq!(m["status"], "passed");
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["files"].as_array().unwrap().len(), 0);
}

#[test]
fn failing_check_marks_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let w = ReportWriter::new(tmp.path()).unwrap();
    let mut m = RunManifest::new("solve", "");
    m.check("finite", true, "");
    m.check("energy-drift", false, "drift 1e-2");
    assert!(!m.all_passed());
    w.finish(m).unwrap();
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "check-failed");
}

#[test]
fn abort_discards_staged_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut w = ReportWriter::new(tmp.path()).unwrap();
    let mut t = swlab::report::Table::new("partial", &["x"]);
    t.push(vec![swlab::report::Cell::Float(1.0)]);
    w.csv(&t).unwrap();
    let err = Error::Degenerate("signal below noise floor near r = 1".into());
    let path = w.abort(RunManifest::new("solve", ""), &err).unwrap();
    let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["manifest.json"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("noise floor"));
}
