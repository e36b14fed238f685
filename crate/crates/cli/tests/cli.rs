use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_qsol");

fn qsol(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("qsol runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn catalog_lists_presets() {
    let o = qsol(&["catalog"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["CP1", "CP2", "dP8"] {
        assert!(text.contains(name), "{name} missing from catalog");
    }
}

#[test]
fn print_defaults_lists_every_key() {
    let o = qsol(&["--print-defaults"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in [
        "manifold",
        "flow.tol",
        "spectrum.count",
        "verify.lie_weight_scale",
    ] {
        assert!(text.contains(key), "{key} missing");
    }
}

#[test]
fn verify_passes_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = qsol(&[
        "verify",
        "--manifold",
        "CP1",
        "--p",
        "2,3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let verdict: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(verdict["pass"], true);
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["p"], "2,3");
    let files: Vec<&str> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap())
        .collect();
    assert!(files.contains(&"verify.csv") && files.contains(&"verify.json"));
}

#[test]
fn wrong_weight_scale_fails_tuynman() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = qsol(&[
        "verify",
        "--manifold",
        "CP1",
        "--p",
        "3",
        "--verify.lie_weight_scale",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let verdict: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(verdict["pass"], false);
    let failing: Vec<&str> = verdict["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .map(|c| c["check"].as_str().unwrap())
        .collect();
    assert_eq!(failing, ["tuynman"]);
    assert_eq!(manifest(&out)["status"], "checks-failed");
}

#[test]
fn empty_level_range_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsol(&["xi", "--p", "9..4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty range"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_suggests_the_nearest() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    std::fs::write(&file, "# levels\np = 2\nflow.tl = 1e-6\n").unwrap();
    let o = qsol(&["balance", "--config", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("flow.tol") && err.contains("line 3"), "{err}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let file = dir.path().join("run.conf");
    std::fs::write(
        &file,
        format!("manifold = CP2\np = 1..3\nout = {}\n", out.display()),
    )
    .unwrap();
    let o = qsol(&[
        "xi",
        "--config",
        file.to_str().unwrap(),
        "--p",
        "2",
        "--tol",
        "1e-11",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["config"]["manifold"], "CP2");
    assert_eq!(m["config"]["p"], "2");
    assert_eq!(m["config"]["solver.tol"], "1e-11");
}

#[test]
fn conflicting_mode_is_a_usage_error() {
    let o = qsol(&["xi", "--mode", "verify"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ambiguous_tol_is_a_usage_error() {
    let o = qsol(&["spectrum", "--tol", "1e-6"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_is_idempotent_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = qsol(&["xi", "--manifold", "dP8", "--p", "2..6", "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = qsol(&["report", "--out", out_s]);
    assert!(first.status.success(), "{}", stderr(&first));
    let json = std::fs::read(out.join("report.json")).unwrap();
    let csv = std::fs::read(out.join("report.csv")).unwrap();
    let second = qsol(&["report", "--out", out_s]);
    assert!(second.status.success());
    assert_eq!(std::fs::read(out.join("report.json")).unwrap(), json);
    assert_eq!(std::fs::read(out.join("report.csv")).unwrap(), csv);

    let report: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert!(report["columns"].as_object().is_some_and(|c| !c.is_empty()));

    let xi = out.join("xi.csv");
    let mut bytes = std::fs::read(&xi).unwrap();
    bytes.extend_from_slice(b"# edited\n");
    std::fs::write(&xi, bytes).unwrap();
    let o = qsol(&["report", "--out", out_s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("xi.csv"), "{}", stderr(&o));
}

#[test]
fn balance_writes_summary_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = qsol(&[
        "balance",
        "--manifold",
        "CP1",
        "--p",
        "3,5",
        "--flow.init",
        "uniform",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for file in [
        "residuals.csv",
        "weights_final.csv",
        "potential_samples.csv",
        "balance_summary.csv",
    ] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let summary = std::fs::read_to_string(out.join("balance_summary.csv")).unwrap();
    assert!(summary
        .lines()
        .next()
        .unwrap()
        .starts_with("p,converged,iterations"));
}

#[test]
fn invalid_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["xi", "--p", "2", "--out", dir.path().to_str().unwrap()])
        .env("QSOL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
