use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ltn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltn-ctrl"))
        .args(args)
        .env_remove("LTN_SOLVER")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

#[test]
fn case_study_writes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = ltn(&["case-study", "rodent", "--td", "40", "--vertex-mode", "reduced", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["converged"], true);
    assert_eq!(summary["certificate_valid"], true);
    assert_eq!(summary["lyapunov"]["violations"], 0);
    for f in ["system.json", "dataset.json", "result.json", "trace.csv", "metrics.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let manifest = json_file(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "case-study");
    assert_eq!(manifest["config"]["t_d"], 40);
    assert_eq!(manifest["config"]["seed_data"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,x1,x2,x3,x4,u1,"));
    assert_eq!(trace.lines().count(), 2002);
}

#[test]
fn seeded_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let d = dir.path().to_str().unwrap();
        let out = ltn(&[
            "case-study", "rodent", "--td", "40", "--controller", "integral", "--vertex-mode", "reduced",
            "--disturbance", "uniform:0:0.2", "--horizon", "300", "--out", d,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["dataset.json", "trace.csv", "system.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let ma = json_file(&a.path().join("manifest.json"));
    let mb = json_file(&b.path().join("manifest.json"));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
}

#[test]
fn step_by_step_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();

    let out = ltn(&["collect", "rodent", "--td", "40", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = ltn(&["check-data", "--dataset", &p("dataset.json"), "--system", &p("system.json")]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("richness: pass"));

    let syn = dir.path().join("syn");
    let out = ltn(&[
        "synthesize", "--dataset", &p("dataset.json"), "--system-meta", "alpha=0.9728,s=0.3984",
        "--vertex-mode", "reduced", "--out", syn.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(syn.join("result.json").exists());

    let out = ltn(&[
        "closed-loop", "--system", &p("system.json"), "--result", syn.join("result.json").to_str().unwrap(),
        "--reference", "8.26,4.42,10.99,6.95", "--x0", "1,1,1,1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["converged"], true);

    let out = ltn(&["export-sdp", "--dataset", &p("dataset.json"), "--system", &p("system.json"), "--out", &p("sdp.json")]);
    assert_eq!(code(&out), 0);
    let sdp = json_file(&dir.path().join("sdp.json"));
    assert!(sdp.is_object());
}

#[test]
fn usage_and_validation_errors_exit_1() {
    assert_eq!(code(&ltn(&["case-study", "rodent", "--no-such-flag"])), 1);
    assert_eq!(code(&ltn(&["synthesize"])), 1);
    assert_eq!(code(&ltn(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = ltn(&["collect", "rodent", "--td", "6", "--out", d]);
    assert_eq!(code(&out), 0);
    let ds = dir.path().join("dataset.json");
    let out = ltn(&["check-data", "--dataset", ds.to_str().unwrap(), "--system-meta", "alpha=0.9728,s=0.3984"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let out = ltn(&["case-study", "rodent", "--td", "40", "--x0", "20,1,1,1"]);
    assert_eq!(code(&out), 1);
    let out = ltn(&["check-data", "--dataset", "/nonexistent/data.json", "--system-meta", "alpha=0.5,s=1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_solver_backend_exits_1() {
    let out = Command::new(env!("CARGO_BIN_EXE_ltn-ctrl"))
        .args(["case-study", "rodent", "--td", "40"])
        .env("LTN_SOLVER", "no-such-backend")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn arousal_reports_infeasibility_with_exit_2() {
    for controller in ["ff", "integral"] {
        let out = ltn(&["case-study", "arousal", "--controller", controller]);
        assert_eq!(code(&out), 2, "{controller}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
}
