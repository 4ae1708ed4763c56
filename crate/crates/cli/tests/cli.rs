use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn core() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn gpudissect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpudissect")).args(args).env_remove("GPUDISSECT_BRIDGE").output().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_artifacts_and_report_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("chase");
    let cfg = core().join("examples/pointer_chase.toml");
    let o = gpudissect(&["run", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["rows"], 70);
    for f in ["results.csv", "results.json", "analysis.json", "plot.dat", "plot.gp"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let o = gpudissect(&["report", s(&out), "--kind", "table"]);
    assert!(o.status.success());
    let table = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(table.starts_with("device"));

    let o = gpudissect(&["analyze", s(&out.join("results.json")), "--kind", "hierarchy"]);
    assert!(o.status.success());
    let a = json(&o);
    assert_eq!(a["series"]["GB203"]["levels"].as_array().unwrap().len(), 3);
}

#[test]
fn latency_report_pairs_true_and_completion() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("lat");
    let o = gpudissect(&["run", s(&core().join("examples/latency.toml")), "--out", s(&out)]);
    assert!(o.status.success());
    let o = gpudissect(&["report", s(&out), "--kind", "table"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("latency.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "device,workload,true_latency,completion_latency");
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn invalid_config_exits_nonzero_with_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "family = \"PureInt32Mad\"\n\n[axes]\n\n[backend]\nkind = \"replay\"\n\n[output]\ndir = \"o\"\n",
    )
    .unwrap();
    let o = gpudissect(&["run", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert!(!o.status.success());
    let v = json(&o);
    assert_eq!(v["error"], "ConfigInvalid");
    assert_eq!(v["field"], "axes");
    assert!(tmp.path().join("o/error.json").is_file());
}

#[test]
fn missing_results_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpudissect(&["report", s(tmp.path()), "--kind", "plot-data"]);
    assert!(!o.status.success());
    assert_eq!(json(&o)["error"], "ResultsUnreadable");
}

#[test]
fn gen_single_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpudissect(&["gen", "--workload", "PureFp32Fma", "--chain-len", "8", "--ilp", "2", "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let ptx = std::fs::read_to_string(tmp.path().join("fp32_c8_x2_i1_w1.ptx")).unwrap();
    assert_eq!(ptx.matches("fma.rn.f32").count(), 16);
    assert!(tmp.path().join("fp32_c8_x2_i1_w1.json").is_file());
}

#[test]
fn gen_from_config_writes_every_point() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpudissect(&["gen", "--config", s(&core().join("examples/mma_power.toml")), "--out", s(tmp.path())]);
    assert!(o.status.success());
    assert_eq!(json(&o)["kernels"].as_array().unwrap().len(), 5);
}

#[test]
fn gen_rejects_oversized_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpudissect(&["gen", "--workload", "PureFp64Fma", "--ilp", "128", "--out", s(tmp.path())]);
    assert!(!o.status.success());
}

#[test]
fn verify_sass_listing() {
    let sass = core().join("fixtures/sass");
    let o = gpudissect(&[
        "verify-sass",
        "--listing",
        s(&sass.join("int32_c4_x1_i1_w1.sass")),
        "--workload",
        "PureInt32Mad",
        "--chain-len",
        "4",
    ]);
    assert!(o.status.success());
    assert_eq!(json(&o)["chain"]["found"], 4);

    let o = gpudissect(&[
        "verify-sass",
        "--listing",
        s(&sass.join("int32_c4_x1_i1_w1.sass")),
        "--workload",
        "PureInt32Mad",
        "--chain-len",
        "5",
    ]);
    assert!(!o.status.success());

    let o = gpudissect(&[
        "verify-sass",
        "--listing",
        s(&sass.join("sm120a_mma_e4m3.sass")),
        "--workload",
        "MmaSync",
        "--mma",
        "e4m3",
    ]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["arch"], "sm_120a");
    assert_eq!(v["mma"]["consistent"], true);
}

#[test]
fn probe_and_bandwidth_on_fixture() {
    let fx = core().join("fixtures/gh100.json");
    let o = gpudissect(&["probe", "--fixture", s(&fx)]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["device"]["chip"], "GH100");
    assert_eq!(v["clock_overhead_cycles"], 2);
    assert_eq!(v["shared_limit_bytes"], 232448);

    let o = gpudissect(&["bandwidth", "--fixture", s(&fx), "--direction", "read", "--bytes", "1073741824"]);
    assert!(o.status.success());
    assert!(json(&o)["gb_per_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn gpu_backend_without_bridge_fails_cleanly() {
    let o = gpudissect(&["probe", "--backend", "gpu", "--bridge", "/nonexistent/bridge"]);
    assert!(!o.status.success());
    assert_eq!(json(&o)["error"], "Backend");
}
