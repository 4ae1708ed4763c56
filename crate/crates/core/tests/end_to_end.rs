use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gpudissect::suite::config::OutputFormat;
use gpudissect::suite::{run_suite, AnalysisConfig, SuiteError, SuiteOverrides, SweepConfig};

fn examples() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("toml" | "json")))
        .collect();
    v.sort();
    v
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut m = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            m.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    m
}

fn declared(cfg: &SweepConfig) -> Vec<&'static str> {
    let mut v = Vec::new();
    if cfg.output.formats.contains(&OutputFormat::Csv) {
        v.push("results.csv");
    }
    if cfg.output.formats.contains(&OutputFormat::Json) {
        v.push("results.json");
    }
    if cfg.output.plot {
        v.extend(["plot.dat", "plot.gp"]);
    }
    if cfg.analysis != AnalysisConfig::None {
        v.push("analysis.json");
    }
    v
}

#[test]
fn every_example_is_deterministic() {
    let examples = examples();
    assert!(examples.len() >= 6);
    for cfg_path in examples {
        let cfg = SweepConfig::load(&cfg_path).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let mut runs = Vec::new();
        for run in ["a", "b"] {
            let out = tmp.path().join(run);
            let ov = SuiteOverrides { out: Some(out.clone()), ..SuiteOverrides::default() };
            let s = run_suite(&cfg_path, &ov).unwrap_or_else(|e| panic!("{}: {e}", cfg_path.display()));
            assert!(!s.results.rows.is_empty());
            for f in declared(&cfg) {
                assert!(out.join(f).is_file(), "{}: missing {f}", cfg_path.display());
            }
            runs.push(snapshot(&out));
        }
        assert_eq!(runs[0], runs[1], "{} is not byte-identical across runs", cfg_path.display());
    }
}

#[test]
fn seed_override_changes_noisy_results() {
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/latency.toml");
    let tmp = tempfile::tempdir().unwrap();
    let read = |seed: u64| {
        let out = tmp.path().join(seed.to_string());
        let ov = SuiteOverrides { out: Some(out.clone()), seed: Some(seed), ..SuiteOverrides::default() };
        run_suite(&cfg, &ov).unwrap();
        std::fs::read(out.join("results.json")).unwrap()
    };
    assert_ne!(read(1), read(2));
}

#[test]
fn config_round_trips_through_toml() {
    for cfg_path in examples() {
        let cfg = SweepConfig::load(&cfg_path).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = SweepConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg, "{}", cfg_path.display());
        assert_eq!(back.to_toml_string().unwrap(), text);
    }
}

#[test]
fn invalid_config_reports_field_and_writes_error_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/gb203.json");
    let text = format!(
        "family = \"PureInt32Mad\"\n\n[axes]\nilp = [0]\n\n[backend]\nkind = \"replay\"\nfixtures = [\"{}\"]\n\n[output]\ndir = \"out\"\n",
        fixture.display()
    );
    std::fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("out");
    let ov = SuiteOverrides { out: Some(out.clone()), ..SuiteOverrides::default() };
    let err = run_suite(&cfg, &ov).unwrap_err();
    let SuiteError::ConfigInvalid { field, .. } = &err else { panic!("{err:?}") };
    assert!(field.starts_with("axes"), "{field}");
    let written: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(written, err.summary());
}
