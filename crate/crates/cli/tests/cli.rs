use std::path::Path;
use std::process::{Command, Output};

fn muontag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muontag")).args(args).output().expect("spawn muontag")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn failed(out: &Output) -> String {
    assert!(!out.status.success(), "expected failure, got success:\n{}", String::from_utf8_lossy(&out.stdout));
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// simulate, daq and analyze as separate invocations.
fn stages(dir: &Path, seconds: &str, seed: &str) {
    ok(&muontag(&["simulate", "--out-dir", s(dir), "--livetime-s", seconds, "--seed", seed]));
    ok(&muontag(&["daq", "--out-dir", s(dir)]));
    ok(&muontag(&["analyze", "--out-dir", s(dir)]));
}

#[test]
fn stages_chain_and_report_compares() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    stages(&a, "60", "3");
    for f in ["events.csv", "summary.json", "config.toml", "records.bin", "pulses.csv", "report.json", "sim_report.json", "manifest.json"] {
        assert!(a.join(f).exists(), "missing {f}");
    }

    let pulses = std::fs::read(a.join("pulses.csv")).unwrap();
    ok(&muontag(&["analyze", "--out-dir", s(&a)]));
    assert_eq!(pulses, std::fs::read(a.join("pulses.csv")).unwrap(), "re-analysis changed the pulse file");

    let single = ok(&muontag(&["report", s(&a.join("report.json"))]));
    assert!(single.contains("R_TB"));
    assert!(!single.contains("pull"));

    let json = tmp.path().join("cmp.json");
    let pair = ok(&muontag(&["report", s(&a.join("sim_report.json")), s(&a.join("report.json")), "--json", s(&json)]));
    assert!(pair.contains("pull"));
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert!(rows.as_array().is_some_and(|r| !r.is_empty()));
}

#[test]
fn mismatched_report_formats_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&muontag(&["simulate", "--out-dir", s(dir), "--livetime-s", "5"]));
    let report = dir.join("sim_report.json");
    let text = std::fs::read_to_string(&report).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["format"] = "muontag-report/999".into();
    let other = dir.join("other.json");
    std::fs::write(&other, serde_json::to_string(&doc).unwrap()).unwrap();
    let err = failed(&muontag(&["report", s(&report), s(&other)]));
    assert!(err.contains("incompatible schema"), "{err}");
}

#[test]
fn zero_primaries_give_empty_event_file() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&muontag(&["simulate", "--out-dir", s(tmp.path()), "--n-primaries", "0"]));
    let events = std::fs::read_to_string(tmp.path().join("events.csv")).unwrap();
    assert!(events.lines().count() <= 1, "{events}");
}

#[test]
fn invalid_geometry_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[geometry]\nlayer_gap_cm = -1.0\n").unwrap();
    let err = failed(&muontag(&["simulate", "--config", s(&cfg), "--out-dir", s(tmp.path()), "--livetime-s", "1"]));
    assert!(err.contains("error"), "{err}");
    assert!(!tmp.path().join("events.csv").exists());
}

#[test]
fn unknown_config_key_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[daq]\nsampling_rate = 1.0\n").unwrap();
    failed(&muontag(&["simulate", "--config", s(&cfg), "--out-dir", s(tmp.path())]));
}

#[test]
fn corrupt_record_file_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&muontag(&["simulate", "--out-dir", s(dir), "--livetime-s", "5"]));
    ok(&muontag(&["daq", "--out-dir", s(dir)]));
    let path = dir.join("records.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&path, bytes).unwrap();
    let err = failed(&muontag(&["analyze", "--out-dir", s(dir)]));
    assert!(err.contains("error"), "{err}");
}

#[test]
fn config_prints_parseable_defaults() {
    let text = ok(&muontag(&["config"]));
    let doc: toml::Table = text.parse().unwrap();
    for section in ["geometry", "sources", "transport", "daq", "analysis", "run"] {
        assert!(doc.contains_key(section), "missing [{section}]");
    }
}

#[test]
fn sideband_study_prints_summary() {
    let out = ok(&muontag(&["sideband", "--runs", "3", "--livetime-s", "200"]));
    assert!(out.contains("runs compatible"), "{out}");
}
