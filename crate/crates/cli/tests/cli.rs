use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn lagsel(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagsel"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn summary(o: &Output) -> Value {
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn assert_all_pass(o: &Output) -> Value {
    let s = summary(o);
    let failed: Vec<&Value> = s["checks"].as_array().unwrap().iter().filter(|c| c["pass"] != true).collect();
    assert!(failed.is_empty(), "failed checks {failed:?}");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(s["pass"], true);
    s
}

#[test]
fn selector_suite_passes_on_pendulum_configs() {
    for name in ["pendulum_graph.cfg", "pendulum_short_flow.cfg", "pendulum_whorl.cfg"] {
        let dir = TempDir::new().unwrap();
        let o = lagsel(&["verify", "--suite", "selector"], &config(name), dir.path());
        let s = assert_all_pass(&o);
        assert_eq!(s["suite"], "selector");
        assert!(s["checks"].as_array().unwrap().len() >= 5, "{name}");
        assert!(dir.path().join("summary.jsonl").exists());
    }
}

#[test]
fn free_particle_has_zero_critical_value() {
    let dir = TempDir::new().unwrap();
    let o = lagsel(&["weakkam"], &config("free_particle.cfg"), dir.path());
    let s = assert_all_pass(&o);
    assert_eq!(s["results"]["alpha"].as_f64(), Some(0.0));
    assert!(s["results"]["aubry_points"].as_u64().unwrap() > 0);
}

#[test]
fn bad_resolution_exits_2_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[hamiltonian]\nexpr = p^2/2\ndim = 1\n\n[grids]\nbase = 100\n").unwrap();
    let o = lagsel(&["selector"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grids.base"), "{err}");
}

#[test]
fn unknown_key_and_suite_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("typo.cfg");
    std::fs::write(&cfg, "[hamiltonian]\nexpr = p^2/2\ndim = 1\nbase = 64\n").unwrap();
    let o = lagsel(&["selector"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
    let o = lagsel(&["verify", "--suite", "9.9"], &config("free_particle.cfg"), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_property_exits_1() {
    let dir = TempDir::new().unwrap();
    let o = lagsel(&["verify", "--suite", "6.3"], &config("pendulum_short_flow.cfg"), dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn summaries_are_bit_identical_across_runs() {
    for args in [&["weakkam"][..], &["verify", "--suite", "1.3"][..]] {
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        lagsel(args, &config("pendulum_graph.cfg"), a.path());
        let o = Command::new(env!("CARGO_BIN_EXE_lagsel"))
            .args(args)
            .arg("--config")
            .arg(config("pendulum_graph.cfg"))
            .arg("--out")
            .arg(b.path())
            .arg("--workers")
            .arg("1")
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        let sa = std::fs::read(a.path().join("summary.jsonl")).unwrap();
        let sb = std::fs::read(b.path().join("summary.jsonl")).unwrap();
        assert!(!sa.is_empty());
        assert_eq!(sa, sb, "{args:?}");
    }
}

#[test]
fn artifacts_round_trip_through_oracle() {
    let dir = TempDir::new().unwrap();
    let cfg = config("double_well.cfg");
    for args in [&["selector"][..], &["front"], &["weakkam"], &["invariant"]] {
        let o = lagsel(args, &cfg, dir.path());
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = lagsel(&["oracle"], &cfg, dir.path());
    let s = assert_all_pass(&o);
    let names: Vec<&str> = s["checks"].as_array().unwrap().iter().filter_map(|c| c["name"].as_str()).collect();
    for file in ["selector.txt", "lagrangian.txt", "front.txt", "weakkam.txt", "aubry.txt", "mane.txt", "invariant.txt", "summary.jsonl"] {
        assert!(names.contains(&format!("roundtrip.{file}").as_str()), "{file} not re-parsed");
    }
    assert!(dir.path().join("oracle.txt").exists());
}
