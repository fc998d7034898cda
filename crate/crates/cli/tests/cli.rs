use std::path::Path;
use std::process::{Command, Output};

use fracpar_cli::output::{CARLEMAN_HEADER, CONVERGENCE_HEADER, EXTENSION_HEADER, NONUNIQ_HEADER};
use fracpar_cli::{Experiment, ExperimentConfig};

fn fracpar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracpar")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_config(dir: &Path, json: &str, out: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir, json);
    let out = dir.join(out);
    let mut args = vec!["--config", cfg.as_str(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    fracpar(&args)
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const SMALL_CARLEMAN: &str = r#"{"experiment": "carleman", "betas": [5.25, 10.25], "samples": 4}"#;
const SMALL_EXTENSION: &str = r#"{"experiment": "extension", "extension_orders": [0.5], "extension_cells": 40}"#;

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let o = run_config(dir.path(), SMALL_CARLEMAN, name, &["--seed", "3"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["carleman.csv", "summary.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
}

#[test]
fn seed_changes_samples_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config(dir.path(), SMALL_CARLEMAN, "a", &["--seed", "3"]).status.code(), Some(0));
    assert_eq!(run_config(dir.path(), SMALL_CARLEMAN, "b", &["--seed", "4"]).status.code(), Some(0));
    let read = |d: &str, f: &str| std::fs::read_to_string(dir.path().join(d).join(f)).unwrap();
    assert_ne!(read("a", "carleman.csv"), read("b", "carleman.csv"));
    let hash = |d: &str| {
        let v: serde_json::Value = serde_json::from_str(&read(d, "summary.json")).unwrap();
        v["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash("a"), hash("b"));
}

#[test]
fn config_hash_ignores_output_dir() {
    let mut a = ExperimentConfig::default();
    let h = a.hash();
    a.output_dir = Some("elsewhere".into());
    assert_eq!(a.hash(), h);
    a.seed += 1;
    assert_ne!(a.hash(), h);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        r#"{"experiment": "teleport"}"#,
        r#"{"experiment": "carleman", "colour": 1}"#,
        r#"{"order": 1.5}"#,
        r#"{"betas": [5.0]}"#,
        "not json",
    ] {
        let o = run_config(dir.path(), bad, "out", &[]);
        assert_eq!(o.status.code(), Some(2), "config {bad}");
        assert!(!dir.path().join("out").exists());
    }
    assert_eq!(fracpar(&["--experiment", "teleport"]).status.code(), Some(2));
    assert_eq!(fracpar(&["--threads", "0", "--experiment", "extension"]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(fracpar(&["--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let cfg = write_config(dir.path(), SMALL_EXTENSION);
    let o = fracpar(&["--config", &cfg, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn summary_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(dir.path(), SMALL_EXTENSION, "out", &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let obj = v.as_object().unwrap();
    let mut keys: Vec<_> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["checks", "config_hash", "experiment", "version"]);
    assert_eq!(v["experiment"], "extension");
    let hash = v["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    let checks = v["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        assert!(c["name"].is_string() && c["value"].is_number() && c["tol"].is_number());
        assert_eq!(c["pass"], true);
    }
    // Atomic writes leave no temporaries behind.
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["extension.csv", "summary.json"]);
}

#[test]
fn csv_headers_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config(dir.path(), SMALL_CARLEMAN, "c", &[]).status.code(), Some(0));
    assert_eq!(run_config(dir.path(), SMALL_EXTENSION, "e", &[]).status.code(), Some(0));
    assert_eq!(
        first_line(&dir.path().join("c/carleman.csv")),
        "beta,sample_id,lhs,rhs,ratio"
    );
    assert_eq!(
        first_line(&dir.path().join("e/extension.csv")),
        "lambda_re,rho,s,trace_err"
    );
    assert_eq!(CARLEMAN_HEADER.join(","), "beta,sample_id,lhs,rhs,ratio");
    assert_eq!(EXTENSION_HEADER.join(","), "lambda_re,rho,s,trace_err");
    assert_eq!(CONVERGENCE_HEADER.join(","), "experiment,n,N_x,N_t,s,h,dt,metric,value");
    assert_eq!(
        NONUNIQ_HEADER.join(","),
        "level,cauchy_gap,coeff_gap,exterior_lift_gap,local_gap"
    );
}

#[test]
fn floats_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config(dir.path(), SMALL_CARLEMAN, "c", &[]).status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(dir.path().join("c/carleman.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let lhs: f64 = rec[2].parse().unwrap();
        let ratio: f64 = rec[4].parse().unwrap();
        assert_eq!(format!("{lhs:.16e}"), &rec[2]);
        assert!(lhs.is_finite() && ratio.is_finite() && ratio > 0.0);
        rows += 1;
    }
    assert_eq!(rows, 2 * 4);
}

#[test]
fn forward_default_has_three_refinement_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let o = fracpar(&["--experiment", "forward", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let mut rdr = csv::Reader::from_path(out.join("convergence.csv")).unwrap();
    let levels: std::collections::BTreeSet<String> = rdr.records().map(|r| r.unwrap()[1].to_string()).collect();
    assert!(levels.len() >= 3, "{levels:?}");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn experiment_names_parse_back() {
    for e in Experiment::ALL {
        assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        let json = format!(r#"{{"experiment": "{}"}}"#, e.name());
        assert_eq!(ExperimentConfig::from_json(&json).unwrap().experiment, e);
    }
}
