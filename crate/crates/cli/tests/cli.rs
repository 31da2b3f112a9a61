mod common;

use std::path::Path;

use common::{collect_files, run_in};
use mefuse_cli::Manifest;

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn simulated(dir: &Path) {
    write(dir, "sim.json", common::SIM_CONFIG);
    run_in(dir, &["simulate", "-c", "sim.json", "-o", "data"], &[], 0);
}

/// Config over the simulated files with `extra` spliced into the object.
fn nscg_config(extra: &str) -> String {
    format!(
        r#"{{
  "schema": "data/schema.json",
  "gold": {{"path": "data/gold.csv", "outcome": "education", "weight": "weight"}},
  "error_prone": {{"path": "data/error_prone.csv", "outcome": "education", "weight": "weight", "extras": ["salary"]}},
  "posterior": "post/posterior.json",
  "gibbs": {{"iterations": 300, "imputations": 3}},
  "seed": 5{extra}
}}"#
    )
}

/// No covariates and three outcome levels, all reportable.
fn tiny(dir: &Path) {
    let mut gold = String::from("y,w\n");
    for (i, y) in ["a", "b", "c"].iter().cycle().take(30).enumerate() {
        gold.push_str(&format!("{y},{}\n", 1.0 + (i % 4) as f64));
    }
    let mut ep = String::from("z,w\n");
    for z in ["a", "a", "b", "c"].iter().cycle().take(40) {
        ep.push_str(&format!("{z},2\n"));
    }
    write(dir, "gold.csv", &gold);
    write(dir, "ep.csv", &ep);
    write(
        dir,
        "run.json",
        r#"{
  "schema": {"covariates": [], "true_levels": 3, "reported_levels": 3, "outcome_labels": ["a", "b", "c"]},
  "gold": {"path": "gold.csv", "outcome": "y", "weight": "w"},
  "error_prone": {"path": "ep.csv", "outcome": "z", "weight": "w"},
  "posterior": "post/posterior.json",
  "model": {"preset": "model1"},
  "gibbs": {"iterations": 200, "imputations": 2}
}"#,
    );
}

#[test]
fn estimate_gold_on_simulated_files() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    simulated(d);
    write(d, "run.json", &nscg_config(""));
    let o = run_in(d, &["estimate-gold", "-c", "run.json", "-o", "post"], &[], 0);
    assert!(stdout(&o).contains("unreportable level recovered"));
    let post: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("post/posterior.json")).unwrap()).unwrap();
    assert_eq!(post["n_cells"], 16);
    assert_eq!(post["levels"], 5);
    assert_eq!(post["cells"].as_array().unwrap().len(), 16);
    let summary = std::fs::read_to_string(d.join("post/posterior_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 17);
    let m: Manifest = mefuse_cli::read_manifest(&d.join("post")).unwrap();
    assert_eq!(m.command, "estimate-gold");
    assert!(m.inputs.contains_key("data/gold.csv") && m.inputs.contains_key("data/error_prone.csv"));
    assert!(m.outputs.contains_key("posterior.json"));
}

#[test]
fn augmentation_needs_the_error_prone_file() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    simulated(d);
    let cfg = nscg_config("").replace(
        r#"  "error_prone": {"path": "data/error_prone.csv", "outcome": "education", "weight": "weight", "extras": ["salary"]},
"#,
        "",
    );
    write(d, "run.json", &cfg);
    let o = run_in(d, &["estimate-gold", "-c", "run.json", "-o", "post"], &[], 2);
    assert!(stderr(&o).contains("supply the error-prone file"), "{}", stderr(&o));
}

#[test]
fn equal_level_counts_skip_augmentation() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    tiny(d);
    let o = run_in(d, &["-v", "estimate-gold", "-c", "run.json", "-o", "post"], &[], 0);
    assert!(stderr(&o).contains("augmentation skipped"), "{}", stderr(&o));
    assert!(!stdout(&o).contains("recovered"));
}

#[test]
fn non_symmetric_posterior_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    tiny(d);
    std::fs::create_dir_all(d.join("post")).unwrap();
    write(
        d,
        "post/posterior.json",
        r#"{"format": "mefuse-lognormal-posterior-v1", "levels": 3, "n_cells": 1,
            "cells": [{"cell": 0, "mu": [1, 1, 1], "tau": [[0.1, 0.05, 0], [0, 0.1, 0], [0, 0, 0.1]]}]}"#,
    );
    let o = run_in(d, &["impute", "-c", "run.json", "--preset", "cia", "-o", "imp"], &[], 2);
    assert!(stderr(&o).contains("covariance"), "{}", stderr(&o));
}

#[test]
fn over_parameterized_models_are_refused_unless_allowed() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    tiny(d);
    let o = run_in(d, &["check-identifiability", "-c", "run.json"], &[], 3);
    assert!(stdout(&o).contains("over-parameterized"));
    run_in(d, &["estimate-gold", "-c", "run.json", "-o", "post"], &[], 0);
    let o = run_in(d, &["impute", "-c", "run.json", "-o", "imp"], &[], 3);
    assert!(stderr(&o).contains("identifiable error+reporting:  2"), "{}", stderr(&o));
    assert!(!d.join("imp/imputations.json").exists());
    run_in(d, &["impute", "-c", "run.json", "-o", "imp", "--allow-overparameterized"], &[], 0);
    assert!(d.join("imp/imputations.json").exists());
    run_in(d, &["check-identifiability", "-c", "run.json", "--preset", "cia"], &[], 0);
}

#[test]
fn prior_files_are_recorded() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    simulated(d);
    write(d, "error_priors.csv", "group,truth,a,b\nF,BA,2,30\nF,MA,1,9\n");
    write(d, "reporting_priors.csv", "group,truth,BA,MA,Prof,PhD\nF,BA,,3,1,1\n");
    let cfg = nscg_config(
        r#",
  "model": {"preset": "model5"},
  "preset_options": {"error_priors": "error_priors.csv", "reporting_priors": "reporting_priors.csv"}"#,
    );
    write(d, "run.json", &cfg);
    run_in(d, &["estimate-gold", "-c", "run.json", "-o", "post"], &[], 0);
    let o = run_in(d, &["impute", "-c", "run.json", "-o", "imp"], &[], 0);
    assert!(stdout(&o).contains("defaulted"));
    let m = mefuse_cli::read_manifest(&d.join("imp")).unwrap();
    let digest = m.inputs.get("error_priors.csv").expect("prior digest in manifest");
    assert!(m.inputs.contains_key("reporting_priors.csv"));
    assert!(m.outputs.contains_key("imputation_003.csv") && m.outputs.contains_key("imputations.json"));
    let index: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("imp/imputations.json")).unwrap()).unwrap();
    assert_eq!(index["provenance"]["digests"]["error_priors"].as_str(), Some(digest.as_str()));
    assert_eq!(index["provenance"]["label"], "model5");
}

#[test]
fn analyze_tables() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    simulated(d);
    let estimands = r#",
  "estimands": [
    {"name": "none_total", "kind": "domain_total", "domain": {"imputed": ["None"]}},
    {"name": "female_error", "kind": "error_rate", "domain": {"covariates": {"sex": ["F"]}}}
  ]"#;
    let runs: Vec<String> = (1..=7).map(|k| format!(r#"{{"label": "model{k}", "dir": "imp{k}"}}"#)).collect();
    let cfg = nscg_config(&format!("{estimands},\n  \"runs\": [{}]", runs.join(", ")));
    write(d, "run.json", &cfg);
    run_in(d, &["estimate-gold", "-c", "run.json", "-o", "post"], &[], 0);
    for k in 1..=7 {
        let preset = format!("model{k}");
        let out = format!("imp{k}");
        run_in(d, &["impute", "-c", "run.json", "--preset", &preset, "-o", &out], &[], 0);
    }
    run_in(d, &["analyze", "-c", "run.json", "-o", "all"], &[], 0);
    let csv = std::fs::read_to_string(d.join("all/estimates.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "estimand,model,qBar,lo,hi,df,M,overlaps");
    assert_eq!(lines.iter().filter(|l| l.starts_with("none_total,")).count(), 7);
    assert_eq!(lines.iter().filter(|l| l.starts_with("female_error,")).count(), 7);

    let single = nscg_config(
        r#",
  "estimands": [{"name": "none_total", "kind": "domain_total", "domain": {"imputed": ["None"]}}],
  "runs": [{"label": "model1", "dir": "imp1"}]"#,
    );
    write(d, "one.json", &single);
    run_in(d, &["analyze", "-c", "one.json", "-o", "one"], &[], 0);
    let csv = std::fs::read_to_string(d.join("one/estimates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("none_total,model1,"));
}

#[test]
fn analyze_rejects_a_directory_without_imputations() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    std::fs::create_dir_all(d.join("empty")).unwrap();
    write(
        d,
        "run.json",
        r#"{"estimands": [{"name": "t", "kind": "domain_total", "domain": {}}], "runs": [{"label": "x", "dir": "empty"}]}"#,
    );
    let o = run_in(d, &["analyze", "-c", "run.json", "-o", "out"], &[], 2);
    assert!(stderr(&o).contains("imputations.json"));
}

#[test]
fn truth_ledger_cannot_be_loaded() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    simulated(d);
    let cfg = nscg_config("").replace("data/gold.csv", "data/truth/ledger.csv");
    write(d, "run.json", &cfg);
    let o = run_in(d, &["estimate-gold", "-c", "run.json", "-o", "post"], &[], 2);
    assert!(stderr(&o).contains("ledger"), "{}", stderr(&o));
}

#[test]
fn simulate_is_seeded() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    run_in(d, &["simulate", "-o", "a", "--seed", "8"], &[], 0);
    run_in(d, &["simulate", "-o", "b", "--seed", "8"], &[], 0);
    run_in(d, &["simulate", "-o", "c", "--seed", "9"], &[], 0);
    let (a, b, c) = (collect_files(&d.join("a")), collect_files(&d.join("b")), collect_files(&d.join("c")));
    assert_eq!(a, b);
    assert_ne!(a.get(Path::new("gold.csv")), c.get(Path::new("gold.csv")));
    assert!(a.contains_key(Path::new("truth/ledger.csv")));
}

#[test]
fn config_errors_exit_with_validation_code() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    write(d, "bad.json", r#"{"sead": 1}"#);
    run_in(d, &["simulate", "-c", "bad.json", "-o", "x"], &[], 2);
    run_in(d, &["estimate-gold", "-o", "x"], &[], 2);
    run_in(d, &["impute", "--preset", "model9", "-o", "x"], &[], 2);
    run_in(d, &["no-such-command"], &[], 2);
}
