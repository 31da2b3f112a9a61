#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn mefuse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mefuse"))
}

/// Runs `mefuse` in `dir` and returns the output, panicking with stderr
/// when the exit code differs from `expect`.
pub fn run_in(dir: &Path, args: &[&str], envs: &[(&str, &str)], expect: i32) -> Output {
    let mut cmd = mefuse();
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("mefuse runs");
    assert_eq!(
        out.status.code(),
        Some(expect),
        "mefuse {args:?}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const SIM_CONFIG: &str = r#"{"seed": 3}"#;

pub const RUN_CONFIG: &str = r#"{
  "schema": "data/schema.json",
  "gold": {"path": "data/gold.csv", "outcome": "education", "weight": "weight"},
  "error_prone": {"path": "data/error_prone.csv", "outcome": "education", "weight": "weight", "extras": ["salary"]},
  "posterior": "post/posterior.json",
  "model": {"preset": "model1"},
  "gibbs": {"iterations": 1000, "imputations": 5},
  "seed": 11,
  "estimands": [
    {"name": "phd_total", "kind": "domain_total", "domain": {"imputed": ["PhD"]}},
    {"name": "ba_error", "kind": "error_rate", "domain": {"imputed": ["BA"]}},
    {"name": "salary_ma", "kind": "domain_mean", "numeric_field": "salary", "domain": {"imputed": ["MA"]}}
  ],
  "runs": [{"label": "model1", "dir": "imp1"}, {"label": "cia", "dir": "impc"}],
  "coverage": true
}"#;

/// simulate, estimate-gold, two imputation runs and analyze, all under `dir`.
pub fn run_pipeline(dir: &Path, envs: &[(&str, &str)]) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("sim.json"), SIM_CONFIG).unwrap();
    std::fs::write(dir.join("run.json"), RUN_CONFIG).unwrap();
    run_in(dir, &["simulate", "-c", "sim.json", "-o", "data"], envs, 0);
    run_in(dir, &["estimate-gold", "-c", "run.json", "-o", "post"], envs, 0);
    run_in(dir, &["impute", "-c", "run.json", "-o", "imp1"], envs, 0);
    run_in(dir, &["impute", "-c", "run.json", "--preset", "cia", "-o", "impc"], envs, 0);
    run_in(dir, &["analyze", "-c", "run.json", "-o", "analysis"], envs, 0);
}

/// Every file under `dir`, keyed by its relative path.
pub fn collect_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
