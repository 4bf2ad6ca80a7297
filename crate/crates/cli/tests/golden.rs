//! Every config under `configs/acceptance` runs and passes its stored checks.

use std::fs;
use std::path::PathBuf;

use met_cli::{evaluate_checks, run_config, ExperimentConfig};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance")
}

#[test]
fn golden_configs_pass_their_checks() {
    let mut paths: Vec<PathBuf> = fs::read_dir(golden_dir())
        .expect("golden config directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    // one config per numbered criterion 1..=11 at least
    for n in 1..=11 {
        let prefix = format!("{n:02}");
        assert!(
            paths.iter().any(|p| p.file_name().unwrap().to_string_lossy().starts_with(&prefix)),
            "no golden config for criterion {n}"
        );
    }
    let mut failures = Vec::new();
    for path in &paths {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let cfg = ExperimentConfig::parse(&fs::read_to_string(path).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!cfg.checks.is_empty(), "{name} has no checks");
        let table = run_config(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
        for o in evaluate_checks(&table) {
            println!("{} {name} {}: worst {:?} over {} rows", if o.pass { "PASS" } else { "FAIL" }, o.check.quantity, o.worst, o.rows);
            if !o.pass {
                failures.push(format!("{name}: {} (worst {:?})", o.check.quantity, o.worst));
            }
        }
    }
    assert!(failures.is_empty(), "failed checks: {failures:#?}");
}

#[test]
fn golden_configs_round_trip() {
    for entry in fs::read_dir(golden_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::parse(&fs::read_to_string(&path).unwrap()).unwrap();
        let canonical = cfg.to_canonical();
        let back = ExperimentConfig::parse(&canonical).unwrap();
        assert_eq!(cfg, back, "{}", path.display());
        assert_eq!(canonical, back.to_canonical());
    }
}
