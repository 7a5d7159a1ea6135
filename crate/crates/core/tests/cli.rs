//! End-to-end runs of the `dos-cva` binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dos_cva::cva::CvaReport;
use dos_cva::experiment::{ExperimentConfig, MANIFEST_FILE, OUTPUT_ROOT_ENV};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run(root: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_dos-cva"))
        .arg("--config")
        .arg(smoke_config())
        .args(args)
        .env(OUTPUT_ROOT_ENV, root)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn shipped_configs_parse_and_validate() {
    for name in ["paper.toml", "smoke.toml"] {
        let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap();
        let cfg = ExperimentConfig::from_toml_with_overrides(&text, &[]).unwrap();
        cfg.validate().unwrap();
    }
    let paper = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper.toml")).unwrap();
    assert_eq!(ExperimentConfig::from_toml_with_overrides(&paper, &[]).unwrap(), ExperimentConfig::paper());
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    run(root, &["simulate"]);
    let dir = root.join("smoke");
    assert!(dir.join("paths/train.bin").is_file());
    assert!(dir.join(MANIFEST_FILE).is_file());

    let values = run(root, &["train-riskfree"]);
    let table = String::from_utf8_lossy(&values.stdout);
    assert!(table.contains("max-call") && table.contains("total"), "{table}");

    run(root, &["train-risky", "--b", "0", "--hbar", "0.1"]);
    assert!(dir.join("risky/b0_hbar0.1/policy_netted.json").is_file());

    run(root, &["exposure"]);
    for name in ["ir", "ir_netted", "pr"] {
        let csv = std::fs::read_to_string(dir.join(format!("exposure/ee_{name}.csv"))).unwrap();
        assert!(csv.starts_with("time,ee,ee_se,pfe_low,pfe_high"));
        assert_eq!(csv.lines().count(), 38, "one row per grid time plus a header");
    }

    run(root, &["cva-grid"]);
    let report = CvaReport::from_json(&std::fs::read_to_string(dir.join("cva/report.json")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 2);
    let zero = report.cells.iter().find(|c| c.hbar == 0.0).unwrap();
    assert_eq!((zero.cva.mean, zero.cva_bar.mean, zero.cva_net.mean, zero.cva_bar_net.mean), (0.0, 0.0, 0.0, 0.0));
    let cva_csv = std::fs::read_to_string(dir.join("cva/cva.csv")).unwrap();
    assert_eq!(cva_csv.lines().count(), 3);

    let printed = run(root, &["report"]);
    assert!(String::from_utf8_lossy(&printed.stdout).contains("CVAbar"));
}

#[test]
fn reruns_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for root in [a.path(), b.path()] {
        run(root, &["--set", "paths.train=1024", "--set", "paths.valuation=1024", "train-riskfree"]);
    }
    let read = |p: &Path| std::fs::read_to_string(p.join("smoke/risk-free/values.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn risky_training_requires_risk_free_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dos-cva"))
        .arg("--config")
        .arg(smoke_config())
        .args(["--output-root", tmp.path().to_str().unwrap(), "train-risky"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn invalid_overrides_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dos-cva"))
        .args(["--set", "market.volatility_per_sqrt_year=[-0.2, 0.2]", "--set", "paths.train=0", "simulate"])
        .env(OUTPUT_ROOT_ENV, tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("volatil") && err.contains("train"), "{err}");
}
