use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sample_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample/config.toml")
}

fn claimaudit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claimaudit"))
        .arg("--config")
        .arg(sample_config())
        .arg("--output")
        .arg(out)
        .arg("--iterations")
        .arg("1000")
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn full_run_prints_tables_and_exits_zero() {
    let out = tempfile::tempdir().unwrap();
    let o = claimaudit(out.path(), &["run"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("E (Prompt 1)"));
    assert!(stdout.contains("MSE men (1)"));
    for f in ["report.json", "report.txt", "figure_data.csv", "settings.json", "filter_report.json"] {
        assert!(out.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn subcommands_chain_to_the_same_report() {
    let staged = tempfile::tempdir().unwrap();
    for step in ["ingest", "collect", "analyze-rq1", "analyze-rq2", "report"] {
        let o = claimaudit(staged.path(), &[step]);
        assert_eq!(o.status.code(), Some(0), "{step}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let whole = tempfile::tempdir().unwrap();
    assert_eq!(claimaudit(whole.path(), &["run"]).status.code(), Some(0));
    assert_eq!(
        std::fs::read(staged.path().join("report.json")).unwrap(),
        std::fs::read(whole.path().join("report.json")).unwrap()
    );

    let o = claimaudit(staged.path(), &["oracle", "--topic", "Gold", "--test", "rq2"]);
    assert_eq!(o.status.code(), Some(1), "budget guard should trip on 4 raters per claim");
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn out_of_order_step_is_a_validation_error() {
    let out = tempfile::tempdir().unwrap();
    let o = claimaudit(out.path(), &["report"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run `ingest` first"));
}

#[test]
fn missing_config_names_the_path() {
    let o = Command::new(env!("CARGO_BIN_EXE_claimaudit"))
        .args(["--config", "/nonexistent/claimaudit.toml", "run"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/claimaudit.toml"));
}

#[test]
fn cache_only_without_cache_is_a_provider_error() {
    let out = tempfile::tempdir().unwrap();
    let o = claimaudit(out.path(), &["--provider", "cache-only", "run"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
