use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dhglm::report::{read_numeric_csv, read_summary_csv, COMPARISON_HEADER, CURVE_HEADER, ESS_HEADER, MARGINAL_HEADER, SUMMARY_HEADER};

fn dhglm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhglm")).args(args).env("DHGLM_WORKERS", "1").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_owned()
}

/// A small run configuration so fits finish in seconds.
fn small_config(dir: &Path, preset: &str) -> PathBuf {
    let path = dir.join("small.toml");
    let text = format!(
        r#"format = "dhglm-run/1"
preset = "{preset}"
seed = 3

[amis]
n_initial = 300
n_stages = 2
n_per_stage = 200

[mcmc]
burn_in = 200
iterations = 2000
thin = 10
"#
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn list_presets_names_every_study() {
    let o = dhglm(&["list-presets"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for id in ["poisson-sim", "negbin-sim", "gaussian-sim-scenario-1", "gaussian-sim-scenario-6", "spatial-poisson", "spatial-negbin", "sleep-rcoef", "sleep-fixed"] {
        assert!(text.lines().any(|l| l.starts_with(id)), "{id} missing from\n{text}");
    }
}

#[test]
fn simulate_writes_data_and_a_replayable_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = dhglm(&["simulate", "--preset", "poisson-sim", "--seed", "5", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("250 observations"));
    assert_eq!(header(&a.join("data.csv")), "y,x,z");
    let b = dir.path().join("b");
    let o = dhglm(&["simulate", "--recipe", a.join("recipe.toml").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
}

#[test]
fn fit_compare_and_diagnose_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = small_config(dir.path(), "gaussian-sim-scenario-2");
    let o = dhglm(&["fit", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("AMIS: ESS") && text.contains("MCMC: 200 draws"), "{text}");

    for f in ["amis_summary.csv", "mcmc_summary.csv"] {
        assert_eq!(header(&run.join(f)), SUMMARY_HEADER.join(","));
        let rows = read_summary_csv(&run.join(f)).unwrap();
        assert_eq!(rows[0].name, "beta0");
        assert_eq!(rows[0].truth, Some(1.0));
    }
    assert_eq!(header(&run.join("comparison.csv")), COMPARISON_HEADER.join(","));
    assert_eq!(read_numeric_csv(&run.join("ess_log.csv"), &ESS_HEADER).unwrap().len(), 3);
    assert_eq!(header(&run.join("marginals/amis_beta0.csv")), MARGINAL_HEADER.join(","));
    assert_eq!(header(&run.join("marginals/mcmc_tau_u.csv")), MARGINAL_HEADER.join(","));
    assert_eq!(header(&run.join("diagnostics/weights_log_tau_1.csv")), CURVE_HEADER.join(","));
    assert!(run.join("amis_summary.txt").exists() && run.join("spec.toml").exists() && run.join("data/data.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["preset"], "gaussian-sim-scenario-2");
    assert_eq!(summary["workers"], 1);
    assert_eq!(summary["amis"]["stages"].as_array().unwrap().len(), 3);

    let same = dhglm(&["compare", run.join("amis_summary.csv").to_str().unwrap(), run.join("amis_summary.csv").to_str().unwrap()]);
    assert!(same.status.success());
    assert!(stdout(&same).lines().skip(1).all(|l| l.ends_with("pass")));

    let out = dir.path().join("cmp.csv");
    let strict = dhglm(&[
        "compare",
        run.join("amis_summary.csv").to_str().unwrap(),
        run.join("mcmc_summary.csv").to_str().unwrap(),
        "--absolute",
        "0",
        "--sd-fraction",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(strict.status.code(), Some(1), "{}", stdout(&strict));
    assert_eq!(header(&out), COMPARISON_HEADER.join(","));

    let d = dhglm(&["diagnose", run.to_str().unwrap()]);
    assert!(d.status.success(), "{}", stderr(&d));
    let text = stdout(&d);
    assert!(text.contains("stage") && text.contains("weight curve"), "{text}");
    assert!(text.contains("log_tau_1"));
}

#[test]
fn failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = small_config(dir.path(), "poisson-sim");
    let o = dhglm(&["fit", "--config", cfg.to_str().unwrap(), "--method", "mcmc", "--out", blocker.join("run").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    let line = err.lines().find(|l| l.starts_with("error:")).unwrap_or_else(|| panic!("{err}"));
    assert_eq!(line.matches("Not a directory").count(), 1, "{line}");

    let o = dhglm(&["diagnose", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = dhglm(&["fit", "--preset", "no-such-study"]);
    assert!(!o.status.success());
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "format = \"dhglm-run/1\"\nunknown = 3\n").unwrap();
    let o = dhglm(&["fit", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = small_config(dir.path(), "poisson-sim");
    // The flag beats the file's seed.
    let o = dhglm(&["fit", "--config", cfg.to_str().unwrap(), "--method", "amis", "--seed", "8", "--out", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 8);
    assert_eq!(summary["method"], "amis");
    assert_eq!(summary["experiment"]["amis"]["n_initial"], 300);
    assert!(!run.join("mcmc_summary.csv").exists());
    assert_eq!(read_numeric_csv(&run.join("ess_log.csv"), &ESS_HEADER).unwrap().last().unwrap()[1], 700.0);
}
