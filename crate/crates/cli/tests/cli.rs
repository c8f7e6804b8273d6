use eqps::data::write_subjects;
use eqps::numerics::RngStream;
use eqps::simulation::{generate_datasets, ScenarioConfig};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const FAST: &str = r#"{"analysis": {"mcmc": {"chains": 2, "iterations": 1500, "burn_in": 500}, "eqps": {"draws": 20000}}}"#;

fn eqps(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqps"))
        .current_dir(dir)
        .env_remove("EQPS_OUT_DIR")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn trial_csv(dir: &Path) -> PathBuf {
    let mut rng = RngStream::new(7, 0);
    let subjects = generate_datasets(&ScenarioConfig::desk(), &mut rng).unwrap();
    let mut bytes = vec![];
    write_subjects(&mut bytes, &subjects).unwrap();
    let p = dir.join("trial.csv");
    std::fs::write(&p, bytes).unwrap();
    p
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn analyze_writes_report_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    trial_csv(d);
    write(d, "fast.json", FAST);
    let o = eqps(
        d,
        &[
            "--config",
            "fast.json",
            "--out-dir",
            "out",
            "analyze",
            "--data",
            "trial.csv",
            "--methods",
            "eqps,noborrow",
            "--dump-draws",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("eqps") && stdout.contains("noborrow"),
        "{stdout}"
    );
    let report: serde_json::Value = serde_json::from_str(&read(d.join("out/report.json"))).unwrap();
    assert_eq!(report["analyses"].as_array().unwrap().len(), 2);
    assert!(report["strata"].as_array().unwrap().len() == 5);
    assert!(d.join("out/draws_treatment.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&read(d.join("out/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "analyze");
    assert!(manifest["config_file"]
        .as_str()
        .unwrap()
        .ends_with("fast.json"));
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap())
        .collect();
    assert!(
        outputs.contains(&"report.json") && outputs.contains(&"config.json"),
        "{outputs:?}"
    );

    let v = eqps(d, &["--out-dir", "out", "--verify"]);
    assert_eq!(code(&v), 0, "{}", stderr(&v));
    std::fs::write(d.join("out/report.json"), "{}").unwrap();
    let v = eqps(d, &["--out-dir", "out", "--verify"]);
    assert_eq!(code(&v), 3);
    assert!(String::from_utf8_lossy(&v.stdout).contains("MISMATCH"));
}

#[test]
fn verify_without_manifest_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        code(&eqps(tmp.path(), &["--out-dir", "nowhere", "--verify"])),
        2
    );
}

#[test]
fn malformed_csv_names_the_row() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "bad.csv",
        "source,arm,outcome,x1\ncurrent,treatment,1,0.5\ncurrent,control,yes,0.1\n",
    );
    let o = eqps(d, &["analyze", "--data", "bad.csv"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("row 3"), "{err}");
}

#[test]
fn missing_data_file_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        code(&eqps(tmp.path(), &["analyze", "--data", "absent.csv"])),
        2
    );
}

#[test]
fn config_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "typo.json", r#"{"analysis": {"n_strat": 3}}"#);
    let o = eqps(d, &["--config", "typo.json", "--print-config", "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("analysis.n_strat"));
    write(d, "bad.json", r#"{"lambdas": [1.5]}"#);
    assert_eq!(code(&eqps(d, &["--config", "bad.json", "simulate"])), 2);
    assert_eq!(code(&eqps(d, &["simulate", "--methods", "eqps,magic"])), 2);
    assert_eq!(code(&eqps(d, &["simulate", "--replicates", "0"])), 2);
}

#[test]
fn print_config_shows_overrides_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let o = eqps(
        d,
        &[
            "--seed",
            "11",
            "--preset",
            "paper",
            "--print-config",
            "simulate",
            "--replicates",
            "7",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg["seed"], 11);
    assert_eq!(cfg["replicates"], 7);
    assert_eq!(cfg["base"]["n_current"], 500);
    assert!(!d.join("eqps-out").exists());
}

#[test]
fn strict_turns_a_failed_diagnostic_into_exit_three() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    trial_csv(d);
    // Far too short for the chains to mix.
    write(
        d,
        "short.json",
        r#"{"analysis": {"mcmc": {"chains": 4, "iterations": 50, "burn_in": 10}, "eqps": {"draws": 2000}}}"#,
    );
    let lax = eqps(
        d,
        &[
            "--config",
            "short.json",
            "analyze",
            "--data",
            "trial.csv",
            "--methods",
            "map",
        ],
    );
    assert_eq!(code(&lax), 0, "{}", stderr(&lax));
    let strict = eqps(
        d,
        &[
            "--strict",
            "--config",
            "short.json",
            "analyze",
            "--data",
            "trial.csv",
            "--methods",
            "map",
        ],
    );
    assert_eq!(code(&strict), 3, "{}", stderr(&strict));
    assert!(stderr(&strict).contains("converge"));
}

fn small_grid(d: &Path) {
    write(
        d,
        "grid.json",
        r#"{"replicates": 3, "baseline_shifts": [0.0], "heterogeneity": [0.0, 0.4], "lambdas": [0.8], "deltas": [0.1],
            "true_effect_draws": 2000,
            "analysis": {"mcmc": {"chains": 2, "iterations": 800, "burn_in": 300}, "eqps": {"draws": 5000}}}"#,
    );
}

#[test]
fn simulate_reports_every_method_per_scenario_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_grid(d);
    for out in ["a", "b"] {
        let o = eqps(
            d,
            &[
                "--config",
                "grid.json",
                "--out-dir",
                out,
                "simulate",
                "--records",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let summary = read(d.join("a/summary.csv"));
    assert_eq!(summary, read(d.join("b/summary.csv")));
    assert_eq!(read(d.join("a/records.csv")), read(d.join("b/records.csv")));
    let mut rdr = csv::Reader::from_reader(summary.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let si = headers.iter().position(|h| h == "scenario").unwrap();
    let mi = headers.iter().position(|h| h == "method").unwrap();
    let mut per: std::collections::BTreeMap<String, Vec<String>> = Default::default();
    for r in rdr.records() {
        let r = r.unwrap();
        per.entry(r[si].to_string())
            .or_default()
            .push(r[mi].to_string());
    }
    assert_eq!(per.len(), 2);
    for methods in per.values() {
        assert_eq!(methods.len(), 5, "{methods:?}");
    }
    // Thread count does not change the numbers.
    let o = eqps(
        d,
        &[
            "--config",
            "grid.json",
            "--out-dir",
            "c",
            "--threads",
            "2",
            "simulate",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(summary, read(d.join("c/summary.csv")));
}

#[test]
fn plots_come_one_per_panel() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "curve.csv",
        "rwd_shift,lambda,delta,mean_weight,se,n_fail\n\
         -0.2,0.8,0.1,0.5,0.05,0\n0.0,0.8,0.1,0.8,0.05,0\n0.2,0.8,0.1,0.5,0.05,0\n\
         -0.2,0.8,0.2,0.6,0.05,0\n0.0,0.8,0.2,0.9,0.05,0\n0.2,0.8,0.2,0.6,0.05,0\n",
    );
    write(
        d,
        "density.csv",
        "scaling,method,x,density\n1,eqps,0.0,1.0\n1,eqps,0.5,2.0\n1,map,0.0,1.5\n1,map,0.5,0.5\n",
    );
    let o = eqps(
        d,
        &["--out-dir", "plots", "plot", "curve.csv", "density.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svgs: Vec<String> = std::fs::read_dir(d.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".svg"))
        .collect();
    assert_eq!(
        svgs.iter().filter(|n| n.starts_with("curve_delta")).count(),
        2,
        "{svgs:?}"
    );
    let density = read(d.join("plots/density_x1.svg"));
    assert!(density.contains("stroke-dasharray") && density.contains(">0.25<"));

    write(d, "empty.csv", "rwd_shift,lambda,delta,mean_weight\n");
    let o = eqps(d, &["--out-dir", "plots2", "plot", "empty.csv"]);
    assert_eq!(code(&o), 2);
    write(d, "other.csv", "a,b\n1,2\n");
    assert_eq!(
        code(&eqps(d, &["--out-dir", "plots3", "plot", "other.csv"])),
        2
    );
}

#[test]
fn no_subcommand_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&eqps(tmp.path(), &[])), 2);
}
