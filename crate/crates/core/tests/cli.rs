use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi-sched"))
        .args(args)
        .env("AOI_SCHED_OUT", dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn solve_arq_prints_candidate_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        dir.path(),
        &["solve", "--p0", "0.5", "--rmax", "0", "--eta", "10", "--n-max", "150"],
    );
    assert!(out.status.success());
    let v = json(&out);
    let t = v["threshold"].as_u64().unwrap() as u32;
    let (lo, hi) = aoi_sched::arq::threshold_candidates(0.5, 10.0);
    assert!(t == lo || t == hi);
    let (header, rows) = read_csv(&dir.path().join("solve_policy.csv"));
    assert_eq!(header, ["delta", "r", "h", "q_idle", "q_new", "q_retx", "action"]);
    assert_eq!(rows.len(), 150);
}

#[test]
fn solve_unconstrained_never_idles() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        dir.path(),
        &["solve", "--eta", "0", "--unconstrained", "--rmax", "3", "--n-max", "60"],
    );
    assert!(out.status.success());
    assert_eq!(json(&out)["avg_cost"].as_f64().unwrap(), 1.0);
    let (_, rows) = read_csv(&dir.path().join("solve_policy.csv"));
    assert!(rows.iter().all(|r| r[6] != "i"));
}

#[test]
fn search_eta_reports_budget_equality() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        dir.path(),
        &[
            "search-eta",
            "--p0",
            "0.3",
            "--lambda",
            "0.5",
            "--rmax",
            "9",
            "--c-max",
            "0.4",
        ],
    );
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["achieved_cost"].as_f64().unwrap() - 0.4).abs() < 1e-6);
    let (header, rows) = read_csv(&dir.path().join("search_eta.csv"));
    assert_eq!(header, ["step", "eta", "cost", "aoi", "gain"]);
    assert_eq!(rows.len() as u64, v["steps"].as_u64().unwrap());
}

#[test]
fn simulate_writes_stats_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        dir.path(),
        &[
            "simulate",
            "--p0",
            "0.5",
            "--rmax",
            "3",
            "--c-max",
            "0.4",
            "--horizon",
            "5000",
            "--replications",
            "4",
            "--trace",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["retransmits_after_idle"], 0);
    let (header, rows) = read_csv(&dir.path().join("trace.csv"));
    assert_eq!(header, ["t", "delta", "r", "action", "success"]);
    assert_eq!(rows.len(), 5000);
    let (header, rows) = read_csv(&dir.path().join("simulate.csv"));
    assert_eq!(
        header,
        [
            "policy_id",
            "p0",
            "lambda",
            "r_max",
            "c_max",
            "mean_aoi",
            "var_aoi",
            "mean_cost"
        ]
    );
    assert_eq!(rows.len(), 1);
}

#[test]
fn sweep_is_reproducible_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep",
        "--p0",
        "0.5",
        "--rmax",
        "0,2",
        "--c-max",
        "0.3,0.6",
        "--n-max",
        "80",
        "--horizon",
        "2000",
        "--replications",
        "3",
    ];
    assert!(cli(dir.path(), &args).status.success());
    let first = std::fs::read(dir.path().join("sweep.csv")).unwrap();
    assert!(cli(dir.path(), &args).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("sweep.csv")).unwrap());

    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(header, aoi_sched::experiment::SWEEP_HEADER);
    let keys: Vec<(&str, &str, &str)> = rows
        .iter()
        .map(|r| (r[2].as_str(), r[3].as_str(), r[5].as_str()))
        .collect();
    assert_eq!(
        keys,
        [
            ("0", "0.3", "optimal"),
            ("0", "0.3", "baseline"),
            ("0", "0.6", "optimal"),
            ("0", "0.6", "baseline"),
            ("2", "0.3", "optimal"),
            ("2", "0.3", "baseline"),
            ("2", "0.6", "optimal"),
            ("2", "0.6", "baseline"),
        ]
    );
    assert!(rows.iter().all(|r| r[12].is_empty()));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    std::fs::write(
        &cfg,
        r#"{"p0": [0.4], "r_max": [0], "c_max": [0.2, 0.5, 0.8], "simulate": false}"#,
    )
    .unwrap();
    let out = cli(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "sweep", "--c-max", "0.5"],
    );
    assert!(out.status.success());
    let (_, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[0] == "0.4" && r[3] == "0.5" && r[9].is_empty()));
}

#[test]
fn learn_zero_horizon_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        dir.path(),
        &[
            "learn",
            "--p0",
            "0.5",
            "--rmax",
            "3",
            "--c-max",
            "0.4",
            "--horizon",
            "0",
            "--replications",
            "2",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("learn_curve.csv"));
    assert_eq!(header[4], "n");
    assert!(rows.is_empty());
    let (_, rows) = read_csv(&dir.path().join("learn_timeline.csv"));
    assert!(rows.is_empty());
}

#[test]
fn learn_single_point_dumps_q_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        dir.path(),
        &[
            "learn",
            "--p0",
            "0.5",
            "--rmax",
            "3",
            "--c-max",
            "0.4",
            "--horizon",
            "2000",
            "--replications",
            "3",
            "--n-max",
            "40",
        ],
    );
    assert!(out.status.success());
    let (_, summary) = read_csv(&dir.path().join("learn_summary.csv"));
    assert_eq!(summary.len(), 1);
    assert!(summary[0][9].is_empty());
    let (header, q) = read_csv(&dir.path().join("learn_q.csv"));
    assert_eq!(header, ["delta", "r", "q_idle", "q_new", "q_retx"]);
    assert!(!q.is_empty());
}

#[test]
fn verify_quick_passes_and_perturbation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ok = cli(dir.path(), &["verify", "--quick"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(json(&ok)["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));

    let bad = cli(dir.path(), &["verify", "--quick", "--perturb", "arq-cost"]);
    assert_eq!(bad.status.code(), Some(1));
    let v = json(&bad);
    let failed: Vec<&str> = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["arq-cost"]);
}

#[test]
fn invalid_parameters_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["solve", "--p0", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p0"));
    let out = cli(dir.path(), &["simulate", "--policy", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}
