use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auction-uh")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_echoed(dir: &Path, command: &str) {
    let manifest = json(&dir.join("manifest.json"));
    assert_eq!(manifest["command"], command);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(dir.join("config.json").exists());
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn simulate_default_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--out", "a", "--seed", "11"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&dir.path().join("a/data.csv"));
    assert_eq!(header, ["auction_id", "n", "r", "x", "y", "z"]);
    assert_eq!(rows.len(), 1000);
    assert!(rows.iter().all(|r| r[1] == "4" && r[2] == "3"));
    assert_echoed(&dir.path().join("a"), "simulate");
    assert_eq!(json(&dir.path().join("a/manifest.json"))["seed"], 11);

    assert_eq!(code(&run(&["simulate", "--out", "b", "--seed", "11"], dir.path())), 0);
    let a = std::fs::read(dir.path().join("a/data.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/data.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(dir.path().join("a/manifest.json")).unwrap(),
        std::fs::read(dir.path().join("b/manifest.json")).unwrap()
    );
}

#[test]
fn simulate_censored_long_format() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"mode": "censored", "m": 40, "potential": [2, 6], "reserve": 0.7}"#)
        .unwrap();
    assert_eq!(code(&run(&["simulate", "--config", "c.json", "--out", "o"], dir.path())), 0);
    let (header, _) = csv_rows(&dir.path().join("o/data.csv"));
    assert_eq!(header, ["auction_id", "n", "N", "R", "bid_rank", "bid"]);
    let data = auction_uh::dataset::load_censored(&dir.path().join("o/data.csv"), Default::default()).unwrap();
    assert_eq!(data.data.len(), 40);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("zero.json"), r#"{"m": 0}"#).unwrap();
    assert_eq!(code(&run(&["simulate", "--config", "zero.json"], dir.path())), 2);

    std::fs::write(dir.path().join("unknown.json"), r#"{"m": 5, "fit": {}}"#).unwrap();
    let o = run(&["simulate", "--config", "unknown.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fit"));

    // estimate without a dataset
    assert_eq!(code(&run(&["estimate", "--out", "e"], dir.path())), 2);
    assert_eq!(code(&run(&["simulate", "--config", "missing.json"], dir.path())), 2);
    assert_eq!(code(&run(&["counterfactual", "--v0", "1.5", "--out", "cf"], dir.path())), 2);
}

#[test]
fn estimate_writes_model_and_density_grids() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sim.json"), r#"{"m": 300}"#).unwrap();
    assert_eq!(code(&run(&["simulate", "--config", "sim.json", "--out", "sim"], dir.path())), 0);
    std::fs::write(
        dir.path().join("est.json"),
        r#"{"data": "sim/data.csv", "fit": {"p_m": 3, "n_starts": 2, "integration": {"kind": "quadrature", "nodes": 16}}}"#,
    )
    .unwrap();
    for out in ["e1", "e2"] {
        let o = run(&["estimate", "--config", "est.json", "--out", out, "--seed", "5"], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let e1 = json(&dir.path().join("e1/estimate.json"));
    let e2 = json(&dir.path().join("e2/estimate.json"));
    let (l1, l2) = (e1["result"]["loglik"].as_f64().unwrap(), e2["result"]["loglik"].as_f64().unwrap());
    assert!((l1 - l2).abs() <= 1e-12);
    assert_eq!(e1["result"]["seed"], 5);
    assert_eq!(e1["result"]["per_start"].as_array().unwrap().len(), 2);

    let params = auction_uh::sieve::SieveParams::load(&dir.path().join("e1/model.json")).unwrap();
    assert_eq!(params.p_m, 3);
    let (header, rows) = csv_rows(&dir.path().join("e1/density_x_given_t.csv"));
    assert_eq!(header[..2], ["tau", "x"]);
    let taus: std::collections::BTreeSet<String> = rows.iter().map(|r| r[0].clone()).collect();
    assert_eq!(taus.into_iter().collect::<Vec<_>>(), ["0.25", "0.5", "0.75"]);
    let (_, t_rows) = csv_rows(&dir.path().join("e1/density_t.csv"));
    assert_eq!(t_rows.len(), 101);
    assert_echoed(&dir.path().join("e1"), "estimate");
}

#[test]
fn identify_demo_passes_and_independent_model_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["identify", "--out", "demo"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("demo/report.json"));
    assert_eq!(report["checks"]["factorization_exact"], true);
    assert_eq!(report["checks"]["injective"], true);
    assert_eq!(report["checks"]["recovered"], true);
    let conds = report["recovery"]["condition_numbers"].as_array().unwrap();
    assert!(conds.len() >= 6);
    assert!(conds.iter().all(|c| c[1].as_f64().unwrap() >= 1.0));
    assert!(report["injectivity"]["l_mat"]["cond"].as_f64().unwrap() >= 1.0);
    let (header, rows) = csv_rows(&dir.path().join("demo/curves.csv"));
    assert_eq!(header, ["component", "x", "pdf", "cdf", "true_pdf", "true_cdf"]);
    assert!(!rows.is_empty());
    assert_echoed(&dir.path().join("demo"), "identify");

    std::fs::write(dir.path().join("ind.json"), r#"{"model": {"kind": "independent", "k": 3}}"#).unwrap();
    let o = run(&["identify", "--config", "ind.json", "--out", "ind"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("injectivity"));
    let report = json(&dir.path().join("ind/report.json"));
    assert_eq!(report["checks"]["injective"], false);
}

#[test]
fn counterfactual_uniform_and_monotone_schedule() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u.json"), r#"{"model": {"kind": "uniform"}, "uh": {"kind": "point", "tau": 0.5}}"#)
        .unwrap();
    let o = run(
        &["counterfactual", "--config", "u.json", "--v0", "0.5", "--tau-grid", "0.2,0.8", "--out", "u"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&dir.path().join("u/reserves.csv"));
    assert_eq!(header, ["tau", "r_star", "profit"]);
    for r in &rows {
        assert!((r[1].parse::<f64>().unwrap() - 0.75).abs() < 1e-9);
    }

    let o = run(&["counterfactual", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&dir.path().join("d/reserves.csv"));
    let r: Vec<f64> = rows.iter().map(|row| row[1].parse().unwrap()).collect();
    assert!(r.len() > 5);
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
    let summary = json(&dir.path().join("d/summary.json"));
    let rep = &summary["report"];
    for key in ["gain_optimal", "gain_fixed", "gain_status_quo", "fixed_share_of_potential"] {
        assert!(rep[key].is_number(), "{key}");
    }
    assert!(rep["gain_optimal"].as_f64().unwrap() + 1e-6 >= rep["gain_fixed"].as_f64().unwrap());
    assert_echoed(&dir.path().join("d"), "counterfactual");
}

#[test]
fn counterfactual_uses_empirical_bidder_counts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), r#"{"mode": "censored", "m": 30, "potential": [3, 3, 7]}"#).unwrap();
    assert_eq!(code(&run(&["simulate", "--config", "s.json", "--out", "s"], dir.path())), 0);
    std::fs::write(dir.path().join("c.json"), r#"{"data": "s/data.csv", "reserve_floor": 0.7, "tau_grid": [0.5]}"#)
        .unwrap();
    assert_eq!(code(&run(&["counterfactual", "--config", "c.json", "--out", "c"], dir.path())), 0);
    let summary = json(&dir.path().join("c/summary.json"));
    let dist = summary["n_dist"].as_array().unwrap();
    assert_eq!(dist.len(), 2);
    assert_eq!(dist[0][0], 3);
    assert!((dist[0][1].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn mc_study_emits_envelopes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("mc.json"),
        r#"{"m": 150, "replications": 3, "grid_points": 21,
            "fit": {"p_m": 3, "n_starts": 1, "integration": {"kind": "quadrature", "nodes": 16}}}"#,
    )
    .unwrap();
    let o = run(&["mc-study", "--config", "mc.json", "--out", "mc", "--threads", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["envelope_t.csv", "envelope_x_tau_0.25.csv", "envelope_x_tau_0.5.csv", "envelope_x_tau_0.75.csv"] {
        let (header, rows) = csv_rows(&dir.path().join("mc").join(name));
        assert_eq!(header, ["grid", "q05", "mean", "q95"], "{name}");
        assert_eq!(rows.len(), 21);
    }
    let (_, reps) = csv_rows(&dir.path().join("mc/replications.csv"));
    assert_eq!(reps.len(), 3);
    assert_echoed(&dir.path().join("mc"), "mc-study");
}
