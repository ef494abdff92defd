use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nicc::experiment::read_records;
use nicc::simulation::{generate, nicu_like, SimConfig};
use nicc::{Dataset, Family};
use serde_json::Value;

fn nicc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nicc")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn write_csv(data: &Dataset, path: &Path) {
    nicc::io::write_dataset(data, fs::File::create(path).unwrap()).unwrap();
}

#[test]
fn fit_intercept_only_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.csv");
    fs::write(&path, "cluster,y\na,1\nb,2\nc,3\n").unwrap();
    let report = json(&nicc(&["fit", path.to_str().unwrap()]));
    assert!((report["coefficients"][0]["estimate"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((report["dispersion"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(report["criteria"][0]["criterion"], "AIC");
    assert_eq!(report["criteria"][3]["criterion"], "NICc");
}

#[test]
fn missing_cluster_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "id,y,x\na,1,2\nb,2,3\n").unwrap();
    let out = nicc(&["fit", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn non_numeric_predictor_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "cluster,y,x\na,1,2\nb,2,three\nc,3,4\n").unwrap();
    assert_eq!(nicc(&["fit", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn rank_deficient_fit_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    fs::write(&path, "cluster,y,x\na,1,5\nb,2,5\nc,3,5\nd,5,5\n").unwrap();
    assert_eq!(nicc(&["fit", path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn unknown_criterion_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    fs::write(&path, "cluster,y,x\na,1,2\nb,2,3\nc,3,5\n").unwrap();
    let out = nicc(&["select", path.to_str().unwrap(), "--criterion", "hqic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn select_with_one_predictor_has_path_length_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    let cfg = SimConfig { clusters: 8, cluster_size: 5, p: 1, seed: 3, ..SimConfig::default() };
    write_csv(&generate(&cfg).unwrap().0, &path);
    for criterion in ["aic", "bic", "nic", "nicc", "loodev", "cvdev"] {
        let report = json(&nicc(&["select", path.to_str().unwrap(), "--criterion", criterion, "--k", "4"]));
        assert_eq!(report["path"].as_array().unwrap().len(), 1, "{criterion}");
    }
}

#[test]
fn cv_with_k_equal_to_clusters_matches_loo_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let cfg = SimConfig { family: Family::Binomial, clusters: 12, cluster_size: 10, p: 3, r_b: 0.5, seed: 5, ..SimConfig::default() };
    write_csv(&generate(&cfg).unwrap().0, &path);
    let p = path.to_str().unwrap();
    let loo = json(&nicc(&["cv", p, "--family", "binomial", "--k", "loo"]));
    let k12 = json(&nicc(&["cv", p, "--family", "binomial", "--k", "12", "--seed", "9"]));
    let a = loo["total_deviance"].as_f64().unwrap();
    let b = k12["total_deviance"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} vs {b}");
    let first = nicc(&["cv", p, "--family", "binomial", "--k", "5", "--seed", "9"]);
    let second = nicc(&["cv", p, "--family", "binomial", "--k", "5", "--seed", "9"]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(nicc(&["cv", p, "--family", "binomial", "--k", "13"]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let a = nicc(&["simulate", "--clusters", "4", "--cluster-size", "3", "--seed", "21"]);
    let b = nicc(&["simulate", "--clusters", "4", "--cluster-size", "3", "--seed", "21"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.starts_with("cluster,y,x1,"));
}

#[test]
fn experiment_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.txt");
    fs::write(&design, "base_seed = 11\niterations = 2\nsweeps = n_i\nn_i = 5\np = 5, 6\nclusters = 20\n").unwrap();
    let out = dir.path().join("out.csv");
    let summary =
        json(&nicc(&["experiment", "--design", design.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(summary["records"], 2 * 2 * 2 * 5);
    assert!(dir.path().join("out.csv.timing.csv").exists());
    let records = read_records(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(records.len(), 40);
    for r in &records {
        assert!(!r.failed, "{}", r.error);
        assert_eq!(r.approximation_error, r.value - r.loo_deviance);
    }
}

#[test]
fn nicu_schema_file_fits_with_nicc_above_aic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nicu.csv");
    write_csv(&nicu_like(2964, 7).unwrap(), &path);
    let report = json(&nicc(&["fit", path.to_str().unwrap(), "--family", "binomial"]));
    assert_eq!(report["n_clusters"], 2964);
    let criteria = report["criteria"].as_array().unwrap();
    let aic = criteria[0]["value"].as_f64().unwrap();
    let nicc_value = criteria[3]["value"].as_f64().unwrap();
    assert!(nicc_value >= aic, "NICc {nicc_value} < AIC {aic}");
}

#[test]
fn large_file_cv_with_100_folds_is_close_to_50_folds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nicu.csv");
    write_csv(&nicu_like(2964, 7).unwrap(), &path);
    let p = path.to_str().unwrap();
    let k100 = json(&nicc(&["cv", p, "--family", "binomial", "--k", "100", "--seed", "1"]));
    let k50 = json(&nicc(&["cv", p, "--family", "binomial", "--k", "50", "--seed", "1"]));
    let a = k100["total_deviance"].as_f64().unwrap();
    let b = k50["total_deviance"].as_f64().unwrap();
    assert_eq!(k100["n_failed_folds"], 0);
    assert!((a - b).abs() / a < 0.05, "k=100 {a} vs k=50 {b}");
}

#[test]
fn nicc_and_cv_select_share_first_three_variables() {
    let dir = tempfile::tempdir().unwrap();
    let mut agree = 0;
    for seed in 0..10 {
        let cfg = SimConfig { seed: 300 + seed, ..SimConfig::selection_cell(Family::Gaussian) };
        let data = generate(&cfg).unwrap().0;
        let path = dir.path().join(format!("s{seed}.csv"));
        write_csv(&data, &path);
        let p = path.to_str().unwrap();
        let first3 = |v: &Value| -> BTreeSet<String> {
            v["path"].as_array().unwrap()[..3].iter().map(|s| s["added_variable"].as_str().unwrap().to_string()).collect()
        };
        let a = json(&nicc(&["select", p, "--criterion", "nicc"]));
        let b = json(&nicc(&["select", p, "--criterion", "cvdev", "--k", "10", "--seed", &seed.to_string()]));
        agree += usize::from(first3(&a) == first3(&b));
    }
    assert!(agree >= 6, "first three variables agree in {agree}/10 seeds");
}
