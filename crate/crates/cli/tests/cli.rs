use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn iloco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iloco"))
        .args(args)
        .env("ILOCO_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn read_json(p: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn simulate(dir: &TempDir, name: &str, extra: &[&str]) -> String {
    let out = path(dir, name);
    let mut args = vec![
        "simulate",
        "--scenario",
        "i",
        "--snr",
        "4",
        "--n",
        "300",
        "--m",
        "10",
        "--seed",
        "1",
    ];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", &out]);
    let o = iloco(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_is_deterministic_and_writes_sidecar() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "a.csv", &[]);
    let b = simulate(&dir, "b.csv", &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let meta = read_json(&format!("{a}.json"));
    assert_eq!(meta["meta"]["spec"]["seed"], 1);
    assert_eq!(meta["meta"]["beta"].as_array().unwrap().len(), 10);
    assert!(meta["library_version"].is_string());
}

#[test]
fn analyze_default_scores_all_pairs_sorted() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--task", "clf"]);
    let out = path(&dir, "r.json");
    let o = iloco(&[
        "analyze", "--data", &data, "--target", "y", "--task", "clf", "--method", "mp", "--alpha",
        "0.1", "--b", "300", "--m-frac", "0.2", "--n-frac", "0.2", "--seed", "7", "--out", &out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    assert_eq!(r["version"], 1);
    assert_eq!(r["estimator"], "mp");
    assert_eq!(r["multiplicity"], 45);
    assert_eq!(r["seed"], 7);
    assert_eq!(r["config"]["b"], 300);
    let results = r["results"].as_array().unwrap();
    assert_eq!(results.len(), 45);
    let est: Vec<f64> = results
        .iter()
        .map(|x| x["estimate"].as_f64().unwrap())
        .collect();
    assert!(est.windows(2).all(|w| w[0] >= w[1]));
    for rec in results {
        let lo = rec["ci_lo"].as_f64().unwrap();
        let hi = rec["ci_hi"].as_f64().unwrap();
        let e = rec["estimate"].as_f64().unwrap();
        assert!(lo <= e && e <= hi);
        assert_eq!(rec["significant"].as_bool().unwrap(), lo > 0.0 || hi < 0.0);
        assert_eq!(rec["names"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn analyze_single_pair_has_multiplicity_one() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &[]);
    let out = path(&dir, "r.json");
    let o = iloco(&[
        "analyze", "--data", &data, "--target", "y", "--method", "split", "--pairs", "1,2",
        "--out", &out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    assert_eq!(r["multiplicity"], 1);
    assert_eq!(r["estimator"], "split");
    let results = r["results"].as_array().unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0]["features"], serde_json::json!([1, 2]));
    assert_eq!(results[0]["names"], serde_json::json!(["X2", "X3"]));
    assert_eq!(results[0]["n_eval"], 150);
}

#[test]
fn analyze_order_three_set() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &[]);
    let out = path(&dir, "r.json");
    let o = iloco(&[
        "analyze", "--data", &data, "--target", "y", "--b", "400", "--order", "3", "--set",
        "1,2,3", "--out", &out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    let results = r["results"].as_array().unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0]["features"], serde_json::json!([1, 2, 3]));
}

#[test]
fn analyze_config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &[]);
    let out = path(&dir, "r.json");
    let cfg = path(&dir, "cfg.json");
    let doc = serde_json::json!({
        "data": data, "target": "y", "method": "split", "alpha": 0.2,
        "learner": {"kind": "ridge", "lambda": 0.01}, "sets": [[0, 1], [2, 3]], "out": out,
    });
    std::fs::write(&cfg, doc.to_string()).unwrap();
    let o = iloco(&["analyze", "--config", &cfg, "--alpha", "0.05"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    assert_eq!(r["alpha"], 0.05);
    assert_eq!(r["multiplicity"], 2);
    assert_eq!(r["config"]["learner"]["kind"], "ridge");
}

#[test]
fn misspelled_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "cfg.json");
    std::fs::write(&cfg, r#"{"data": "d.csv", "target": "y", "aplha": 0.1}"#).unwrap();
    let o = iloco(&["analyze", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("aplha"));

    let bench_cfg = path(&dir, "bench.json");
    std::fs::write(&bench_cfg, r#"{"protocol": "coverage", "replicatez": 3}"#).unwrap();
    assert_eq!(
        code(&iloco(&["bench", "coverage", "--config", &bench_cfg])),
        2
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &[]);
    let out = path(&dir, "r.json");
    let missing_target = iloco(&[
        "analyze", "--data", &data, "--target", "nope", "--out", &out,
    ]);
    assert_eq!(code(&missing_target), 2);
    assert!(!String::from_utf8_lossy(&missing_target.stderr).is_empty());
    assert_eq!(
        code(&iloco(&[
            "analyze", "--data", &data, "--target", "y", "--pairs", "1,99", "--out", &out
        ])),
        2
    );
    assert_eq!(
        code(&iloco(&[
            "analyze",
            "--data",
            "/nonexistent.csv",
            "--target",
            "y",
            "--out",
            &out
        ])),
        2
    );
    assert_eq!(
        code(&iloco(&["analyze", "--target", "y", "--out", &out])),
        2
    );
    assert_eq!(code(&iloco(&["analyze", "--bogus-flag"])), 2);
    assert!(!Path::new(&out).exists());
}

#[test]
fn estimator_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &[]);
    let out = path(&dir, "r.json");
    // Three patches cannot cover every row with both features excluded.
    let o = iloco(&[
        "analyze", "--data", &data, "--target", "y", "--b", "3", "--out", &out,
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("increase B"));
}

#[test]
fn bench_writes_json_csv_and_svg() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "cov.json");
    let doc = serde_json::json!({
        "protocol": "coverage",
        "scenario": {"scenario": "S1", "snr": 2.0, "task": "regression", "n": 200, "m": 10},
        "grid_param": "n", "grid": [200.0], "replicates": 4, "method": "split",
        "learner": {"kind": "ridge", "lambda": 0.001}, "fresh_points": 500, "seed": 3,
    });
    std::fs::write(&cfg, doc.to_string()).unwrap();
    let out_dir = path(&dir, "out");
    let o = iloco(&["bench", "coverage", "--config", &cfg, "--out-dir", &out_dir]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&format!("{out_dir}/coverage.json"));
    assert_eq!(report["spec"]["seed"], 3);
    assert!(report["library_version"].is_string());
    let csv = std::fs::read_to_string(format!("{out_dir}/coverage.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    assert!(rdr.headers().unwrap().iter().any(|h| h == "estimate"));
    assert!(rdr.records().count() >= 1);
    let svg = std::fs::read_to_string(format!("{out_dir}/coverage.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn bench_protocol_mismatch_is_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "s.json");
    let doc = serde_json::json!({
        "protocol": "timing",
        "scenario": {"scenario": "S1", "snr": 2.0, "task": "regression", "n": 100, "m": 10},
        "grid_param": "m", "grid": [10.0], "replicates": 1, "method": "mp",
        "learner": {"kind": "ridge", "lambda": 0.001},
    });
    std::fs::write(&cfg, doc.to_string()).unwrap();
    assert_eq!(code(&iloco(&["bench", "success", "--config", &cfg])), 2);
}

#[test]
fn oracle_check_passes_and_prints_table() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "oracle.json");
    let o = iloco(&[
        "oracle", "check", "--order", "2", "--n-mc", "20000", "--out", &out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().count() >= 2);
    let doc = read_json(&out);
    assert_eq!(doc["n_mc"], 20000);
    assert!(doc["rows"]
        .as_array()
        .unwrap()
        .iter()
        .all(|r| r["within_3se"] == true));
}
