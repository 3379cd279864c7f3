use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn blockvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockvar")).args(args).output().expect("spawn blockvar")
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn simulate_to(path: &Path, n: usize, seed: u64) {
    let out = blockvar(&[
        "simulate", "--coeffs", "1,-0.4", "--innovation", "exponential", "--n", &n.to_string(),
        "--seed", &seed.to_string(), "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_deterministic_and_formats_agree() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    let json = dir.path().join("x.json");
    simulate_to(&csv, 200, 5);
    simulate_to(&json, 200, 5);

    let stdout = blockvar(&["simulate", "--coeffs", "1,-0.4", "--innovation", "exponential", "--n", "200", "--seed", "5"]);
    assert_eq!(stdout.stdout, fs::read(&csv).unwrap());

    let rec: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(rec["seed"], 5);
    assert_eq!(rec["n"], 200);
    let from_csv: Vec<f64> = fs::read_to_string(&csv).unwrap().lines().skip(1).map(|l| l.parse().unwrap()).collect();
    let from_json: Vec<f64> = serde_json::from_value(rec["values"].clone()).unwrap();
    assert_eq!(from_csv, from_json);
}

#[test]
fn m_dependent_simulation() {
    let out = blockvar(&["simulate", "--process", "m-dependent", "--m0", "3", "--map", "sum", "--n", "50"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 51);
}

#[test]
fn estimators_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.json");
    simulate_to(&p, 400, 1);
    let input = p.to_str().unwrap();

    let v = json_stdout(&blockvar(&["estimate", "autocov", "--input", input, "--lag", "0"]));
    assert_eq!(v["estimator"], "autocov");
    assert!(v["value"].as_f64().unwrap() > 0.0);

    let mbb = json_stdout(&blockvar(&["estimate", "mbb-var", "--input", input, "--ell", "8"]));
    let m1 = json_stdout(&blockvar(&["estimate", "mbb-moment", "--input", input, "--ell", "8", "--nu", "1"]));
    let m2 = json_stdout(&blockvar(&["estimate", "mbb-moment", "--input", input, "--ell", "8", "--nu", "2"]));
    let (m1, m2) = (m1["value"].as_f64().unwrap(), m2["value"].as_f64().unwrap());
    let direct = (m2 - m1 * m1) / 400.0;
    assert!((mbb["value"].as_f64().unwrap() - direct).abs() < 1e-12 * direct.abs().max(1.0));

    for est in ["spectral", "nbb-var", "lag-var"] {
        let v = json_stdout(&blockvar(&["estimate", est, "--input", input, "--ell", "10"]));
        assert!(v["value"].as_f64().unwrap().is_finite(), "{est}");
        assert!(v["truncated"].is_boolean());
    }
    let v = json_stdout(&blockvar(&[
        "estimate", "lag-var", "--input", input, "--ell", "10", "--functional", "periodogram:1.5707963267948966",
    ]));
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    simulate_to(&p, 50, 1);
    let out = blockvar(&["estimate", "autocov", "--input", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(blockvar(&["estimate", "nonsense"]).status.code(), Some(2));
    assert_eq!(blockvar(&[]).status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let out = blockvar(&["estimate", "autocov", "--input", "/nonexistent/x.csv", "--lag", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exact_bootstrap_on_four_points() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    fs::write(&p, "x\n1\n2\n4\n8\n").unwrap();
    let v = json_stdout(&blockvar(&["bootstrap", "--input", p.to_str().unwrap(), "--ell", "2", "--exact"]));
    let atoms = v["atoms"].as_array().unwrap();
    let total: f64 = atoms.iter().map(|a| a["prob"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    // blocks {1,2}, {2,4}, {4,8}: each resample mean is the average of two block means
    let block_means = [1.5, 3.0, 6.0];
    let want: f64 = block_means.iter().sum::<f64>() / 3.0;
    assert!((v["mean"].as_f64().unwrap() - want).abs() < 1e-12);
}

#[test]
fn sampled_bootstrap_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    simulate_to(&p, 300, 2);
    let input = p.to_str().unwrap();
    let args = ["bootstrap", "--input", input, "--scheme", "nbb", "--ell", "10", "--replicates", "200", "--seed", "4"];
    let a = json_stdout(&blockvar(&args));
    let b = json_stdout(&blockvar(&args));
    assert_eq!(a, b);
    assert_eq!(a["samples"].as_array().unwrap().len(), 200);

    let bobb = json_stdout(&blockvar(&[
        "bootstrap", "--input", input, "--scheme", "bobb", "--ell", "5", "--ell1", "8", "--replicates", "100",
    ]));
    let q = &bobb["quantiles"];
    assert!(q["0.025"].as_f64().unwrap() <= q["0.975"].as_f64().unwrap());
}

#[test]
fn edgeworth_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    fs::write(&p, r#"{"kind": "cumulants", "chi": [1.0, 0.0], "b_tilde": 100.0, "s": 3}"#).unwrap();
    let out = blockvar(&["edgeworth", "--params", p.to_str().unwrap(), "--grid", "-2:2:5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,phi,ee"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        // zero skewness: the expansion is the normal law
        assert!((r[1] - r[2]).abs() < 1e-15);
    }
    assert!((rows[2][2] - 0.5).abs() < 1e-15);

    fs::write(&p, r#"{"kind": "moments"}"#).unwrap();
    assert_eq!(blockvar(&["edgeworth", "--params", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn experiment_persists_and_guards_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mdev.cfg");
    fs::write(
        &cfg,
        "process.kind = linear\nprocess.coeffs = 1\nprocess.innovation = normal\nstatistic = mean\n\
         n_ladder = 200, 400\nreplicates = 200\nseed_groups = 2\nmaster_seed = 3\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = blockvar(&["experiment", "mdev", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let summary = json_stdout(&out);
    assert_eq!(summary.as_array().unwrap().len(), 2);
    for f in ["config.copy", "result.json", "rows.csv", "timing.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    let again = dir.path().join("again");
    let out = blockvar(&[
        "experiment", "mdev", "--config", out_dir.join("config.copy").to_str().unwrap(), "--out",
        again.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read(out_dir.join("result.json")).unwrap(), fs::read(again.join("result.json")).unwrap());

    let wrong = blockvar(&["experiment", "soc", "--config", out_dir.join("config.copy").to_str().unwrap(), "--out",
        dir.path().join("w").to_str().unwrap()]);
    assert_eq!(wrong.status.code(), Some(2));

    let big = dir.path().join("big.cfg");
    fs::write(
        &big,
        "process.kind = linear\nprocess.coeffs = 1\nstatistic = mean\nn_ladder = 100000\nreplicates = 1000000\nmaster_seed = 1\n",
    )
    .unwrap();
    let out = blockvar(&["experiment", "mdev", "--config", big.to_str().unwrap(), "--out",
        dir.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
