//! End-to-end tests of the `histfun` binary: flag parsing, exit codes,
//! file outputs, and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use histfun::{fmt_float, make_basis, predictor_inner_products, FunctionalDataset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_histfun"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should launch")
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("histfun-e2e-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_csv(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| fmt_float(v))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(path, text + "\n").unwrap();
}

/// Noise-free dataset whose responses lie exactly in the span of a cubic
/// basis on eleven knots, with coefficients zero from index 5 onward, so
/// the true cutoff is the knot 0.5.
fn spline_span_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let n = 40;
    let n_points = 101;
    let grid: Vec<f64> = (0..n_points).map(|j| j as f64 / (n_points - 1) as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let curve_basis = make_basis(1.0, 12, 3).unwrap();
    let p = curve_basis.n_basis();
    let coef = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
    let basis_values = DMatrix::from_fn(p, n_points, |k, j| {
        histfun::eval_basis(&curve_basis, grid[j], 0).unwrap()[k]
    });
    let curves = coef * basis_values;

    let fit_basis = make_basis(1.0, 10, 3).unwrap();
    let q = fit_basis.n_basis();
    let b_true = DVector::from_fn(q, |k, _| if k < 5 { 1.0 } else { 0.0 });
    let data = FunctionalDataset::new(
        grid.clone(),
        curves.clone(),
        DVector::zeros(n),
    )
    .unwrap();
    let u = predictor_inner_products(&data, &fit_basis).unwrap();
    let responses = u * b_true;

    let mut curve_rows = vec![grid];
    for i in 0..n {
        curve_rows.push(curves.row(i).iter().copied().collect());
    }
    let response_rows: Vec<Vec<f64>> = responses.iter().map(|&y| vec![y]).collect();

    let curves_path = dir.join("curves.csv");
    let responses_path = dir.join("responses.csv");
    write_csv(&curves_path, &curve_rows);
    write_csv(&responses_path, &response_rows);
    (curves_path, responses_path)
}

#[test]
fn fit_happy_path_on_small_pair() {
    let dir = temp_dir("happy");
    let curves = dir.join("curves.csv");
    let responses = dir.join("responses.csv");
    write_csv(
        &curves,
        &[
            vec![0.0, 0.25, 0.5, 0.75, 1.0],
            vec![1.0, 2.0, 3.0, 2.0, 1.0],
            vec![-1.0, 0.5, 1.5, 0.5, -1.0],
            vec![2.0, 1.0, 0.0, 1.0, 2.0],
        ],
    );
    write_csv(&responses, &[vec![1.5], vec![-0.5], vec![0.25]]);
    let out = dir.join("report.json");
    let output = run(&[
        "fit",
        "--curves",
        curves.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--M",
        "2",
        "--kappa-grid",
        "1e-4",
        "--lambda-grid",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["M"], 2);
    assert_eq!(report["coefficients"].as_array().unwrap().len(), 5);
}

#[test]
fn fit_echoes_singleton_grids() {
    let dir = temp_dir("singleton");
    let (curves, responses) = spline_span_fixture(&dir);
    let out = dir.join("report.json");
    let output = run(&[
        "fit",
        "--curves",
        curves.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--M",
        "10",
        "--kappa-grid",
        "1e-10",
        "--lambda-grid",
        "1e-6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["kappa"].as_f64().unwrap(), 1e-10);
    assert_eq!(report["lambda"].as_f64().unwrap(), 1e-6);
}

#[test]
fn fit_recovers_cutoff_on_noiseless_fixture() {
    let dir = temp_dir("noiseless");
    let (curves, responses) = spline_span_fixture(&dir);
    let out = dir.join("report.json");
    let beta_csv = dir.join("beta.csv");
    let output = run(&[
        "fit",
        "--curves",
        curves.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--M",
        "10",
        "--kappa-grid",
        "1e-10",
        "--lambda-grid",
        "1e-8,1e-7,1e-6,1e-5",
        "--out",
        out.to_str().unwrap(),
        "--beta-csv",
        beta_csv.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let delta_hat = report["delta_hat"].as_f64().unwrap();
    assert!(
        (0.5..=0.6).contains(&delta_hat),
        "delta_hat = {delta_hat}"
    );
    let beta = fs::read_to_string(&beta_csv).unwrap();
    assert!(beta.lines().count() > 200);
    assert!(beta.starts_with("t,beta"));
}

#[test]
fn fit_reports_ragged_row_with_exit_2() {
    let dir = temp_dir("ragged");
    let curves = dir.join("curves.csv");
    let responses = dir.join("responses.csv");
    fs::write(&curves, "0,0.5,1\n1,2,3\n4,5\n").unwrap();
    fs::write(&responses, "1\n2\n").unwrap();
    let output = run(&[
        "fit",
        "--curves",
        curves.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--out",
        dir.join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("row 3"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let output = run(&["fit", "--frobnicate", "1"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("Usage") || stderr.contains("usage"), "stderr: {stderr}");
}

#[test]
fn missing_required_flag_exits_2() {
    let output = run(&["fit", "--curves", "x.csv"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn help_exits_0() {
    let output = run(&["--help"]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("fit"));
    assert!(stdout.contains("simulate"));
    assert!(stdout.contains("bootstrap"));
    assert!(stdout.contains("basis-dump"));
}

#[test]
fn simulate_writes_deterministic_outputs() {
    let dir_a = temp_dir("sim-a");
    let dir_b = temp_dir("sim-b");
    for dir in [&dir_a, &dir_b] {
        let output = run(&[
            "simulate",
            "--scenario",
            "I",
            "--n",
            "20",
            "--reps",
            "2",
            "--seed",
            "11",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let report_a = fs::read(dir_a.join("report.json")).unwrap();
    let report_b = fs::read(dir_b.join("report.json")).unwrap();
    assert_eq!(report_a, report_b);
    let records_a = fs::read_to_string(dir_a.join("records.csv")).unwrap();
    let records_b = fs::read_to_string(dir_b.join("records.csv")).unwrap();
    assert_eq!(records_a, records_b);
    assert_eq!(records_a.lines().count(), 3);

    let report: serde_json::Value = serde_json::from_slice(&report_a).unwrap();
    assert_eq!(report["scenario"], "I");
    assert_eq!(report["n"], 20);
    assert_eq!(report["replicates"], 2);
    assert_eq!(report["seed"], 11);
}

#[test]
fn simulate_scenario_one_recovers_expected_cutoff_mean() {
    let dir = temp_dir("sim-table");
    let output = run(&[
        "simulate",
        "--scenario",
        "I",
        "--n",
        "100",
        "--reps",
        "200",
        "--seed",
        "7",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let delta_mean = report["delta_mean"].as_f64().unwrap();
    assert!(
        (delta_mean - 0.66).abs() <= 0.07,
        "delta_mean = {delta_mean}"
    );
}

#[test]
fn simulate_rejects_unknown_scenario() {
    let dir = temp_dir("sim-bad");
    let output = run(&[
        "simulate",
        "--scenario",
        "IV",
        "--n",
        "10",
        "--reps",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn bootstrap_band_round_trips_from_saved_fit() {
    let dir = temp_dir("boot");
    let (curves, responses) = spline_span_fixture(&dir);
    let report = dir.join("report.json");
    let output = run(&[
        "fit",
        "--curves",
        curves.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--M",
        "10",
        "--kappa-grid",
        "1e-10",
        "--lambda-grid",
        "1e-6",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(output.status.success());

    let band_a = dir.join("band_a.json");
    let band_b = dir.join("band_b.json");
    for band in [&band_a, &band_b] {
        let output = run(&[
            "bootstrap",
            "--curves",
            curves.to_str().unwrap(),
            "--responses",
            responses.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
            "--B",
            "100",
            "--level",
            "0.95",
            "--seed",
            "5",
            "--out",
            band.to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let bytes_a = fs::read(&band_a).unwrap();
    assert_eq!(bytes_a, fs::read(&band_b).unwrap());

    let band: serde_json::Value = serde_json::from_slice(&bytes_a).unwrap();
    let grid = band["grid"].as_array().unwrap();
    let lower = band["lower"].as_array().unwrap();
    let upper = band["upper"].as_array().unwrap();
    assert_eq!(grid.len(), 201);
    assert_eq!(lower.len(), 201);
    assert_eq!(upper.len(), 201);
    for (lo, hi) in lower.iter().zip(upper) {
        assert!(lo.as_f64().unwrap() <= hi.as_f64().unwrap() + 1e-12);
    }
    assert_eq!(band["level"].as_f64().unwrap(), 0.95);
}

#[test]
fn basis_dump_writes_three_files() {
    let dir = temp_dir("dump");
    let output = run(&[
        "basis-dump",
        "--M",
        "8",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let knots = fs::read_to_string(dir.join("knots.csv")).unwrap();
    assert_eq!(knots.lines().count(), 10);
    let values = fs::read_to_string(dir.join("basis_values.csv")).unwrap();
    assert_eq!(values.lines().count(), 202);
    assert!(values.starts_with("t,B0,"));
    let gram = fs::read_to_string(dir.join("penalty_gram.csv")).unwrap();
    assert_eq!(gram.lines().count(), 11);
    assert_eq!(gram.lines().next().unwrap().split(',').count(), 11);
}

#[test]
fn thread_cap_env_var_is_honored_and_validated() {
    let dir = temp_dir("threads");
    let (curves, responses) = spline_span_fixture(&dir);
    let out = dir.join("report.json");
    let output = bin()
        .env("HISTFUN_THREADS", "1")
        .args([
            "fit",
            "--curves",
            curves.to_str().unwrap(),
            "--responses",
            responses.to_str().unwrap(),
            "--M",
            "10",
            "--kappa-grid",
            "1e-10",
            "--lambda-grid",
            "1e-6",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());

    let output = bin()
        .env("HISTFUN_THREADS", "zero")
        .args(["basis-dump", "--M", "4", "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}
