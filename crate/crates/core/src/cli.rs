//! Command-line front end: CSV ingestion, model fitting, simulation
//! studies, bootstrap bands, and basis dumps.
//!
//! Exit codes: 0 on success, 2 on validation or input errors (including
//! flag parsing), 3 on numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::bspline::{eval_basis, make_basis, penalty_gram};
use crate::design::{center, DesignSystem, FunctionalDataset};
use crate::error::{Error, Result};
use crate::estimator::{default_kappa_grid, default_lambda_grid, tune_fit, NgbConfig};
use crate::inference::bootstrap_band;
use crate::report::{
    fmt_float, write_atomic, write_json_atomic, FitReport, REPORT_GRID_POINTS,
};
use crate::simlab::{run_study, Scenario, StudyConfig};

/// Environment variable capping the rayon thread pool.
pub const THREADS_ENV: &str = "HISTFUN_THREADS";

#[derive(Parser)]
#[command(
    name = "histfun",
    version,
    about = "Historical functional linear model: locally sparse estimation with nested group bridge"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a curves/responses CSV pair and write a JSON report.
    Fit {
        /// Wide CSV: first row is the time grid, each later row one curve.
        #[arg(long)]
        curves: PathBuf,
        /// One-column CSV of scalar responses, one row per curve.
        #[arg(long)]
        responses: PathBuf,
        /// Domain end; the input grid is rescaled onto [0, T].
        #[arg(long = "T", default_value_t = 1.0)]
        domain_end: f64,
        /// Number of B-spline subintervals.
        #[arg(long = "M", default_value_t = 30)]
        basis_intervals: usize,
        /// B-spline degree.
        #[arg(long, default_value_t = 3)]
        degree: usize,
        /// Bridge exponent in (0,1).
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        /// Roughness derivative order.
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Comma-separated roughness penalty grid.
        #[arg(long = "kappa-grid", value_delimiter = ',')]
        kappa_grid: Option<Vec<f64>>,
        /// Comma-separated sparsity penalty grid.
        #[arg(long = "lambda-grid", value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        /// Output path for the JSON fit report.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV emission of the fitted coefficient function.
        #[arg(long = "beta-csv")]
        beta_csv: Option<PathBuf>,
    },
    /// Run a Monte Carlo study and write report.json plus records.csv.
    Simulate {
        /// Scenario I, II, or III.
        #[arg(long)]
        scenario: String,
        /// Curves per replicate.
        #[arg(long)]
        n: usize,
        /// Number of replicates.
        #[arg(long)]
        reps: usize,
        /// Base RNG seed; replicate r uses stream (seed, r).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Redraw the generator knot count per replicate.
        #[arg(long, default_value_t = false)]
        randomize_knots: bool,
    },
    /// Residual-bootstrap confidence band around a previously saved fit.
    Bootstrap {
        /// Wide CSV the fit was produced from.
        #[arg(long)]
        curves: PathBuf,
        /// Responses CSV the fit was produced from.
        #[arg(long)]
        responses: PathBuf,
        /// Domain end; must match the saved fit.
        #[arg(long = "T", default_value_t = 1.0)]
        domain_end: f64,
        /// Path to the JSON fit report to resample around.
        #[arg(long)]
        report: PathBuf,
        /// Bootstrap replicates (at least 100).
        #[arg(long = "B", default_value_t = 1000)]
        b_count: usize,
        /// Band confidence level in (0,1).
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// RNG seed; replicate r uses stream (seed, r).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the JSON band.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write basis values, knots, and the roughness Gram matrix as CSVs.
    BasisDump {
        /// Domain end.
        #[arg(long = "T", default_value_t = 1.0)]
        domain_end: f64,
        /// Number of B-spline subintervals.
        #[arg(long = "M")]
        basis_intervals: usize,
        /// B-spline degree.
        #[arg(long, default_value_t = 3)]
        degree: usize,
        /// Roughness derivative order.
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses the CLI arguments and runs the selected command, returning the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e}");
        return 2;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::CsvFormat { .. } | Error::Io { .. } | Error::Json(_) => 2,
        Error::SingularSystem(_) | Error::NonConvergence { .. } | Error::AllFitsFailed { .. } => 3,
    }
}

/// Applies the `HISTFUN_THREADS` cap. Must run before any parallel work;
/// a pool that is already initialized is left as is.
fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    if threads == 0 {
        return Err(Error::invalid(format!("{THREADS_ENV} must be at least 1")));
    }
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit {
            curves,
            responses,
            domain_end,
            basis_intervals,
            degree,
            gamma,
            m,
            kappa_grid,
            lambda_grid,
            out,
            beta_csv,
        } => cmd_fit(
            &curves,
            &responses,
            domain_end,
            basis_intervals,
            degree,
            gamma,
            m,
            kappa_grid,
            lambda_grid,
            &out,
            beta_csv.as_deref(),
        ),
        Command::Simulate {
            scenario,
            n,
            reps,
            seed,
            out,
            randomize_knots,
        } => cmd_simulate(&scenario, n, reps, seed, &out, randomize_knots),
        Command::Bootstrap {
            curves,
            responses,
            domain_end,
            report,
            b_count,
            level,
            seed,
            out,
        } => cmd_bootstrap(
            &curves,
            &responses,
            domain_end,
            &report,
            b_count,
            level,
            seed,
            &out,
        ),
        Command::BasisDump {
            domain_end,
            basis_intervals,
            degree,
            m,
            out,
        } => cmd_basis_dump(domain_end, basis_intervals, degree, m, &out),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    curves: &Path,
    responses: &Path,
    domain_end: f64,
    basis_intervals: usize,
    degree: usize,
    gamma: f64,
    m: usize,
    kappa_grid: Option<Vec<f64>>,
    lambda_grid: Option<Vec<f64>>,
    out: &Path,
    beta_csv: Option<&Path>,
) -> Result<()> {
    let data = ingest_dataset(curves, responses, domain_end)?;
    let basis = make_basis(domain_end, basis_intervals, degree)?;
    let ds = DesignSystem::new(&data, basis, m)?;
    let kappa_grid = kappa_grid.unwrap_or_else(default_kappa_grid);
    let lambda_grid = lambda_grid.unwrap_or_else(default_lambda_grid);
    let mut config = NgbConfig::new(0.0, 0.0);
    config.gamma = gamma;
    config.m = m;

    let start = Instant::now();
    let fit = tune_fit(&ds, data.responses(), &kappa_grid, &lambda_grid, &config)?;
    let runtime_ms = start.elapsed().as_millis() as u64;

    let report = FitReport::new(&fit, runtime_ms, None)?;
    write_json_atomic(out, &report)?;
    if let Some(path) = beta_csv {
        write_atomic(path, &report.beta_grid_csv())?;
    }
    println!(
        "delta_hat = {}  J0 = {}  kappa = {}  lambda = {}  bic = {}",
        report.delta_hat, report.j0, report.kappa, report.lambda, report.bic
    );
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_simulate(
    scenario: &str,
    n: usize,
    reps: usize,
    seed: u64,
    out: &Path,
    randomize_knots: bool,
) -> Result<()> {
    let scenario = Scenario::from_str(scenario)?;
    let mut config = StudyConfig::default();
    config.randomize_knots = randomize_knots;
    let report = run_study(scenario, n, reps, seed, &config)?;
    fs::create_dir_all(out)
        .map_err(|e| Error::io(format!("creating directory {}", out.display()), e))?;
    write_json_atomic(&out.join("report.json"), &report)?;
    write_atomic(&out.join("records.csv"), &report.records_csv())?;
    println!(
        "scenario {} n {} reps {}: delta_mean = {:.4} (sd {:.4}), mise_mean = {:.6}, failures = {}",
        report.scenario,
        report.n,
        report.replicates,
        report.delta_mean,
        report.delta_sd,
        report.mise_mean,
        report.failures
    );
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bootstrap(
    curves: &Path,
    responses: &Path,
    domain_end: f64,
    report_path: &Path,
    b_count: usize,
    level: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "level must lie in (0,1), got {level}"
        )));
    }
    let data = ingest_dataset(curves, responses, domain_end)?;
    let raw = fs::read_to_string(report_path)
        .map_err(|e| Error::io(format!("reading {}", report_path.display()), e))?;
    let report: FitReport = serde_json::from_str(&raw)?;
    let fit = report.to_fit()?;
    let t_end = fit.beta_hat.basis().domain_end();
    let grid: Vec<f64> = (0..REPORT_GRID_POINTS)
        .map(|i| t_end * i as f64 / (REPORT_GRID_POINTS - 1) as f64)
        .collect();
    let band = bootstrap_band(&data, &fit, b_count, 1.0 - level, &grid, seed)?;
    write_json_atomic(out, &band)?;
    if band.failure_rate_exceeded() {
        eprintln!(
            "warning: {} of {} bootstrap refits failed; band uses the surviving {}",
            band.failures, band.replicates, band.replicates_used
        );
    }
    println!(
        "{}% band on {} points from {} bootstrap refits ({} failed)",
        level * 100.0,
        band.grid.len(),
        band.replicates_used,
        band.failures
    );
    println!("band written to {}", out.display());
    Ok(())
}

fn cmd_basis_dump(
    domain_end: f64,
    basis_intervals: usize,
    degree: usize,
    m: usize,
    out: &Path,
) -> Result<()> {
    let basis = make_basis(domain_end, basis_intervals, degree)?;
    fs::create_dir_all(out)
        .map_err(|e| Error::io(format!("creating directory {}", out.display()), e))?;

    let mut knots = String::from("knot\n");
    for &k in basis.knots() {
        let _ = writeln!(knots, "{}", fmt_float(k));
    }
    write_atomic(&out.join("knots.csv"), &knots)?;

    let q = basis.n_basis();
    let mut values = String::from("t");
    for k in 0..q {
        let _ = write!(values, ",B{k}");
    }
    values.push('\n');
    for i in 0..REPORT_GRID_POINTS {
        let t = domain_end * i as f64 / (REPORT_GRID_POINTS - 1) as f64;
        let row = eval_basis(&basis, t, 0)?;
        let _ = write!(values, "{}", fmt_float(t));
        for k in 0..q {
            let _ = write!(values, ",{}", fmt_float(row[k]));
        }
        values.push('\n');
    }
    write_atomic(&out.join("basis_values.csv"), &values)?;

    let v = penalty_gram(&basis, m)?;
    let mut gram = String::new();
    for i in 0..q {
        for j in 0..q {
            if j > 0 {
                gram.push(',');
            }
            let _ = write!(gram, "{}", fmt_float(v[(i, j)]));
        }
        gram.push('\n');
    }
    write_atomic(&out.join("penalty_gram.csv"), &gram)?;

    println!(
        "wrote knots.csv, basis_values.csv, penalty_gram.csv to {}",
        out.display()
    );
    Ok(())
}

/// Reads a wide curves CSV (first row = sampling grid, later rows = one
/// curve each) and a one-column responses CSV, affinely rescales the grid
/// onto `[0, T]`, and returns the centered dataset.
pub fn ingest_dataset(
    curves_path: &Path,
    responses_path: &Path,
    domain_end: f64,
) -> Result<FunctionalDataset> {
    if !(domain_end > 0.0 && domain_end.is_finite()) {
        return Err(Error::invalid(format!(
            "domain end must be positive and finite, got {domain_end}"
        )));
    }
    let curve_rows = read_csv_rows(curves_path)?;
    if curve_rows.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: need a grid row plus at least one curve row, found {} rows",
            curves_path.display(),
            curve_rows.len()
        )));
    }
    let width = curve_rows[0].1.len();
    if width < 2 {
        return Err(Error::invalid(format!(
            "{}: time grid needs at least 2 points, found {width}",
            curves_path.display()
        )));
    }
    for (line, cells) in &curve_rows {
        if cells.len() != width {
            return Err(Error::CsvFormat {
                path: curves_path.display().to_string(),
                row: *line,
                col: cells.len().min(width) + 1,
                message: format!("expected {} cells, found {}", width, cells.len()),
            });
        }
    }
    let raw_grid = &curve_rows[0].1;
    for j in 1..width {
        if raw_grid[j] <= raw_grid[j - 1] {
            return Err(Error::CsvFormat {
                path: curves_path.display().to_string(),
                row: curve_rows[0].0,
                col: j + 1,
                message: format!(
                    "time grid must be strictly increasing ({} after {})",
                    raw_grid[j],
                    raw_grid[j - 1]
                ),
            });
        }
    }
    let span = raw_grid[width - 1] - raw_grid[0];
    let grid: Vec<f64> = raw_grid
        .iter()
        .map(|&t| (t - raw_grid[0]) / span * domain_end)
        .collect();

    let n = curve_rows.len() - 1;
    let curves = DMatrix::from_fn(n, width, |i, j| curve_rows[i + 1].1[j]);

    let response_rows = read_csv_rows(responses_path)?;
    for (line, cells) in &response_rows {
        if cells.len() != 1 {
            return Err(Error::CsvFormat {
                path: responses_path.display().to_string(),
                row: *line,
                col: 2,
                message: format!("expected a single response per row, found {} cells", cells.len()),
            });
        }
    }
    if response_rows.len() != n {
        return Err(Error::invalid(format!(
            "{} has {} responses but {} has {} curves",
            responses_path.display(),
            response_rows.len(),
            curves_path.display(),
            n
        )));
    }
    let responses = DVector::from_fn(n, |i, _| response_rows[i].1[0]);

    let data = FunctionalDataset::new(grid, curves, responses)?;
    center(&data)
}

/// Parses a headerless numeric CSV into `(1-based line number, cells)`
/// rows, skipping blank lines.
fn read_csv_rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = Vec::new();
        for (col, cell) in line.split(',').enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::CsvFormat {
                path: path.display().to_string(),
                row: idx + 1,
                col: col + 1,
                message: format!("not a number: {:?}", cell.trim()),
            })?;
            cells.push(value);
        }
        rows.push((idx + 1, cells));
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "{}: file contains no data rows",
            path.display()
        )));
    }
    Ok(rows)
}
