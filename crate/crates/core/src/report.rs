//! Machine-readable fit reports and file emission.
//!
//! JSON output writes every float with 17 significant digits so parsed
//! values are bit-identical to the originals; files are written atomically
//! (temp file in the target directory, then rename).

use crate::bspline::{eval_spline, make_basis, SplineFunction};
use crate::error::{Error, Result};
use crate::estimator::{NgbConfig, NgbFit};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Points in an emitted coefficient-function grid.
pub const REPORT_GRID_POINTS: usize = 201;

/// Serializable summary of one fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub delta_hat: f64,
    #[serde(rename = "J0")]
    pub j0: usize,
    pub kappa: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub m: usize,
    /// Subinterval count of the basis.
    #[serde(rename = "M")]
    pub basis_intervals: usize,
    /// Basis degree.
    #[serde(rename = "d")]
    pub degree: usize,
    /// Serialized as `null` when the zero-residual `-∞` sentinel is hit.
    #[serde(deserialize_with = "bic_from_json")]
    pub bic: f64,
    pub df: f64,
    /// Spline coefficients, length `M + d`.
    pub coefficients: Vec<f64>,
    /// Distinct knots, length `M + 1`.
    pub knots: Vec<f64>,
    /// `(t, β̂(t))` pairs on a uniform 201-point grid.
    pub beta_grid: Vec<(f64, f64)>,
    pub runtime_ms: u64,
    pub seed: Option<u64>,
}

impl FitReport {
    pub fn new(fit: &NgbFit, runtime_ms: u64, seed: Option<u64>) -> Result<FitReport> {
        let basis = fit.beta_hat.basis();
        let domain_end = basis.domain_end();
        let beta_grid = (0..REPORT_GRID_POINTS)
            .map(|i| {
                let t = domain_end * i as f64 / (REPORT_GRID_POINTS - 1) as f64;
                Ok((t, eval_spline(&fit.beta_hat, t)?))
            })
            .collect::<Result<_>>()?;
        Ok(FitReport {
            delta_hat: fit.delta_hat,
            j0: fit.j0,
            kappa: fit.kappa(),
            lambda: fit.lambda(),
            gamma: fit.config.gamma,
            m: fit.config.m,
            basis_intervals: basis.num_intervals(),
            degree: basis.degree(),
            bic: fit.bic,
            df: fit.df,
            coefficients: fit.b_hat.iter().copied().collect(),
            knots: basis.knots().to_vec(),
            beta_grid,
            runtime_ms,
            seed,
        })
    }

    /// Rebuild the fitted model this report describes, for follow-up
    /// computations such as bootstrap refits.
    pub fn to_fit(&self) -> Result<NgbFit> {
        let domain_end = *self
            .knots
            .last()
            .ok_or_else(|| Error::invalid("report has no knots"))?;
        let basis = make_basis(domain_end, self.basis_intervals, self.degree)?;
        if basis.knots().len() != self.knots.len() {
            return Err(Error::invalid(format!(
                "report knots (len {}) do not match an M={} basis",
                self.knots.len(),
                self.basis_intervals
            )));
        }
        for (a, b) in basis.knots().iter().zip(&self.knots) {
            if (a - b).abs() > 1e-12 * domain_end.max(1.0) {
                return Err(Error::invalid(
                    "report knots are not equally spaced over the stated domain",
                ));
            }
        }
        let b_hat = DVector::from_vec(self.coefficients.clone());
        let beta_hat = SplineFunction::new(basis, b_hat.clone())?;
        let mut config = NgbConfig::new(self.kappa, self.lambda);
        config.gamma = self.gamma;
        config.m = self.m;
        Ok(NgbFit {
            b_hat,
            beta_hat,
            j0: self.j0,
            delta_hat: self.delta_hat,
            df: self.df,
            bic: self.bic,
            bic_zero_rss: false,
            config,
            outer_iters: 0,
            objective_trace: Vec::new(),
        })
    }

    /// The `beta_grid` as a two-column CSV for plotting.
    pub fn beta_grid_csv(&self) -> String {
        let mut out = String::from("t,beta_hat\n");
        for &(t, v) in &self.beta_grid {
            out.push_str(&format!("{},{}\n", fmt_float(t), fmt_float(v)));
        }
        out
    }
}

/// Accepts either a number or the `null` that serde_json emits for
/// non-finite floats, mapping `null` back to the `-∞` sentinel.
fn bic_from_json<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

/// Render a float with 17 significant digits, enough for a bit-faithful
/// round trip.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON formatter writing floats via [`fmt_float`].
struct ReportFormatter {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for ReportFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_float(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn end_object_key<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_object_key(writer)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

/// Serialize `value` as pretty JSON with 17-significant-digit floats.
pub fn to_report_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let formatter = ReportFormatter {
        inner: serde_json::ser::PrettyFormatter::new(),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, formatter);
    value.serialize(&mut ser)?;
    let mut out = String::from_utf8(buf).expect("serde_json emits UTF-8");
    out.push('\n');
    Ok(out)
}

/// Write `content` to `path` atomically: a temp file in the same directory,
/// flushed, then renamed over the target.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("output path {} has no file name", path.display())))?;
    let tmp = match dir {
        Some(d) => d.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id())),
        None => std::path::PathBuf::from(format!(
            ".{}.tmp{}",
            file_name.to_string_lossy(),
            std::process::id()
        )),
    };
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(format!("writing {}", path.display()), e)
    })
}

/// Serialize `value` and write it atomically to `path`.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_report_json(value)?)
}
