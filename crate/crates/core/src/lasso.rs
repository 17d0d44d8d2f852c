//! Weighted-ℓ₁ penalised least squares by cyclic coordinate descent.
//!
//! Solves `min_b ‖y − Xb‖² + Σ_k w_k |b_k|` with per-coordinate weights.
//! A weight of `+∞` freezes the coordinate at exactly zero. Iteration works
//! on the Gram form (`XᵀX`, `Xᵀy`), so callers that already hold a Gram
//! matrix avoid materialising a stacked design.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Default KKT tolerance on the subgradient residual.
pub const DEFAULT_KKT_TOL: f64 = 1e-8;
/// Default cap on coordinate-descent sweeps.
pub const DEFAULT_MAX_PASSES: usize = 100_000;
/// A sweep whose largest coefficient move is below this is considered
/// stationary and triggers the KKT check.
const SWEEP_TOL: f64 = 1e-10;

/// One weighted-lasso instance.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    /// `r × q` design matrix.
    pub design: DMatrix<f64>,
    /// Length-`r` target.
    pub target: DVector<f64>,
    /// Length-`q` nonnegative weights; `+∞` freezes a coordinate at zero.
    pub penalty_weights: DVector<f64>,
    /// KKT tolerance.
    pub tolerance: f64,
    /// Sweep cap.
    pub max_passes: usize,
}

impl LassoProblem {
    pub fn new(design: DMatrix<f64>, target: DVector<f64>, penalty_weights: DVector<f64>) -> Self {
        LassoProblem {
            design,
            target,
            penalty_weights,
            tolerance: DEFAULT_KKT_TOL,
            max_passes: DEFAULT_MAX_PASSES,
        }
    }
}

/// Minimise `‖target − design·b‖² + Σ_k w_k |b_k|`.
///
/// Returned zeros are exact; frozen coordinates stay exactly zero. The
/// solution satisfies the KKT conditions at the problem tolerance.
pub fn solve_weighted_lasso(p: &LassoProblem) -> Result<DVector<f64>> {
    let (r, q) = p.design.shape();
    if p.target.len() != r {
        return Err(Error::invalid(format!(
            "target length {} does not match {} design rows",
            p.target.len(),
            r
        )));
    }
    if p.penalty_weights.len() != q {
        return Err(Error::invalid(format!(
            "weight length {} does not match {} design columns",
            p.penalty_weights.len(),
            q
        )));
    }
    let gram = p.design.transpose() * &p.design;
    let xty = p.design.transpose() * &p.target;
    solve_weighted_lasso_gram(
        &gram,
        &xty,
        &p.penalty_weights,
        p.tolerance,
        p.max_passes,
        None,
    )
}

/// Gram-form solver: same minimiser as [`solve_weighted_lasso`] given
/// `gram = XᵀX` and `xty = Xᵀy`; `initial` warm-starts the iteration.
pub fn solve_weighted_lasso_gram(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    weights: &DVector<f64>,
    tolerance: f64,
    max_passes: usize,
    initial: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let q = gram.nrows();
    if gram.ncols() != q || xty.len() != q || weights.len() != q {
        return Err(Error::invalid("gram/xty/weights dimensions disagree"));
    }
    for k in 0..q {
        let w = weights[k];
        if w.is_nan() || (w.is_finite() && w < 0.0) {
            return Err(Error::invalid(format!("weight {w} at index {k}")));
        }
        let gkk = gram[(k, k)];
        if gkk < 0.0 {
            return Err(Error::invalid(format!(
                "gram diagonal {gkk} at index {k} is negative"
            )));
        }
        if gkk == 0.0 && w == 0.0 {
            return Err(Error::invalid(format!(
                "zero design column at index {k} with zero weight"
            )));
        }
    }

    let mut b = match initial {
        Some(b0) if b0.len() == q => b0.clone(),
        Some(b0) => {
            return Err(Error::invalid(format!(
                "warm start length {} does not match {q} coordinates",
                b0.len()
            )))
        }
        None => DVector::zeros(q),
    };
    for k in 0..q {
        if !weights[k].is_finite() {
            b[k] = 0.0;
        }
    }

    // s tracks gram·b across coordinate moves; refreshed periodically and
    // before every KKT check to shed accumulated rounding.
    let mut s = gram * &b;
    let mut pass = 0usize;
    loop {
        pass += 1;
        let mut max_delta = 0.0f64;
        for k in 0..q {
            let w = weights[k];
            if !w.is_finite() {
                continue;
            }
            let gkk = gram[(k, k)];
            let old = b[k];
            let z = xty[k] - s[k] + gkk * old;
            let new = if gkk > 0.0 {
                soft_threshold(z, 0.5 * w) / gkk
            } else {
                0.0
            };
            if new != old {
                let delta = new - old;
                s.axpy(delta, &gram.column(k).into_owned(), 1.0);
                b[k] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if pass % 64 == 0 {
            s = gram * &b;
        }
        if max_delta <= SWEEP_TOL {
            s = gram * &b;
            let violation = kkt_violation(&s, xty, weights, &b);
            if violation <= tolerance {
                return Ok(b);
            }
        }
        if pass >= max_passes {
            s = gram * &b;
            let violation = kkt_violation(&s, xty, weights, &b);
            return Err(Error::NonConvergence {
                passes: pass,
                violation,
            });
        }
    }
}

/// Largest KKT excess: for `b_k ≠ 0` the subgradient residual
/// `|2(Xᵀy − XᵀXb)_k − w_k·sign(b_k)|`, for `b_k = 0` the amount by which
/// `|2(Xᵀy − XᵀXb)_k|` exceeds `w_k`.
fn kkt_violation(s: &DVector<f64>, xty: &DVector<f64>, weights: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..b.len() {
        let w = weights[k];
        let g = 2.0 * (xty[k] - s[k]);
        let excess = if b[k] != 0.0 {
            (g - w * b[k].signum()).abs()
        } else if w.is_finite() {
            (g.abs() - w).max(0.0)
        } else {
            0.0
        };
        worst = worst.max(excess);
    }
    worst
}

fn soft_threshold(z: f64, a: f64) -> f64 {
    if z > a {
        z - a
    } else if z < -a {
        z + a
    } else {
        0.0
    }
}
