//! B-spline bases on equally spaced knots: evaluation, derivatives, and
//! derivative Gram (roughness) matrices.
//!
//! A basis is built from `M` subintervals of `[0, T]` and a degree `d`,
//! giving `M + d` basis functions under the clamped end-knot convention
//! (boundary knots repeated `d + 1` times). Each basis function is positive
//! on at most `d + 1` adjacent subintervals.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// A clamped B-spline basis on `[0, T]` with equally spaced knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    domain_start: f64,
    domain_end: f64,
    num_intervals: usize,
    degree: usize,
    /// The `M + 1` distinct knots `t_0 < … < t_M`.
    knots: Vec<f64>,
    /// Clamped knot vector: boundary knots repeated `d + 1` times,
    /// length `M + 2d + 1`.
    extended: Vec<f64>,
}

impl BSplineBasis {
    pub fn domain_start(&self) -> f64 {
        self.domain_start
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    /// Number of subintervals `M`.
    pub fn num_intervals(&self) -> usize {
        self.num_intervals
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The `M + 1` distinct knot locations.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `M + d`.
    pub fn n_basis(&self) -> usize {
        self.num_intervals + self.degree
    }

    /// Index of the knot span containing `t`: the unique `mu` with
    /// `extended[mu] <= t < extended[mu + 1]`, except at `t = T`, which
    /// resolves to the last nonempty span (right-closed last interval).
    fn span_index(&self, t: f64) -> usize {
        let d = self.degree;
        let last = self.num_intervals + d - 1;
        if t >= self.domain_end {
            return last;
        }
        // Knots are equally spaced, so the span is arithmetic.
        let h = (self.domain_end - self.domain_start) / self.num_intervals as f64;
        let mut j = ((t - self.domain_start) / h) as usize;
        if j >= self.num_intervals {
            j = self.num_intervals - 1;
        }
        // Guard against rounding at interval edges.
        while j > 0 && t < self.extended[d + j] {
            j -= 1;
        }
        while j + 1 < self.num_intervals && t >= self.extended[d + j + 1] {
            j += 1;
        }
        d + j
    }

    /// Derivatives of order `0..=order` for the `d + 1` basis functions that
    /// are nonzero on the span `mu`. Returns a `(order + 1) x (d + 1)` table;
    /// row `k`, column `j` holds the `k`-th derivative of basis `mu - d + j`.
    ///
    /// This is the standard triangular scheme over the de Boor recursion,
    /// specialised to a single span.
    fn ders_on_span(&self, mu: usize, t: f64, order: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.extended;
        let n = order.min(p);

        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        if n == 0 {
            return ders;
        }

        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut der = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    der = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                    der += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    der += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = der;
                std::mem::swap(&mut s1, &mut s2);
            }
        }

        let mut factor = p as f64;
        for k in 1..=n {
            for j in 0..=p {
                ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    fn check_point(&self, t: f64) -> Result<()> {
        if !(self.domain_start..=self.domain_end).contains(&t) {
            return Err(Error::invalid(format!(
                "evaluation point {t} outside domain [{}, {}]",
                self.domain_start, self.domain_end
            )));
        }
        Ok(())
    }

    fn check_order(&self, m: usize) -> Result<()> {
        if m > self.degree {
            return Err(Error::invalid(format!(
                "derivative order {m} exceeds degree {}",
                self.degree
            )));
        }
        Ok(())
    }
}

/// Build a clamped B-spline basis with `M + 1` equally spaced knots on
/// `[0, T]` and `M + d` basis functions.
pub fn make_basis(domain_end: f64, num_intervals: usize, degree: usize) -> Result<BSplineBasis> {
    if !(domain_end > 0.0) {
        return Err(Error::invalid(format!(
            "domain end must be positive, got {domain_end}"
        )));
    }
    if num_intervals == 0 {
        return Err(Error::invalid("number of subintervals must be at least 1"));
    }
    let m = num_intervals;
    let d = degree;
    let knots: Vec<f64> = (0..=m)
        .map(|j| domain_end * j as f64 / m as f64)
        .collect();
    let mut extended = Vec::with_capacity(m + 2 * d + 1);
    extended.extend(std::iter::repeat(0.0).take(d + 1));
    extended.extend_from_slice(&knots[1..m]);
    extended.extend(std::iter::repeat(domain_end).take(d + 1));
    Ok(BSplineBasis {
        domain_start: 0.0,
        domain_end,
        num_intervals: m,
        degree: d,
        knots,
        extended,
    })
}

/// Evaluate the `m`-th derivatives of all basis functions at `t`.
///
/// At most `d + 1` entries of the result are nonzero.
pub fn eval_basis(basis: &BSplineBasis, t: f64, m: usize) -> Result<DVector<f64>> {
    basis.check_point(t)?;
    basis.check_order(m)?;
    let mu = basis.span_index(t);
    let ders = basis.ders_on_span(mu, t, m);
    let mut out = DVector::zeros(basis.n_basis());
    let first = mu - basis.degree;
    for (j, &v) in ders[m].iter().enumerate() {
        out[first + j] = v;
    }
    Ok(out)
}

/// A spline expressed in a [`BSplineBasis`].
#[derive(Debug, Clone)]
pub struct SplineFunction {
    basis: BSplineBasis,
    coefficients: DVector<f64>,
}

impl SplineFunction {
    pub fn new(basis: BSplineBasis, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != basis.n_basis() {
            return Err(Error::invalid(format!(
                "coefficient length {} does not match basis size {}",
                coefficients.len(),
                basis.n_basis()
            )));
        }
        Ok(SplineFunction {
            basis,
            coefficients,
        })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }
}

/// Evaluate a spline at `t` (derivative order 0).
pub fn eval_spline(f: &SplineFunction, t: f64) -> Result<f64> {
    let basis = &f.basis;
    basis.check_point(t)?;
    let mu = basis.span_index(t);
    let ders = basis.ders_on_span(mu, t, 0);
    let first = mu - basis.degree;
    let mut acc = 0.0;
    for (j, &v) in ders[0].iter().enumerate() {
        acc += f.coefficients[first + j] * v;
    }
    Ok(acc)
}

/// Gram matrix of `m`-th derivatives, `v_ij = ∫ B_i^(m)(t) B_j^(m)(t) dt`.
///
/// Integration is per-subinterval Gauss–Legendre with `d - m + 1` nodes,
/// exact for the piecewise-polynomial integrand of degree `2(d - m)`.
pub fn penalty_gram(basis: &BSplineBasis, m: usize) -> Result<DMatrix<f64>> {
    basis.check_order(m)?;
    let q = basis.n_basis();
    let d = basis.degree;
    let nodes = gauss_legendre(d - m + 1);
    let mut v = DMatrix::zeros(q, q);
    for seg in 0..basis.num_intervals {
        let (a, b) = (basis.knots[seg], basis.knots[seg + 1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mu = d + seg;
        for &(x, w) in &nodes {
            let t = mid + half * x;
            let ders = basis.ders_on_span(mu, t, m);
            let row = &ders[m];
            let first = mu - d;
            let scale = w * half;
            for i in 0..=d {
                let vi = row[i];
                if vi == 0.0 {
                    continue;
                }
                for j in 0..=d {
                    v[(first + i, first + j)] += scale * vi * row[j];
                }
            }
        }
    }
    // Enforce exact symmetry against rounding in the accumulation order.
    for i in 0..q {
        for j in (i + 1)..q {
            let s = 0.5 * (v[(i, j)] + v[(j, i)]);
            v[(i, j)] = s;
            v[(j, i)] = s;
        }
    }
    Ok(v)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre recurrence.
pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((x, w));
    }
    rule
}

/// Legendre polynomial `P_n(x)` and its derivative via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
