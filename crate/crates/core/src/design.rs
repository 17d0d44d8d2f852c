//! Dataset centering and the matrices consumed by the penalised fit: the
//! curve–basis inner-product matrix `U`, the derivative Gram `V`, and a
//! symmetric factor `W` with `WᵀW = V`.

use crate::bspline::{eval_basis, penalty_gram, BSplineBasis};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Predictor curves sampled on a shared time grid, paired with scalar
/// responses.
#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    /// Shared grid `0 = s_0 < … < s_{G-1} = T`.
    grid: Vec<f64>,
    /// `n × G` matrix; row `i` samples the curve `X_i` on the grid.
    curves: DMatrix<f64>,
    /// Length-`n` response vector.
    responses: DVector<f64>,
    centered: bool,
}

impl FunctionalDataset {
    /// Assemble a dataset, validating the grid and the shape contract.
    pub fn new(grid: Vec<f64>, curves: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::invalid("grid needs at least 2 points"));
        }
        if grid[0].abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "grid must start at 0, got {}",
                grid[0]
            )));
        }
        if !grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        if curves.ncols() != grid.len() {
            return Err(Error::invalid(format!(
                "curves have {} columns but grid has {} points",
                curves.ncols(),
                grid.len()
            )));
        }
        if curves.nrows() != responses.len() {
            return Err(Error::invalid(format!(
                "{} curves but {} responses",
                curves.nrows(),
                responses.len()
            )));
        }
        if curves.nrows() == 0 {
            return Err(Error::invalid("dataset needs at least one curve"));
        }
        Ok(FunctionalDataset {
            grid,
            curves,
            responses,
            centered: false,
        })
    }

    /// Number of curve/response pairs.
    pub fn n(&self) -> usize {
        self.curves.nrows()
    }

    /// Number of grid points `G`.
    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    /// End of the observation window, `T = s_{G-1}`.
    pub fn domain_end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn centered(&self) -> bool {
        self.centered
    }
}

/// Remove the pointwise mean curve and the mean response.
pub fn center(data: &FunctionalDataset) -> Result<FunctionalDataset> {
    let n = data.n();
    if n < 2 {
        return Err(Error::invalid("centering needs at least 2 observations"));
    }
    let mut curves = data.curves.clone();
    for j in 0..curves.ncols() {
        let mean = curves.column(j).sum() / n as f64;
        for i in 0..n {
            curves[(i, j)] -= mean;
        }
    }
    let y_mean = data.responses.sum() / n as f64;
    let responses = data.responses.map(|y| y - y_mean);
    Ok(FunctionalDataset {
        grid: data.grid.clone(),
        curves,
        responses,
        centered: true,
    })
}

/// Composite-trapezoid weights for a (possibly non-uniform) grid.
fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let g = grid.len();
    let mut w = vec![0.0; g];
    for j in 0..g - 1 {
        let h = 0.5 * (grid[j + 1] - grid[j]);
        w[j] += h;
        w[j + 1] += h;
    }
    w
}

/// The `n × (M+d)` matrix of inner products `u_ik = ∫ X_i(t) B_k(t) dt`,
/// computed by the composite trapezoid rule on the observation grid.
pub fn predictor_inner_products(
    data: &FunctionalDataset,
    basis: &BSplineBasis,
) -> Result<DMatrix<f64>> {
    let t_end = basis.domain_end();
    let tol = 1e-8 * t_end.max(1.0);
    if (data.grid[0] - basis.domain_start()).abs() > tol
        || (data.domain_end() - t_end).abs() > tol
    {
        return Err(Error::invalid(format!(
            "grid [{}, {}] does not span basis domain [{}, {}]",
            data.grid[0],
            data.domain_end(),
            basis.domain_start(),
            t_end
        )));
    }
    let g = data.n_points();
    let q = basis.n_basis();
    let w = trapezoid_weights(&data.grid);
    // Rows of `weighted` hold w_j · B(s_j); U = curves · weighted.
    let mut weighted = DMatrix::zeros(g, q);
    for j in 0..g {
        let t = data.grid[j].clamp(basis.domain_start(), t_end);
        let values = eval_basis(basis, t, 0)?;
        for k in 0..q {
            weighted[(j, k)] = w[j] * values[k];
        }
    }
    Ok(&data.curves * weighted)
}

/// Symmetric positive-semidefinite square root `W = QΛ^{1/2}Qᵀ` of a
/// symmetric PSD matrix, with slightly negative eigenvalues clamped to zero.
pub fn penalty_root(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != v.ncols() {
        return Err(Error::invalid(format!(
            "penalty matrix must be square, got {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    let q = v.nrows();
    let scale = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    for i in 0..q {
        for j in (i + 1)..q {
            if (v[(i, j)] - v[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!(
                    "penalty matrix asymmetric at ({i},{j}): {} vs {}",
                    v[(i, j)],
                    v[(j, i)]
                )));
            }
        }
    }
    let sym = 0.5 * (v + v.transpose());
    let eig = sym.symmetric_eigen();
    let neg_tol = 1e-8 * scale;
    if let Some(min) = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(None::<f64>, |acc, l| Some(acc.map_or(l, |a| a.min(l))))
    {
        if min < -neg_tol {
            return Err(Error::invalid(format!(
                "penalty matrix is not positive semidefinite (eigenvalue {min})"
            )));
        }
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut w = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    for i in 0..q {
        for j in (i + 1)..q {
            let s = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = s;
            w[(j, i)] = s;
        }
    }
    Ok(w)
}

/// The matrices a penalised fit consumes: `U` (curve–basis inner products),
/// `V` (derivative Gram of order `m`), and `W` with `WᵀW = V`.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    basis: BSplineBasis,
    /// Cached `UᵀU`, reused across fits on the same data.
    utu: DMatrix<f64>,
    /// Cached `UᵀY`-ready transpose is not stored; only the Gram is hot.
    penalty_order: usize,
}

impl DesignSystem {
    /// Build the design for `data` under `basis` with roughness order `m`.
    pub fn new(data: &FunctionalDataset, basis: BSplineBasis, m: usize) -> Result<Self> {
        let u = predictor_inner_products(data, &basis)?;
        let v = penalty_gram(&basis, m)?;
        Self::assemble(u, v, basis, m)
    }

    /// Assemble from precomputed matrices (fixture entry point).
    pub fn from_parts(u: DMatrix<f64>, v: DMatrix<f64>, basis: BSplineBasis) -> Result<Self> {
        Self::assemble(u, v, basis, 0)
    }

    fn assemble(
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        basis: BSplineBasis,
        penalty_order: usize,
    ) -> Result<Self> {
        let q = basis.n_basis();
        if u.ncols() != q || v.nrows() != q || v.ncols() != q {
            return Err(Error::invalid(format!(
                "design dimensions (U: {}x{}, V: {}x{}) do not match basis size {q}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        let w = penalty_root(&v)?;
        let scale = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let recon_tol = (1e-10f64).max(1e-12 * scale * q as f64);
        let residual = (w.transpose() * &w) - &v;
        let max_err = residual.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if max_err > recon_tol {
            return Err(Error::SingularSystem(format!(
                "penalty factorization residual {max_err} exceeds {recon_tol}"
            )));
        }
        let utu = u.transpose() * &u;
        Ok(DesignSystem {
            u,
            v,
            w,
            basis,
            utu,
            penalty_order,
        })
    }

    /// Number of observations (rows of `U`).
    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    /// Number of basis coefficients (columns of `U`).
    pub fn n_basis(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn utu(&self) -> &DMatrix<f64> {
        &self.utu
    }

    pub fn penalty_order(&self) -> usize {
        self.penalty_order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::make_basis;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform_grid(g: usize, t_end: f64) -> Vec<f64> {
        (0..g).map(|j| t_end * j as f64 / (g - 1) as f64).collect()
    }

    fn random_dataset(n: usize, g: usize, seed: u64) -> FunctionalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = uniform_grid(g, 1.0);
        let curves = DMatrix::from_fn(n, g, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let responses = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        FunctionalDataset::new(grid, curves, responses).unwrap()
    }

    #[test]
    fn dataset_validation() {
        let grid = uniform_grid(5, 1.0);
        let ok = FunctionalDataset::new(
            grid.clone(),
            DMatrix::zeros(3, 5),
            DVector::zeros(3),
        );
        assert!(ok.is_ok());
        // Grid too short, not starting at zero, not increasing.
        assert!(FunctionalDataset::new(vec![0.0], DMatrix::zeros(1, 1), DVector::zeros(1)).is_err());
        assert!(FunctionalDataset::new(
            vec![0.5, 1.0],
            DMatrix::zeros(1, 2),
            DVector::zeros(1)
        )
        .is_err());
        assert!(FunctionalDataset::new(
            vec![0.0, 0.6, 0.4, 1.0],
            DMatrix::zeros(1, 4),
            DVector::zeros(1)
        )
        .is_err());
        // Shape mismatches.
        assert!(FunctionalDataset::new(grid.clone(), DMatrix::zeros(3, 4), DVector::zeros(3)).is_err());
        assert!(FunctionalDataset::new(grid, DMatrix::zeros(3, 5), DVector::zeros(2)).is_err());
    }

    #[test]
    fn centering_removes_means() {
        let grid = uniform_grid(4, 1.0);
        let curves = DMatrix::from_row_slice(3, 4, &[
            1.0, 2.0, 3.0, 4.0, //
            1.0, 2.0, 3.0, 4.0, //
            1.0, 2.0, 3.0, 4.0,
        ]);
        let responses = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let data = FunctionalDataset::new(grid, curves, responses).unwrap();
        let c = center(&data).unwrap();
        assert!(c.centered());
        // Constant-across-curves columns vanish.
        assert!(c.curves().iter().all(|x| x.abs() <= 1e-14));
        assert_eq!(c.responses().as_slice(), &[-1.0, 0.0, 1.0]);

        // Idempotence.
        let cc = center(&c).unwrap();
        for (a, b) in cc.curves().iter().zip(c.curves().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        for (a, b) in cc.responses().iter().zip(c.responses().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }

        // Random data: column means and response mean vanish.
        let c = center(&random_dataset(20, 11, 5)).unwrap();
        for j in 0..11 {
            assert!(c.curves().column(j).sum().abs() / 20.0 <= 1e-12);
        }
        assert!(c.responses().sum().abs() / 20.0 <= 1e-12);
    }

    #[test]
    fn centering_needs_two_observations() {
        let data = FunctionalDataset::new(
            uniform_grid(3, 1.0),
            DMatrix::zeros(1, 3),
            DVector::zeros(1),
        )
        .unwrap();
        assert!(center(&data).is_err());
    }

    #[test]
    fn inner_products_of_constant_curves() {
        // X ≡ 1: the basis functions sum to 1, so each row of U sums to T
        // exactly (the trapezoid rule integrates a constant exactly).
        let basis = make_basis(1.0, 10, 3).unwrap();
        let data = FunctionalDataset::new(
            uniform_grid(201, 1.0),
            DMatrix::from_element(2, 201, 1.0),
            DVector::zeros(2),
        )
        .unwrap();
        let u = predictor_inner_products(&data, &basis).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(u.row(i).sum(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn inner_products_piecewise_constant_basis() {
        // d=0, X ≡ 1: each integral is T/M up to the trapezoid's O(h) error
        // at the indicator jumps (h = grid step).
        let basis = make_basis(1.0, 4, 0).unwrap();
        let g = 1001;
        let h = 1.0 / (g as f64 - 1.0);
        let data = FunctionalDataset::new(
            uniform_grid(g, 1.0),
            DMatrix::from_element(1, g, 1.0),
            DVector::zeros(1),
        )
        .unwrap();
        let u = predictor_inner_products(&data, &basis).unwrap();
        for k in 0..4 {
            assert!(
                (u[(0, k)] - 0.25).abs() <= h,
                "u[{k}]={} not within {h} of 0.25",
                u[(0, k)]
            );
        }
    }

    #[test]
    fn inner_products_match_fine_quadrature_oracle() {
        // Smooth curve on a 1001-point grid vs a 10⁵-point trapezoid oracle.
        let basis = make_basis(1.0, 5, 3).unwrap();
        let q = basis.n_basis();
        let x = |t: f64| (3.0 * t).sin() + 0.5 * (7.0 * t).cos();
        let g = 1001;
        let grid = uniform_grid(g, 1.0);
        let curves = DMatrix::from_fn(1, g, |_, j| x(grid[j]));
        let data =
            FunctionalDataset::new(grid, curves, DVector::zeros(1)).unwrap();
        let u = predictor_inner_products(&data, &basis).unwrap();

        let fine = 100_001usize;
        let mut oracle = vec![0.0; q];
        for j in 0..fine {
            let t = j as f64 / (fine - 1) as f64;
            let w = if j == 0 || j == fine - 1 { 0.5 } else { 1.0 } / (fine - 1) as f64;
            let b = eval_basis(&basis, t, 0).unwrap();
            for k in 0..q {
                oracle[k] += w * x(t) * b[k];
            }
        }
        for k in 0..q {
            assert!(
                (u[(0, k)] - oracle[k]).abs() <= 1e-6,
                "u[{k}]={} oracle={}",
                u[(0, k)],
                oracle[k]
            );
        }
    }

    #[test]
    fn inner_products_linear_in_curves() {
        let basis = make_basis(1.0, 8, 3).unwrap();
        let d1 = random_dataset(5, 101, 1);
        let d2 = random_dataset(5, 101, 2);
        let (a, b) = (0.7, -1.3);
        let mixed = FunctionalDataset::new(
            d1.grid().to_vec(),
            d1.curves() * a + d2.curves() * b,
            DVector::zeros(5),
        )
        .unwrap();
        let u1 = predictor_inner_products(&d1, &basis).unwrap();
        let u2 = predictor_inner_products(&d2, &basis).unwrap();
        let um = predictor_inner_products(&mixed, &basis).unwrap();
        let expect = u1 * a + u2 * b;
        for (x, y) in um.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn inner_products_reject_domain_mismatch() {
        let basis = make_basis(2.0, 4, 1).unwrap();
        let data = random_dataset(3, 51, 9); // grid spans [0,1], basis [0,2]
        assert!(predictor_inner_products(&data, &basis).is_err());
    }

    #[test]
    fn penalty_root_diagonal_and_scalar() {
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let w = penalty_root(&v).unwrap();
        assert_abs_diff_eq!(w[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[(1, 1)], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[(0, 1)], 0.0, epsilon = 1e-12);

        let w = penalty_root(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_abs_diff_eq!(w[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn penalty_root_reconstructs_rank_deficient_gram() {
        let basis = make_basis(1.0, 10, 3).unwrap();
        let v = crate::bspline::penalty_gram(&basis, 2).unwrap();
        let w = penalty_root(&v).unwrap();
        let recon = w.transpose() * &w;
        let max_err = (&recon - &v)
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        assert!(max_err <= 1e-10, "reconstruction error {max_err}");
        // Symmetric to 1e-12 and PSD.
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                assert!((w[(i, j)] - w[(j, i)]).abs() <= 1e-12);
            }
        }
        let eig = w.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l >= -1e-10));
    }

    #[test]
    fn penalty_root_quadratic_form_equivalence() {
        let basis = make_basis(1.0, 12, 3).unwrap();
        let v = crate::bspline::penalty_gram(&basis, 2).unwrap();
        let w = penalty_root(&v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let b = DVector::from_fn(v.nrows(), |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let quad = (b.transpose() * &v * &b)[(0, 0)];
            let via_w = (&w * &b).norm_squared();
            assert!(
                (quad - via_w).abs() <= 1e-9 * quad.abs().max(1.0),
                "bᵀVb={quad} ‖Wb‖²={via_w}"
            );
        }
    }

    #[test]
    fn penalty_root_rejects_bad_inputs() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(penalty_root(&asym).is_err());
        let negative = DMatrix::from_element(1, 1, -1.0);
        assert!(penalty_root(&negative).is_err());
        assert!(penalty_root(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn design_system_assembly() {
        let basis = make_basis(1.0, 10, 3).unwrap();
        let data = center(&random_dataset(30, 201, 21)).unwrap();
        let ds = DesignSystem::new(&data, basis, 2).unwrap();
        assert_eq!(ds.n(), 30);
        assert_eq!(ds.n_basis(), 13);
        let recon_err = (ds.w().transpose() * ds.w() - ds.v())
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        assert!(recon_err <= 1e-10);
        let gram_err = (ds.u().transpose() * ds.u() - ds.utu())
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        assert!(gram_err == 0.0);

        // Dimension mismatch between U/V and basis is rejected.
        let bad = DesignSystem::from_parts(
            DMatrix::zeros(5, 4),
            DMatrix::zeros(4, 4),
            make_basis(1.0, 10, 3).unwrap(),
        );
        assert!(bad.is_err());
    }
}
