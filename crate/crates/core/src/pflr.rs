//! Profile least-squares fit of the partial functional linear model
//!
//! ```text
//! Y = Zᵀβ + ∫ X(t) α(t) dt + ε,    α ≈ Σ_s b_s B_s
//! ```
//!
//! together with the leave-one-out cross-validation used to choose the
//! number of interior knots.

use nalgebra::{DMatrix, DVector};

use crate::bspline::{eval_spline, functional_design, BSplineBasis, FunctionalSample};
use crate::error::{Error, Result};
use crate::numerics::{SpdFactor, SymMatrix};

/// Leverages at or above `1 - LEVERAGE_EPS` use an explicit deletion refit.
const LEVERAGE_EPS: f64 = 1e-8;
/// Default cap on candidate interior-knot counts for cross-validation.
pub const MAX_KNOT_CANDIDATE: usize = 15;

/// Ground truth attached to simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: DVector<f64>,
    /// Slope function sampled on the data grid.
    pub alpha: Vec<f64>,
}

/// Observations `(X_i, Z_i, Y_i)`, `i = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    z: DMatrix<f64>,
    y: DVector<f64>,
    x: FunctionalSample,
    truth: Option<Truth>,
}

impl Dataset {
    pub fn new(z: DMatrix<f64>, y: DVector<f64>, x: FunctionalSample) -> Result<Self> {
        let n = y.len();
        if z.nrows() != n {
            return Err(Error::Dimension {
                context: "dataset Z rows",
                expected: n,
                actual: z.nrows(),
            });
        }
        if x.len() != n {
            return Err(Error::Dimension {
                context: "dataset curve count",
                expected: n,
                actual: x.len(),
            });
        }
        if z.ncols() == 0 {
            return Err(Error::Input(
                "dataset needs at least one scalar covariate".into(),
            ));
        }
        if n <= z.ncols() {
            return Err(Error::Input(format!(
                "dataset needs more observations ({n}) than covariates ({})",
                z.ncols()
            )));
        }
        if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        Ok(Self {
            z,
            y,
            x,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        if truth.beta.len() != self.p() {
            return Err(Error::Dimension {
                context: "true beta",
                expected: self.p(),
                actual: truth.beta.len(),
            });
        }
        if truth.alpha.len() != self.x.grid().len() {
            return Err(Error::Dimension {
                context: "true alpha",
                expected: self.x.grid().len(),
                actual: truth.alpha.len(),
            });
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &FunctionalSample {
        &self.x
    }

    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }

    /// Keeps the listed rows (in order). Truth is carried over.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let out = Self::new(
            self.z.select_rows(rows),
            DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            self.x.select_rows(rows),
        )?;
        Ok(Self {
            truth: self.truth.clone(),
            ..out
        })
    }

    fn without_row(&self, skip: usize) -> Result<Self> {
        let rows: Vec<usize> = (0..self.n()).filter(|&i| i != skip).collect();
        self.select_rows(&rows)
    }
}

/// The projection `A = B(BᵀB)⁻¹Bᵀ` onto the column space of the functional
/// design, held in factored form.
#[derive(Debug, Clone)]
pub struct SplineProjection {
    design: DMatrix<f64>,
    gram: SpdFactor,
}

impl SplineProjection {
    pub fn new(design: DMatrix<f64>) -> Result<Self> {
        let gram = SymMatrix::symmetrize(design.transpose() * &design);
        let gram = SpdFactor::new(&gram, "BᵀB")?;
        Ok(Self { design, gram })
    }

    pub fn from_basis(basis: &BSplineBasis, sample: &FunctionalSample) -> Result<Self> {
        Self::new(functional_design(basis, sample))
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// `(BᵀB)⁻¹Bᵀ M`: spline coefficients of the least-squares fit of `M`.
    pub fn coefficients(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.gram.solve(&(self.design.transpose() * m))
    }

    /// `A·M`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.design * self.coefficients(m)
    }

    /// `(I − A)·M`.
    pub fn residualize(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m - self.apply(m)
    }

    pub fn residualize_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let coef = self.gram.solve_vec(&(self.design.transpose() * v));
        v - &self.design * coef
    }

    /// The dense `n × n` matrix `A`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let bt = self.design.transpose();
        &self.design * self.gram.solve(&bt)
    }

    /// Diagonal of `A`.
    pub fn leverages(&self) -> Vec<f64> {
        let g_inv_bt = self.gram.solve(&self.design.transpose());
        (0..self.design.nrows())
            .map(|i| self.design.row(i).dot(&g_inv_bt.column(i).transpose()))
            .collect()
    }
}

/// Result of the profile least-squares fit.
#[derive(Debug, Clone)]
pub struct PflrFit {
    pub beta_hat: DVector<f64>,
    pub b_hat: DVector<f64>,
    pub basis: BSplineBasis,
    /// Mean squared residual.
    pub sigma2_hat: f64,
    /// `(1/n) Zᵀ(I−A)Z`, estimating `Var(Z − E(Z|X))`.
    pub sigma_hat: SymMatrix,
    /// `(1/n) ZᵀZ`, estimating `E(ZZᵀ)`.
    pub sigma1_hat: SymMatrix,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
    pub n: usize,
}

impl PflrFit {
    pub fn p(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn alpha_hat(&self, t: f64) -> Result<f64> {
        alpha_hat(self, t)
    }
}

fn check_size(n: usize, p: usize, kn: usize) -> Result<()> {
    if kn + p >= n {
        return Err(Error::Config(format!(
            "spline dimension k_n = {kn} with p = {p} covariates needs more than {} observations, have n = {n}",
            kn + p
        )));
    }
    Ok(())
}

/// Fits `β̂ = (Zᵀ(I−A)Z)⁻¹Zᵀ(I−A)Y` and `b̂ = (BᵀB)⁻¹Bᵀ(Y − Zβ̂)`.
pub fn fit(data: &Dataset, basis: &BSplineBasis) -> Result<PflrFit> {
    check_size(data.n(), data.p(), basis.dimension())?;
    let proj = SplineProjection::from_basis(basis, data.x())?;
    fit_with_projection(data, basis, &proj)
}

/// [`fit`] reusing an already factored projection built from `basis`.
pub fn fit_with_projection(
    data: &Dataset,
    basis: &BSplineBasis,
    proj: &SplineProjection,
) -> Result<PflrFit> {
    let n = data.n();
    check_size(n, data.p(), basis.dimension())?;
    if proj.design().ncols() != basis.dimension() || proj.design().nrows() != n {
        return Err(Error::Dimension {
            context: "projection design",
            expected: basis.dimension(),
            actual: proj.design().ncols(),
        });
    }
    let z = data.z();
    let y = data.y();
    let z_res = proj.residualize(z);
    let cross = SymMatrix::symmetrize(z.transpose() * &z_res);
    let cross_factor = SpdFactor::new(&cross, "Zᵀ(I−A)Z")?;
    let beta_hat = cross_factor.solve_vec(&(z_res.transpose() * y));

    let partial = y - z * &beta_hat;
    let b_hat = proj.coefficients(&DMatrix::from_column_slice(n, 1, partial.as_slice()));
    let b_hat = DVector::from_column_slice(b_hat.as_slice());
    let functional_part = proj.design() * &b_hat;
    let residuals = &partial - &functional_part;
    let fitted = y - &residuals;
    let sigma2_hat = residuals.norm_squared() / n as f64;

    let inv_n = 1.0 / n as f64;
    Ok(PflrFit {
        beta_hat,
        b_hat,
        basis: basis.clone(),
        sigma2_hat,
        sigma_hat: cross.scale(inv_n),
        sigma1_hat: SymMatrix::symmetrize(z.transpose() * z * inv_n),
        residuals,
        fitted,
        n,
    })
}

/// `α̂(t) = Σ_s b̂_s B_s(t)`.
pub fn alpha_hat(fit: &PflrFit, t: f64) -> Result<f64> {
    eval_spline(fit.b_hat.as_slice(), &fit.basis, t)
}

/// Smoother matrix `H` with `Ŷ = H·Y`:
/// `H = A + (I−A)Z(Zᵀ(I−A)Z)⁻¹Zᵀ(I−A)`.
pub fn hat_matrix(z: &DMatrix<f64>, design: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = design.nrows();
    if z.nrows() != n {
        return Err(Error::Dimension {
            context: "hat_matrix Z rows",
            expected: n,
            actual: z.nrows(),
        });
    }
    check_size(n, z.ncols(), design.ncols())?;
    let proj = SplineProjection::new(design.clone())?;
    let z_res = proj.residualize(z);
    let cross = SymMatrix::symmetrize(z.transpose() * &z_res);
    let cross_factor = SpdFactor::new(&cross, "Zᵀ(I−A)Z")?;
    Ok(proj.matrix() + &z_res * cross_factor.solve(&z_res.transpose()))
}

/// Diagonal of the smoother matrix without forming it.
fn smoother_leverages(z: &DMatrix<f64>, proj: &SplineProjection) -> Result<Vec<f64>> {
    let z_res = proj.residualize(z);
    let cross = SymMatrix::symmetrize(z.transpose() * &z_res);
    let cross_factor = SpdFactor::new(&cross, "Zᵀ(I−A)Z")?;
    let m_inv_rt = cross_factor.solve(&z_res.transpose());
    let spline_part = proj.leverages();
    Ok(spline_part
        .into_iter()
        .enumerate()
        .map(|(i, a)| a + z_res.row(i).dot(&m_inv_rt.column(i).transpose()))
        .collect())
}

/// Leave-one-out prediction of `Y_i` by refitting without observation `i`.
fn deletion_prediction(
    data: &Dataset,
    basis: &BSplineBasis,
    design: &DMatrix<f64>,
    i: usize,
) -> Result<f64> {
    let reduced = data.without_row(i)?;
    let f = fit(&reduced, basis)?;
    Ok((data.z().row(i) * &f.beta_hat)[0] + (design.row(i) * &f.b_hat)[0])
}

/// Leave-one-out cross-validation score
/// `(1/n) Σ ((Y_i − Ŷ_i)/(1 − H_ii))²`, or `+∞` when the basis is too large
/// for the data or the fit is singular.
pub fn loocv_score(data: &Dataset, basis: &BSplineBasis) -> f64 {
    let n = data.n();
    if basis.dimension() + data.p() >= n {
        return f64::INFINITY;
    }
    let Ok(proj) = SplineProjection::from_basis(basis, data.x()) else {
        return f64::INFINITY;
    };
    let Ok(f) = fit_with_projection(data, basis, &proj) else {
        return f64::INFINITY;
    };
    let Ok(lev) = smoother_leverages(data.z(), &proj) else {
        return f64::INFINITY;
    };
    let mut total = 0.0;
    for i in 0..n {
        let h = lev[i];
        let loo_resid = if h < 1.0 - LEVERAGE_EPS {
            f.residuals[i] / (1.0 - h)
        } else {
            match deletion_prediction(data, basis, proj.design(), i) {
                Ok(pred) => data.y()[i] - pred,
                Err(_) => return f64::INFINITY,
            }
        };
        total += loo_resid * loo_resid;
    }
    total / n as f64
}

/// Interior-knot counts `1..=min(15, ⌊n/4⌋ − k − 1)`.
pub fn default_knot_candidates(n: usize, degree: usize) -> Vec<usize> {
    let upper = (n / 4).saturating_sub(degree + 1).min(MAX_KNOT_CANDIDATE);
    (1..=upper).collect()
}

/// Knot count minimising the leave-one-out score; ties go to the smaller
/// count.
pub fn select_knots(data: &Dataset, degree: usize, candidates: &[usize]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Config("no knot candidates to choose from".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(usize, f64)> = None;
    for &knots in &sorted {
        let score = loocv_score(data, &BSplineBasis::new(degree, knots));
        if !score.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((knots, score));
        }
    }
    best.map(|(k, _)| k).ok_or_else(|| {
        Error::Config(format!(
            "every knot candidate {sorted:?} is infeasible for n = {} and degree {degree}",
            data.n()
        ))
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numerics::{sample_standard_normal, sym_eig, Grid, RngStream};
    use approx::assert_abs_diff_eq;

    /// Random dataset with smooth random curves and a linear + functional
    /// signal.
    pub(crate) fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed);
        let grid = Grid::uniform(51).unwrap();
        let m = grid.len();
        let mut curves = DMatrix::zeros(n, m);
        for i in 0..n {
            let c: Vec<f64> = (0..20).map(|_| sample_standard_normal(&mut rng)).collect();
            for (j, &t) in grid.points().iter().enumerate() {
                curves[(i, j)] = (0..20)
                    .map(|r| c[r] * (std::f64::consts::PI * r as f64 * t).cos() / (r as f64 + 1.0))
                    .sum();
            }
        }
        let z = DMatrix::from_fn(n, p, |_, _| sample_standard_normal(&mut rng));
        let x = FunctionalSample::new(grid.clone(), curves).unwrap();
        let alpha: Vec<f64> = grid.points().iter().map(|t| (2.0 * t).sin()).collect();
        let func = x.inner_products(&alpha).unwrap();
        let y = DVector::from_fn(n, |i, _| {
            let lin: f64 = (0..p).map(|j| z[(i, j)] * (j as f64 + 1.0)).sum();
            lin + func[i] + 0.3 * sample_standard_normal(&mut rng)
        });
        Dataset::new(z, y, x).unwrap()
    }

    #[test]
    fn dataset_validation() {
        let grid = Grid::uniform(5).unwrap();
        let x = FunctionalSample::new(grid, DMatrix::zeros(3, 5)).unwrap();
        assert!(Dataset::new(DMatrix::zeros(2, 1), DVector::zeros(3), x.clone()).is_err());
        assert!(Dataset::new(DMatrix::zeros(3, 0), DVector::zeros(3), x.clone()).is_err());
        assert!(Dataset::new(DMatrix::zeros(3, 3), DVector::zeros(3), x.clone()).is_err());
        let mut y = DVector::zeros(3);
        y[1] = f64::NAN;
        assert!(Dataset::new(DMatrix::zeros(3, 1), y, x).is_err());
    }

    #[test]
    fn noiseless_linear_case() {
        let base = random_dataset(40, 2, 3);
        let beta = DVector::from_vec(vec![1.5, -0.7]);
        let y = base.z() * &beta;
        let data = Dataset::new(base.z().clone(), y, base.x().clone()).unwrap();
        let f = fit(&data, &BSplineBasis::new(2, 3)).unwrap();
        assert!((&f.beta_hat - &beta).amax() < 1e-8);
        assert!(f.sigma2_hat < 1e-16);
    }

    #[test]
    fn normal_equation_identities() {
        for seed in 0..5 {
            let data = random_dataset(60, 3, seed);
            let basis = BSplineBasis::new(2, 4);
            let f = fit(&data, &basis).unwrap();
            let proj = SplineProjection::from_basis(&basis, data.x()).unwrap();
            let a = proj.matrix();
            // projection idempotence
            assert!((&a * &a - &a).norm() < 1e-8);
            // Zᵀ(I−A)(Y − Zβ̂) = 0
            let r = data.y() - data.z() * &f.beta_hat;
            let ia_r = &r - &a * &r;
            assert!((data.z().transpose() * &ia_r).amax() < 1e-8);
            // (I−A)(Y − Zβ̂) is the residual vector
            assert!((&ia_r - &f.residuals).amax() < 1e-10);
            // residual mean square equals sigma2_hat
            assert_abs_diff_eq!(
                f.residuals.iter().map(|e| e * e).sum::<f64>() / 60.0,
                f.sigma2_hat,
                epsilon = 1e-12
            );
            // Σ̂ = (1/n)Zᵀ(I−A)Z, PSD
            let direct = data.z().transpose() * (DMatrix::identity(60, 60) - &a) * data.z() / 60.0;
            assert!((f.sigma_hat.as_matrix() - direct).amax() < 1e-10);
            let e = sym_eig(&f.sigma_hat);
            assert!(e.values[e.values.len() - 1] > -1e-10);
        }
    }

    #[test]
    fn equivariance_in_y() {
        let data = random_dataset(50, 2, 9);
        let basis = BSplineBasis::new(2, 3);
        let f = fit(&data, &basis).unwrap();
        let c = -2.5;
        let scaled = Dataset::new(data.z().clone(), data.y() * c, data.x().clone()).unwrap();
        let g = fit(&scaled, &basis).unwrap();
        assert!((&g.beta_hat - &f.beta_hat * c).amax() < 1e-10);
        assert!((&g.b_hat - &f.b_hat * c).amax() < 1e-8);
        assert_abs_diff_eq!(g.sigma2_hat, f.sigma2_hat * c * c, epsilon = 1e-10);
    }

    #[test]
    fn too_many_knots_is_config_error() {
        let data = random_dataset(30, 2, 1);
        let err = fit(&data, &BSplineBasis::new(2, 40)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn singular_covariates_named() {
        let data = random_dataset(30, 1, 1);
        let z = DMatrix::from_fn(30, 2, |i, _| data.z()[(i, 0)]);
        let dup = Dataset::new(z, data.y().clone(), data.x().clone()).unwrap();
        match fit(&dup, &BSplineBasis::new(2, 2)) {
            Err(Error::Singular { matrix, .. }) => assert_eq!(matrix, "Zᵀ(I−A)Z"),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn alpha_hat_constant_coefficients() {
        let data = random_dataset(40, 1, 2);
        let mut f = fit(&data, &BSplineBasis::new(2, 3)).unwrap();
        f.b_hat.fill(0.0);
        assert_eq!(f.alpha_hat(0.4).unwrap(), 0.0);
        f.b_hat.fill(1.75);
        for t in [0.0, 0.2, 0.9, 1.0] {
            assert_abs_diff_eq!(f.alpha_hat(t).unwrap(), 1.75, epsilon = 1e-14);
        }
    }

    #[test]
    fn hat_matrix_trace_and_fitted_values() {
        for seed in 0..4 {
            let data = random_dataset(45, 2, 100 + seed);
            let basis = BSplineBasis::new(2, 3);
            let design = functional_design(&basis, data.x());
            let h = hat_matrix(data.z(), &design).unwrap();
            assert_abs_diff_eq!(h.trace(), (basis.dimension() + 2) as f64, epsilon = 1e-8);
            let f = fit(&data, &basis).unwrap();
            let yhat = &h * data.y();
            assert!((&yhat - &f.fitted).amax() < 1e-10);
            assert!((&h * &yhat - &yhat).amax() < 1e-8);
        }
    }

    #[test]
    fn hat_trace_with_intercept_column() {
        let data = random_dataset(30, 1, 4);
        let ones = DMatrix::from_element(30, 1, 1.0);
        let design = functional_design(&BSplineBasis::new(2, 0), data.x());
        let h = hat_matrix(&ones, &design).unwrap();
        assert_abs_diff_eq!(h.trace(), 4.0, epsilon = 1e-8);
    }

    #[test]
    fn leverages_match_dense_diagonal() {
        let data = random_dataset(35, 2, 8);
        let basis = BSplineBasis::new(2, 2);
        let proj = SplineProjection::from_basis(&basis, data.x()).unwrap();
        let lev = smoother_leverages(data.z(), &proj).unwrap();
        let h = hat_matrix(data.z(), proj.design()).unwrap();
        for i in 0..35 {
            assert_abs_diff_eq!(lev[i], h[(i, i)], epsilon = 1e-12);
        }
    }

    #[test]
    fn loocv_saturated_is_infinite() {
        let data = random_dataset(20, 2, 5);
        assert_eq!(loocv_score(&data, &BSplineBasis::new(2, 15)), f64::INFINITY);
    }

    #[test]
    fn loocv_permutation_invariant() {
        let data = random_dataset(30, 2, 6);
        let basis = BSplineBasis::new(2, 2);
        let mut rows: Vec<usize> = (0..30).collect();
        rows.reverse();
        rows.swap(3, 17);
        let permuted = data.select_rows(&rows).unwrap();
        assert_abs_diff_eq!(
            loocv_score(&data, &basis),
            loocv_score(&permuted, &basis),
            epsilon = 1e-10
        );
    }

    #[test]
    fn select_knots_edge_cases() {
        let data = random_dataset(30, 2, 7);
        assert_eq!(select_knots(&data, 2, &[3]).unwrap(), 3);
        assert!(matches!(select_knots(&data, 2, &[]), Err(Error::Config(_))));
        assert!(matches!(
            select_knots(&data, 2, &[30, 40]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_candidates() {
        assert_eq!(default_knot_candidates(30, 2), vec![1, 2, 3, 4]);
        assert_eq!(default_knot_candidates(50, 2), (1..=9).collect::<Vec<_>>());
        assert_eq!(
            default_knot_candidates(150, 2),
            (1..=15).collect::<Vec<_>>()
        );
        assert!(default_knot_candidates(12, 2).is_empty());
    }
}
