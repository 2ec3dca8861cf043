//! Shared numerical kernels: quadrature on the observation grid, small
//! symmetric linear algebra, chi-square quantiles and the seeded random
//! stream every simulation draws from.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// Relative tolerance for accepting a matrix as symmetric.
const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalue ratio below which a matrix is treated as singular.
const SINGULAR_RATIO: f64 = 1e-10;
/// Eigenvalue ratio below which a negative eigenvalue is not rounding noise.
const PSD_CLAMP_RATIO: f64 = 1e-10;

/// Ordered evaluation points on `[0, 1]`, both endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Input(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
            return Err(Error::Input("grid must start at 0 and end at 1".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("grid must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// `m` equally spaced points `0, 1/(m-1), ..., 1`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Input(format!(
                "grid needs at least 2 points, got {m}"
            )));
        }
        let step = (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|j| j as f64 / step).collect();
        points[m - 1] = 1.0;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Composite trapezoid weights, so that `sum_j w_j f(t_j)` approximates
    /// the integral of `f` over `[0, 1]`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let t = &self.points;
        let m = t.len();
        let mut w = vec![0.0; m];
        for j in 0..m - 1 {
            let half = 0.5 * (t[j + 1] - t[j]);
            w[j] += half;
            w[j + 1] += half;
        }
        w
    }
}

/// Composite trapezoid approximation of `∫₀¹ f(t) g(t) dt`.
pub fn trapezoid_inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    let m = grid.len();
    if f.len() != m {
        return Err(Error::Dimension {
            context: "trapezoid_inner_product (f)",
            expected: m,
            actual: f.len(),
        });
    }
    if g.len() != m {
        return Err(Error::Dimension {
            context: "trapezoid_inner_product (g)",
            expected: m,
            actual: g.len(),
        });
    }
    let t = grid.points();
    let mut acc = 0.0;
    for j in 0..m - 1 {
        acc += 0.5 * (t[j + 1] - t[j]) * (f[j] * g[j] + f[j + 1] * g[j + 1]);
    }
    Ok(acc)
}

/// A square matrix known to be symmetric.
///
/// Construction through [`SymMatrix::new`] checks symmetry; products such as
/// `ZᵀZ` that are symmetric up to rounding go through
/// [`SymMatrix::symmetrize`], which averages the two triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSymmetric(format!(
                "{}x{} (not square)",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(1.0);
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric(format!("entry ({i},{j})")));
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// Averages `m` with its transpose. Panics if `m` is not square.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(order: usize) -> Self {
        Self(DMatrix::identity(order, order))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    /// `M · self · Mᵀ`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Self {
        Self::symmetrize(m * &self.0 * m.transpose())
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// stored column-wise.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

pub fn sym_eig(s: &SymMatrix) -> SymEigen {
    let n = s.order();
    if n == 0 {
        return SymEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(s.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SymEigen { values, vectors }
}

/// Cholesky factor of a symmetric positive definite matrix, with the
/// conditioning check applied once so that repeated solves are cheap.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    matrix: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    /// Fails with [`Error::Singular`] naming `name` when the smallest
    /// eigenvalue is at most `1e-10` times the largest.
    pub fn new(s: &SymMatrix, name: &str) -> Result<Self> {
        let n = s.order();
        if n == 0 {
            return Err(Error::Singular {
                matrix: name.to_string(),
                ratio: 0.0,
            });
        }
        let eig = sym_eig(s);
        let max = eig.values[0];
        let min = eig.values[n - 1];
        let ratio = if max > 0.0 {
            min / max
        } else {
            f64::NEG_INFINITY
        };
        if !(max > 0.0) || !(ratio > SINGULAR_RATIO) {
            return Err(Error::Singular {
                matrix: name.to_string(),
                ratio,
            });
        }
        let chol =
            nalgebra::Cholesky::new(s.as_matrix().clone()).ok_or_else(|| Error::Singular {
                matrix: name.to_string(),
                ratio,
            })?;
        Ok(Self {
            matrix: s.as_matrix().clone(),
            chol,
        })
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = self.chol.solve(rhs);
        // one step of iterative refinement
        let r = rhs - &self.matrix * &x;
        x += self.chol.solve(&r);
        x
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = self.chol.solve(rhs);
        let r = rhs - &self.matrix * &x;
        x += self.chol.solve(&r);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.matrix.nrows(), self.matrix.nrows()))
    }
}

/// Solves `S·T = rhs` for symmetric positive definite `S`; `name` labels the
/// matrix in the singularity error.
pub fn spd_solve(s: &SymMatrix, rhs: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if rhs.nrows() != s.order() {
        return Err(Error::Dimension {
            context: "spd_solve",
            expected: s.order(),
            actual: rhs.nrows(),
        });
    }
    Ok(SpdFactor::new(s, name)?.solve(rhs))
}

/// Symmetric positive semidefinite square root. Eigenvalues down to
/// `-1e-10·λ_max` are clamped to zero; anything more negative is rejected.
pub fn sqrt_spd(s: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(s);
    let n = s.order();
    if n == 0 {
        return Ok(s.clone());
    }
    let max = eig.values[0].max(0.0);
    let min = eig.values[n - 1];
    if min < -PSD_CLAMP_RATIO * max || (max == 0.0 && min < 0.0) {
        return Err(Error::NotPsd {
            matrix: "sqrt_spd input".into(),
            eigenvalue: min,
        });
    }
    let roots = eig.values.map(|v| v.max(0.0).sqrt());
    let r = &eig.vectors * DMatrix::from_diagonal(&roots) * eig.vectors.transpose();
    Ok(SymMatrix::symmetrize(r))
}

/// Lower-tail chi-square probability.
pub fn chi2_cdf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * df as f64, 0.5 * x)
    }
}

/// Chi-square quantile by bracketed bisection on the regularized lower
/// incomplete gamma function.
pub fn chi2_quantile(prob: f64, df: u32) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!(
            "chi2_quantile: probability {prob} not in (0, 1)"
        )));
    }
    if df == 0 {
        return Err(Error::Domain("chi2_quantile: df must be positive".into()));
    }
    let mut lo = 0.0;
    let mut hi = (df as f64).max(1.0);
    while chi2_cdf(hi, df) < prob {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, df) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Deterministic random stream backed by ChaCha20, so draw sequences depend
/// only on the seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

pub fn sample_standard_normal(rng: &mut RngStream) -> f64 {
    rng.rng.sample(StandardNormal)
}

pub fn sample_uniform(rng: &mut RngStream, a: f64, b: f64) -> f64 {
    a + (b - a) * rng.rng.random::<f64>()
}

/// Skew-normal draw with shape parameter `shape`, standardized to mean 0 and
/// standard deviation `sd`.
///
/// Uses `δ|N₁| + √(1−δ²)N₂` with `δ = shape/√(1+shape²)`, whose mean is
/// `δ√(2/π)` and variance `1 − 2δ²/π`.
pub fn sample_skew_normal_standardized(rng: &mut RngStream, shape: f64, sd: f64) -> f64 {
    let delta = shape / (1.0 + shape * shape).sqrt();
    let n1 = sample_standard_normal(rng);
    let n2 = sample_standard_normal(rng);
    let raw = delta * n1.abs() + (1.0 - delta * delta).sqrt() * n2;
    let mean = delta * (2.0 / std::f64::consts::PI).sqrt();
    let var = 1.0 - 2.0 * delta * delta / std::f64::consts::PI;
    sd * (raw - mean) / var.sqrt()
}
