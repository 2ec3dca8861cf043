//! Clamped B-spline bases on `[0, 1]` with equally spaced interior knots,
//! and the design matrix of inner products `⟨X_i, B_j⟩`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::Grid;

/// B-spline basis of degree `k` with `N` equally spaced interior knots.
///
/// The knot vector repeats 0 and 1 `k + 1` times, so the basis has
/// `N + k + 1` functions and interpolates at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    interior_knots: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(degree: usize, interior_knots: usize) -> Self {
        let mut knots = Vec::with_capacity(interior_knots + 2 * degree + 2);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        let spans = (interior_knots + 1) as f64;
        knots.extend((1..=interior_knots).map(|j| j as f64 / spans));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self {
            degree,
            interior_knots,
            knots,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `N + k + 1`.
    pub fn dimension(&self) -> usize {
        self.interior_knots + self.degree + 1
    }

    /// Index `s` of the knot span `[u_s, u_{s+1})` containing `t`; `t = 1`
    /// belongs to the last non-empty span.
    fn span(&self, t: f64) -> usize {
        let last = self.dimension() - 1;
        if t >= 1.0 {
            return last;
        }
        // knots[degree..=last+1] are 0, 1/(N+1), ..., 1
        let mut lo = self.degree;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// The `k + 1` possibly non-zero basis values at `t` and the index of the
    /// first of them (Cox–de Boor in triangular form).
    fn local_values(&self, t: f64) -> (usize, Vec<f64>) {
        let k = self.degree;
        let s = self.span(t);
        let u = &self.knots;
        let mut values = vec![0.0; k + 1];
        let mut left = vec![0.0; k + 1];
        let mut right = vec![0.0; k + 1];
        values[0] = 1.0;
        for j in 1..=k {
            left[j] = t - u[s + 1 - j];
            right[j] = u[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (s - k, values)
    }

    /// All `k_n` basis values at `t ∈ [0, 1]`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!(
                "B-spline argument {t} outside [0, 1]"
            )));
        }
        let mut out = vec![0.0; self.dimension()];
        let (first, local) = self.local_values(t);
        out[first..first + local.len()].copy_from_slice(&local);
        Ok(out)
    }

    /// Basis evaluated on every grid point: an `m × k_n` matrix.
    pub fn eval_on_grid(&self, grid: &Grid) -> DMatrix<f64> {
        let kn = self.dimension();
        let mut out = DMatrix::zeros(grid.len(), kn);
        for (row, &t) in grid.points().iter().enumerate() {
            let (first, local) = self.local_values(t);
            for (offset, v) in local.into_iter().enumerate() {
                out[(row, first + offset)] = v;
            }
        }
        out
    }
}

/// Curves `X_1, ..., X_n` observed on a shared grid; row `i` holds `X_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    grid: Grid,
    curves: DMatrix<f64>,
}

impl FunctionalSample {
    pub fn new(grid: Grid, curves: DMatrix<f64>) -> Result<Self> {
        if curves.ncols() != grid.len() {
            return Err(Error::Dimension {
                context: "functional sample columns",
                expected: grid.len(),
                actual: curves.ncols(),
            });
        }
        if curves.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(
                "functional sample contains non-finite values".into(),
            ));
        }
        Ok(Self { grid, curves })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.nrows() == 0
    }

    /// Trapezoid inner products of every curve with `f` sampled on the grid.
    pub fn inner_products(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.grid.len() {
            return Err(Error::Dimension {
                context: "functional inner product",
                expected: self.grid.len(),
                actual: f.len(),
            });
        }
        let w = self.grid.trapezoid_weights();
        Ok(self
            .curves
            .row_iter()
            .map(|row| row.iter().zip(&w).zip(f).map(|((x, w), f)| x * w * f).sum())
            .collect())
    }

    /// Keeps the rows listed in `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            curves: self.curves.select_rows(rows),
        }
    }
}

/// The `n × k_n` matrix `B` with `B[i, j] = ⟨X_i, B_j⟩` by trapezoid rule.
pub fn functional_design(basis: &BSplineBasis, sample: &FunctionalSample) -> DMatrix<f64> {
    let w = sample.grid().trapezoid_weights();
    let mut weighted = sample.curves().clone();
    for (mut col, w) in weighted.column_iter_mut().zip(&w) {
        col *= *w;
    }
    weighted * basis.eval_on_grid(sample.grid())
}

/// `Σ_s c_s B_s(t)`.
pub fn eval_spline(coefficients: &[f64], basis: &BSplineBasis, t: f64) -> Result<f64> {
    if coefficients.len() != basis.dimension() {
        return Err(Error::Dimension {
            context: "spline coefficients",
            expected: basis.dimension(),
            actual: coefficients.len(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!(
            "B-spline argument {t} outside [0, 1]"
        )));
    }
    let (first, local) = basis.local_values(t);
    Ok(local
        .iter()
        .zip(&coefficients[first..])
        .map(|(b, c)| b * c)
        .sum())
}
