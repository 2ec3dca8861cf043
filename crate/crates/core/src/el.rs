//! Empirical likelihood for the regression coefficients.
//!
//! The score of observation `i` at `β` is
//! `W_i(β) = Z_i · [(I − A)(Y − Zβ)]_i`, and `−2 log R_n(β)` is evaluated
//! through its convex dual in the Lagrange multiplier `λ`. The dual uses
//! Owen's pseudo-logarithm, which agrees with `log` above `1/n` and continues
//! quadratically below it, so Newton's method never leaves the domain.

use nalgebra::{DMatrix, DVector};

use crate::bspline::BSplineBasis;
use crate::error::{Error, Result};
use crate::pflr::{Dataset, SplineProjection};

const GRADIENT_TOL: f64 = 1e-10;
const MAX_NEWTON_STEPS: usize = 50;
const MAX_HALVINGS: usize = 60;

/// Row `i` holds `W_i(β)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(DMatrix<f64>);

impl ScoreMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(
                "score matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self(w))
    }

    pub fn from_rows(p: usize, rows: &[f64]) -> Result<Self> {
        if p == 0 || !rows.len().is_multiple_of(p) {
            return Err(Error::Dimension {
                context: "score rows",
                expected: p,
                actual: rows.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(rows.len() / p, p, rows))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn p(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `Σ_i W_i`.
    pub fn column_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.0.column_iter().map(|c| c.sum()))
    }
}

/// Outcome of the dual solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    pub lambda: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// False when the origin is outside (or on the boundary of) the convex
    /// hull of the scores.
    pub hull_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElEvaluation {
    pub lambda: DVector<f64>,
    pub pi: DVector<f64>,
    /// `−2 log R_n(β)`; `+∞` on hull failure.
    pub statistic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub hull_ok: bool,
}

/// Scores `W_i(β)` with one shared application of `A` to `Y − Zβ`.
pub fn scores(data: &Dataset, basis: &BSplineBasis, beta: &DVector<f64>) -> Result<ScoreMatrix> {
    let proj = SplineProjection::from_basis(basis, data.x())?;
    scores_with_projection(data, &proj, beta)
}

pub fn scores_with_projection(
    data: &Dataset,
    proj: &SplineProjection,
    beta: &DVector<f64>,
) -> Result<ScoreMatrix> {
    if beta.len() != data.p() {
        return Err(Error::Dimension {
            context: "beta",
            expected: data.p(),
            actual: beta.len(),
        });
    }
    let r = data.y() - data.z() * beta;
    let e = proj.residualize_vec(&r);
    let mut w = data.z().clone();
    for (mut row, e) in w.row_iter_mut().zip(e.iter()) {
        row *= *e;
    }
    ScoreMatrix::new(w)
}

/// Owen's pseudo-logarithm with threshold `eps` and its first two
/// derivatives.
fn pseudo_log(z: f64, eps: f64) -> (f64, f64, f64) {
    if z >= eps {
        (z.ln(), 1.0 / z, -1.0 / (z * z))
    } else {
        let r = z / eps;
        (
            eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r,
            2.0 / eps - z / (eps * eps),
            -1.0 / (eps * eps),
        )
    }
}

struct DualState {
    value: f64,
    gradient: DVector<f64>,
    neg_hessian: DMatrix<f64>,
}

fn dual_state(w: &DMatrix<f64>, lambda: &DVector<f64>, eps: f64) -> DualState {
    let p = w.ncols();
    let mut value = 0.0;
    let mut gradient = DVector::zeros(p);
    let mut neg_hessian = DMatrix::zeros(p, p);
    for row in w.row_iter() {
        let z = 1.0 + (row * lambda)[0];
        let (v, d1, d2) = pseudo_log(z, eps);
        value += v;
        gradient.axpy(d1, &row.transpose(), 1.0);
        neg_hessian.ger(-d2, &row.transpose(), &row.transpose(), 1.0);
    }
    DualState {
        value,
        gradient,
        neg_hessian,
    }
}

fn dual_value(w: &DMatrix<f64>, lambda: &DVector<f64>, eps: f64) -> f64 {
    w.row_iter()
        .map(|row| pseudo_log(1.0 + (row * lambda)[0], eps).0)
        .sum()
}

/// Newton direction for maximising the concave dual; falls back to a
/// pseudo-inverse when the scores do not span all `p` directions.
fn newton_direction(state: &DualState) -> DVector<f64> {
    if let Some(chol) = nalgebra::Cholesky::new(state.neg_hessian.clone()) {
        let d = chol.solve(&state.gradient);
        if d.iter().all(|v| v.is_finite()) {
            return d;
        }
    }
    let svd = state.neg_hessian.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(&state.gradient, tol)
        .unwrap_or_else(|_| state.gradient.clone())
}

/// One damped Newton step; `None` when no step size improves the dual.
fn newton_step(
    wm: &DMatrix<f64>,
    lambda: &DVector<f64>,
    state: &DualState,
    eps: f64,
) -> Option<DVector<f64>> {
    let dir = newton_direction(state);
    // near the optimum the gain of a full step is below rounding of the value
    let slack = 1e-13 * (1.0 + state.value.abs());
    let mut step = 1.0;
    for _ in 0..MAX_HALVINGS {
        let trial = lambda + &dir * step;
        if dual_value(wm, &trial, eps) >= state.value - slack {
            return Some(trial);
        }
        step *= 0.5;
    }
    None
}

/// Solves `(1/n) Σ W_i/(1 + λᵀW_i) = 0` by damped Newton on the
/// pseudo-log dual.
///
/// When the origin is not inside the convex hull of the scores the dual is
/// unbounded and `λ` runs off to infinity; this shows up as `Σ π_i` drifting
/// away from 1 (or some `1 + λᵀW_i ≤ 1/n`) and is reported as `hull_ok =
/// false`.
pub fn solve_lambda(w: &ScoreMatrix) -> Result<LambdaSolution> {
    let n = w.n();
    let p = w.p();
    if n < p + 1 {
        return Err(Error::Input(format!(
            "empirical likelihood needs n ≥ p + 1, got n = {n}, p = {p}"
        )));
    }
    let wm = w.as_matrix();
    let eps = 1.0 / n as f64;
    let inv_n = 1.0 / n as f64;
    let mut lambda = DVector::zeros(p);
    let mut state = dual_state(wm, &lambda, eps);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_NEWTON_STEPS {
        if state.gradient.amax() * inv_n <= GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        match newton_step(wm, &lambda, &state, eps) {
            Some(next) => {
                lambda = next;
                state = dual_state(wm, &lambda, eps);
            }
            None => break,
        }
    }
    if converged {
        // polish: Newton converges quadratically, so a couple of extra steps
        // take the gradient to rounding level
        for _ in 0..2 {
            let Some(next) = newton_step(wm, &lambda, &state, eps) else {
                break;
            };
            let next_state = dual_state(wm, &next, eps);
            if next_state.gradient.amax() >= state.gradient.amax() {
                break;
            }
            lambda = next;
            state = next_state;
        }
    }

    let mut pi_sum = 0.0;
    let mut inside = true;
    for row in wm.row_iter() {
        let z = 1.0 + (row * &lambda)[0];
        inside &= z > eps;
        pi_sum += inv_n / z;
    }
    let hull_ok = inside && (pi_sum - 1.0).abs() <= 1e-6;
    Ok(LambdaSolution {
        lambda,
        converged,
        iterations,
        hull_ok,
    })
}

/// `−2 log R_n` and the implied weights `π_i = 1/(n(1 + λᵀW_i))`.
pub fn neg2_log_el(w: &ScoreMatrix) -> Result<ElEvaluation> {
    let sol = solve_lambda(w)?;
    let n = w.n() as f64;
    let denoms: Vec<f64> = w
        .as_matrix()
        .row_iter()
        .map(|row| 1.0 + (row * &sol.lambda)[0])
        .collect();
    let (statistic, pi) = if sol.hull_ok {
        let stat = 2.0 * denoms.iter().map(|d| d.ln()).sum::<f64>();
        let pi = DVector::from_iterator(denoms.len(), denoms.iter().map(|d| 1.0 / (n * d)));
        (stat.max(0.0), pi)
    } else {
        // weights are diagnostic only here; clamp and renormalise
        let raw: Vec<f64> = denoms.iter().map(|d| 1.0 / (n * d.max(1.0 / n))).collect();
        let total: f64 = raw.iter().sum();
        (
            f64::INFINITY,
            DVector::from_iterator(raw.len(), raw.iter().map(|v| v / total)),
        )
    };
    Ok(ElEvaluation {
        lambda: sol.lambda,
        pi,
        statistic,
        converged: sol.converged,
        iterations: sol.iterations,
        hull_ok: sol.hull_ok,
    })
}

/// `−2 log R_n(β)` for the given data, basis and coefficient vector.
pub fn el_statistic(
    data: &Dataset,
    basis: &BSplineBasis,
    beta: &DVector<f64>,
) -> Result<ElEvaluation> {
    neg2_log_el(&scores(data, basis, beta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_standard_normal, RngStream};
    use crate::pflr::fit;
    use approx::assert_abs_diff_eq;

    fn random_scores(n: usize, p: usize, seed: u64) -> ScoreMatrix {
        let mut rng = RngStream::new(seed);
        ScoreMatrix::new(DMatrix::from_fn(n, p, |_, j| {
            sample_standard_normal(&mut rng) * (j as f64 + 1.0) + 0.1
        }))
        .unwrap()
    }

    #[test]
    fn balanced_scores_give_zero_lambda() {
        let w = ScoreMatrix::from_rows(1, &[1.5, -1.5]).unwrap();
        let e = neg2_log_el(&w).unwrap();
        assert!(e.lambda.amax() < 1e-14);
        assert!(e.converged && e.hull_ok);
        assert_abs_diff_eq!(e.statistic, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.pi[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(e.pi[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn two_point_hand_case() {
        // -1/(1-λ) + 2/(1+2λ) = 0  =>  λ = 1/4
        let w = ScoreMatrix::from_rows(1, &[-1.0, 2.0]).unwrap();
        let e = neg2_log_el(&w).unwrap();
        assert_abs_diff_eq!(e.lambda[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(e.pi[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.pi[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.statistic, 2.0 * (9.0f64 / 8.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn origin_outside_hull() {
        let w = ScoreMatrix::from_rows(1, &[1.0, 2.0, 3.0]).unwrap();
        let sol = solve_lambda(&w).unwrap();
        assert!(!sol.hull_ok);
        let e = neg2_log_el(&w).unwrap();
        assert_eq!(e.statistic, f64::INFINITY);
        assert_abs_diff_eq!(e.pi.sum(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn origin_on_hull_boundary() {
        let w = ScoreMatrix::from_rows(1, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(neg2_log_el(&w).unwrap().statistic, f64::INFINITY);
    }

    #[test]
    fn zero_scores() {
        let w = ScoreMatrix::new(DMatrix::zeros(5, 2)).unwrap();
        let e = neg2_log_el(&w).unwrap();
        assert!(e.converged && e.hull_ok);
        assert_eq!(e.statistic, 0.0);
    }

    #[test]
    fn input_errors() {
        let w = DMatrix::from_row_slice(3, 1, &[1.0, f64::NAN, 0.0]);
        assert!(matches!(ScoreMatrix::new(w), Err(Error::Input(_))));
        let w = ScoreMatrix::from_rows(2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(solve_lambda(&w), Err(Error::Input(_))));
    }

    #[test]
    fn dual_feasibility_and_weights() {
        for seed in 0..40 {
            let w = random_scores(30, 2, seed);
            let e = neg2_log_el(&w).unwrap();
            if !e.hull_ok {
                continue;
            }
            assert!(e.converged, "seed {seed}: {e:?}");
            assert!(e.statistic >= -1e-10);
            assert_abs_diff_eq!(e.pi.sum(), 1.0, epsilon = 1e-10);
            assert!(e.pi.iter().all(|&p| p > 0.0));
            let weighted = w.as_matrix().transpose() * &e.pi;
            assert!(weighted.amax() <= 1e-8);
            let n = w.n() as f64;
            let grad: DVector<f64> = w
                .as_matrix()
                .row_iter()
                .map(|r| r.transpose() / (1.0 + (r * &e.lambda)[0]))
                .fold(DVector::zeros(2), |a, b| a + b);
            assert!(grad.amax() / n <= 1e-8);
        }
    }

    #[test]
    fn affine_invariance() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, -1.0, 3.0]);
        for seed in 100..120 {
            let w = random_scores(25, 2, seed);
            let a = neg2_log_el(&w).unwrap();
            let b = neg2_log_el(&ScoreMatrix::new(w.as_matrix() * &m).unwrap()).unwrap();
            if a.statistic.is_finite() {
                assert_abs_diff_eq!(a.statistic, b.statistic, epsilon = 1e-8);
            } else {
                assert!(b.statistic.is_infinite());
            }
        }
    }

    #[test]
    fn statistic_zero_at_beta_hat() {
        let data = crate::pflr::tests::random_dataset(50, 2, 21);
        let basis = BSplineBasis::new(2, 3);
        let f = fit(&data, &basis).unwrap();
        let w = scores(&data, &basis, &f.beta_hat).unwrap();
        assert!(w.column_sums().amax() < 1e-8);
        let e = neg2_log_el(&w).unwrap();
        assert!(e.statistic <= 1e-8);
        let far = &f.beta_hat + DVector::from_vec(vec![0.8, -0.5]);
        let e_far = el_statistic(&data, &basis, &far).unwrap();
        assert!(e_far.statistic > e.statistic);
    }

    #[test]
    fn scores_vanish_for_exact_linear_data() {
        let base = crate::pflr::tests::random_dataset(30, 2, 4);
        let beta = DVector::from_vec(vec![1.0, 2.0]);
        let data = Dataset::new(base.z().clone(), base.z() * &beta, base.x().clone()).unwrap();
        let w = scores(&data, &BSplineBasis::new(2, 2), &beta).unwrap();
        assert!(w.as_matrix().amax() < 1e-12);
    }

    #[test]
    fn score_sum_is_linear_in_beta() {
        let data = crate::pflr::tests::random_dataset(40, 2, 5);
        let basis = BSplineBasis::new(2, 3);
        let proj = SplineProjection::from_basis(&basis, data.x()).unwrap();
        let b0 = DVector::from_vec(vec![0.3, -0.4]);
        let delta = DVector::from_vec(vec![0.25, 0.1]);
        let s0 = scores(&data, &basis, &b0).unwrap().column_sums();
        let s1 = scores(&data, &basis, &(&b0 + &delta))
            .unwrap()
            .column_sums();
        let cross = data.z().transpose() * proj.residualize(data.z());
        let expected = -(cross * &delta);
        assert!((s1 - s0 - expected).amax() < 1e-10);
    }
}
