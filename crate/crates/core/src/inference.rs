//! Confidence regions for `β`.
//!
//! The normal-approximation (NA) region is the ellipsoid
//! `(n/σ̂²)(β̂ − β)ᵀΣ̂⁻¹(β̂ − β) ≤ χ²_p(1 − γ)` built from the profile fit.
//! The empirical-likelihood (EL) region thresholds `−2 log R_n(β)` at a
//! Monte Carlo quantile of `Σ_j w_j χ²_{1,j}`, where the weights are the
//! eigenvalues of `Σ̂^{1/2} Σ̂₁⁻¹ Σ̂^{1/2}`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::bspline::BSplineBasis;
use crate::el::{neg2_log_el, scores_with_projection, ElEvaluation};
use crate::error::{Error, Result};
use crate::numerics::{
    chi2_quantile, sample_standard_normal, sqrt_spd, sym_eig, RngStream, SpdFactor, SymMatrix,
};
use crate::pflr::{fit_with_projection, Dataset, PflrFit, SplineProjection};

pub const DEFAULT_MC_DRAWS: usize = 20_000;
pub const MIN_MC_DRAWS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    El,
    Na,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::El => "EL",
            Method::Na => "NA",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "el" => Ok(Method::El),
            "na" => Ok(Method::Na),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected el or na)"
            ))),
        }
    }
}

/// Monte Carlo settings for calibrating the EL region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub draws: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            draws: DEFAULT_MC_DRAWS,
            seed: 0,
        }
    }
}

/// Weighted chi-square limit law with its simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSpec {
    /// Descending, non-negative.
    pub weights: Vec<f64>,
    pub mc_draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSpec {
    pub method: Method,
    pub gamma: f64,
    pub critical_value: f64,
}

/// Eigenvalues of `Σ̂^{1/2} Σ̂₁⁻¹ Σ̂^{1/2}`, clamped at zero and sorted in
/// descending order.
pub fn sigma0_weights(sigma_hat: &SymMatrix, sigma1_hat: &SymMatrix) -> Result<Vec<f64>> {
    if sigma_hat.order() != sigma1_hat.order() {
        return Err(Error::Dimension {
            context: "sigma0_weights",
            expected: sigma_hat.order(),
            actual: sigma1_hat.order(),
        });
    }
    let root = sqrt_spd(sigma_hat)?;
    let factor = SpdFactor::new(sigma1_hat, "Σ̂₁")?;
    let inner = factor.solve(root.as_matrix());
    let sigma0 = SymMatrix::symmetrize(root.as_matrix() * inner);
    let eig = sym_eig(&sigma0);
    Ok(eig.values.iter().map(|&v| v.max(0.0)).collect())
}

/// Sorted Monte Carlo sample of `Σ_j w_j U_j²` with `U_j` standard normal.
/// Draw `b` consumes `weights.len()` normals in order, so the sample depends
/// only on the seed, the draw count and the weights.
pub fn simulate_weighted_chisq(weights: &[f64], draws: usize, seed: u64) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Domain(
            "weighted chi-square needs at least one weight".into(),
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain(format!(
            "weights must be finite and non-negative: {weights:?}"
        )));
    }
    if draws < MIN_MC_DRAWS {
        return Err(Error::Domain(format!(
            "Monte Carlo calibration needs at least {MIN_MC_DRAWS} draws, got {draws}"
        )));
    }
    let mut rng = RngStream::new(seed);
    let mut sample: Vec<f64> = (0..draws)
        .map(|_| {
            weights
                .iter()
                .map(|w| {
                    let u = sample_standard_normal(&mut rng);
                    w * (u * u)
                })
                .sum()
        })
        .collect();
    sample.sort_by(f64::total_cmp);
    Ok(sample)
}

/// Order statistic at index `⌈B·prob⌉` (1-based) of a sorted sample.
pub fn empirical_quantile(sorted: &[f64], prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!("probability {prob} not in (0, 1)")));
    }
    if sorted.is_empty() {
        return Err(Error::Domain(
            "empirical quantile of an empty sample".into(),
        ));
    }
    let pos = sorted.len() as f64 * prob;
    // B·prob may land a rounding error above an integer
    let rank = if (pos - pos.round()).abs() < 1e-9 {
        pos.round()
    } else {
        pos.ceil()
    };
    let rank = (rank as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

pub fn weighted_chisq_quantile(
    weights: &[f64],
    prob: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!("probability {prob} not in (0, 1)")));
    }
    empirical_quantile(&simulate_weighted_chisq(weights, mc_draws, seed)?, prob)
}

impl LimitSpec {
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        weighted_chisq_quantile(&self.weights, prob, self.mc_draws, self.seed)
    }
}

/// `(n/σ²) dᵀ Σ̂ d`, the pivot of `√n(β̂ − β) ⇒ N(0, σ²Σ⁻¹)`.
pub fn na_quadratic(
    n: usize,
    sigma2: f64,
    sigma_hat: &SymMatrix,
    diff: &DVector<f64>,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateFit(format!(
            "residual variance {sigma2} must be positive for the normal-approximation region"
        )));
    }
    if diff.len() != sigma_hat.order() {
        return Err(Error::Dimension {
            context: "na_quadratic",
            expected: sigma_hat.order(),
            actual: diff.len(),
        });
    }
    // rejects a singular Σ̂, where the region is unbounded
    SpdFactor::new(sigma_hat, "Σ̂")?;
    Ok(n as f64 / sigma2 * diff.dot(&(sigma_hat.as_matrix() * diff)))
}

/// Normal-approximation statistic `(n/σ̂²)(β̂ − β)ᵀΣ̂(β̂ − β)`.
pub fn na_statistic(fit: &PflrFit, beta: &DVector<f64>) -> Result<f64> {
    if beta.len() != fit.p() {
        return Err(Error::Dimension {
            context: "beta",
            expected: fit.p(),
            actual: beta.len(),
        });
    }
    na_quadratic(
        fit.n,
        fit.sigma2_hat,
        &fit.sigma_hat,
        &(&fit.beta_hat - beta),
    )
}

/// NA critical value `χ²_p(1 − γ)`.
pub fn na_critical_value(p: usize, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    chi2_quantile(1.0 - gamma, p as u32)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma {gamma} not in (0, 1)")));
    }
    Ok(())
}

/// A fitted dataset prepared for region queries: the spline projection is
/// factored once and shared between both methods.
#[derive(Debug, Clone)]
pub struct RegionAnalysis<'a> {
    data: &'a Dataset,
    projection: SplineProjection,
    fit: PflrFit,
}

impl<'a> RegionAnalysis<'a> {
    pub fn new(data: &'a Dataset, basis: &BSplineBasis) -> Result<Self> {
        if basis.dimension() + data.p() >= data.n() {
            // surfaces the configuration error before building the design
            crate::pflr::fit(data, basis)?;
        }
        let projection = SplineProjection::from_basis(basis, data.x())?;
        let fit = fit_with_projection(data, basis, &projection)?;
        Ok(Self {
            data,
            projection,
            fit,
        })
    }

    pub fn fit(&self) -> &PflrFit {
        &self.fit
    }

    pub fn na_statistic(&self, beta: &DVector<f64>) -> Result<f64> {
        na_statistic(&self.fit, beta)
    }

    pub fn el_evaluation(&self, beta: &DVector<f64>) -> Result<ElEvaluation> {
        neg2_log_el(&scores_with_projection(self.data, &self.projection, beta)?)
    }

    pub fn limit_weights(&self) -> Result<Vec<f64>> {
        sigma0_weights(&self.fit.sigma_hat, &self.fit.sigma1_hat)
    }

    pub fn limit_spec(&self, mc: McConfig) -> Result<LimitSpec> {
        Ok(LimitSpec {
            weights: self.limit_weights()?,
            mc_draws: mc.draws,
            seed: mc.seed,
        })
    }

    pub fn region(&self, method: Method, gamma: f64, mc: McConfig) -> Result<RegionSpec> {
        check_gamma(gamma)?;
        let critical_value = match method {
            Method::Na => na_critical_value(self.fit.p(), gamma)?,
            Method::El => self.limit_spec(mc)?.quantile(1.0 - gamma)?,
        };
        Ok(RegionSpec {
            method,
            gamma,
            critical_value,
        })
    }
}

/// Verdict of a region-membership test.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionVerdict {
    pub method: Method,
    pub contained: bool,
    pub statistic: f64,
    pub critical_value: f64,
    /// EL only: limit-law weights.
    pub weights: Option<Vec<f64>>,
    /// EL only: full solver output.
    pub el: Option<ElEvaluation>,
}

impl RegionVerdict {
    pub fn hull_failure(&self) -> bool {
        self.el.as_ref().is_some_and(|e| !e.hull_ok)
    }
}

/// Whether `beta` lies in the `(1 − γ)` region of the given method.
pub fn region_contains(
    data: &Dataset,
    basis: &BSplineBasis,
    beta: &DVector<f64>,
    gamma: f64,
    method: Method,
    mc: McConfig,
) -> Result<RegionVerdict> {
    check_gamma(gamma)?;
    let analysis = RegionAnalysis::new(data, basis)?;
    match method {
        Method::Na => {
            let statistic = analysis.na_statistic(beta)?;
            let critical_value = na_critical_value(data.p(), gamma)?;
            Ok(RegionVerdict {
                method,
                contained: statistic <= critical_value,
                statistic,
                critical_value,
                weights: None,
                el: None,
            })
        }
        Method::El => {
            let eval = analysis.el_evaluation(beta)?;
            let spec = analysis.limit_spec(mc)?;
            let critical_value = spec.quantile(1.0 - gamma)?;
            Ok(RegionVerdict {
                method,
                contained: eval.hull_ok && eval.statistic <= critical_value,
                statistic: eval.statistic,
                critical_value,
                weights: Some(spec.weights),
                el: Some(eval),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn weights_identity_and_scaled() {
        let w = sigma0_weights(&SymMatrix::identity(2), &SymMatrix::identity(2)).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-12);

        let s1 = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let w = sigma0_weights(&s1.scale(0.4), &s1).unwrap();
        assert_abs_diff_eq!(w[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn weights_congruence_invariance() {
        let s = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3])).unwrap();
        let s1 = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.2, 0.4, 0.4, 0.9])).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 1.5]);
        let a = sigma0_weights(&s, &s1).unwrap();
        let b = sigma0_weights(&s.congruence(&m), &s1.congruence(&m)).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(a[j], b[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn weights_singular_sigma1() {
        let s1 = SymMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(
            sigma0_weights(&SymMatrix::identity(2), &s1),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn quantile_chi2_two() {
        let q = weighted_chisq_quantile(&[1.0, 1.0], 0.95, 200_000, 1).unwrap();
        assert!((q - 5.99146).abs() < 0.1, "{q}");
    }

    #[test]
    fn quantile_homogeneous() {
        for prob in [0.5, 0.9, 0.95] {
            let a = weighted_chisq_quantile(&[1.0], prob, 5_000, 17).unwrap();
            let b = weighted_chisq_quantile(&[2.0], prob, 5_000, 17).unwrap();
            assert_eq!(b, 2.0 * a);
        }
        let a = weighted_chisq_quantile(&[0.7, 0.2], 0.9, 5_000, 3).unwrap();
        let b = weighted_chisq_quantile(&[1.4, 0.4], 0.9, 5_000, 3).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn quantile_monotone_in_prob() {
        let sample = simulate_weighted_chisq(&[0.6, 0.3], 10_000, 4).unwrap();
        let qs: Vec<f64> = [0.1, 0.5, 0.9, 0.95, 0.99]
            .iter()
            .map(|&p| empirical_quantile(&sample, p).unwrap())
            .collect();
        assert!(qs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn quantile_order_statistic_index() {
        let sample: Vec<f64> = (1..=1000).map(|v| v as f64).collect();
        assert_eq!(empirical_quantile(&sample, 0.95).unwrap(), 950.0);
        assert_eq!(empirical_quantile(&sample, 0.9505).unwrap(), 951.0);
    }

    #[test]
    fn quantile_domain_errors() {
        assert!(weighted_chisq_quantile(&[], 0.9, 2_000, 1).is_err());
        assert!(weighted_chisq_quantile(&[1.0], 1.0, 2_000, 1).is_err());
        assert!(weighted_chisq_quantile(&[1.0], 0.9, 10, 1).is_err());
    }

    #[test]
    fn na_hand_case() {
        // n = 4, σ̂² = 1, Σ̂ = 2, β̂ − β = 0.5  =>  4 · 0.25 · 2
        let s = SymMatrix::from_diagonal(&[2.0]);
        let v = na_quadratic(4, 1.0, &s, &DVector::from_vec(vec![0.5])).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-15);
        assert!(matches!(
            na_quadratic(4, 0.0, &s, &DVector::from_vec(vec![0.5])),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn na_critical_closed_form() {
        assert_abs_diff_eq!(
            na_critical_value(2, 0.05).unwrap(),
            5.991464547107979,
            epsilon = 1e-9
        );
        assert!(na_critical_value(2, 0.0).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("EL".parse::<Method>().unwrap(), Method::El);
        assert_eq!("na".parse::<Method>().unwrap(), Method::Na);
        assert!("xx".parse::<Method>().is_err());
    }

    #[test]
    fn contained_at_beta_hat_and_strictly_convex_na() {
        let data = crate::pflr::tests::random_dataset(40, 2, 31);
        let basis = BSplineBasis::new(2, 3);
        let analysis = RegionAnalysis::new(&data, &basis).unwrap();
        let bh = analysis.fit().beta_hat.clone();
        for method in [Method::El, Method::Na] {
            let v = region_contains(&data, &basis, &bh, 0.05, method, McConfig::default()).unwrap();
            assert!(v.contained);
            assert!(v.statistic.abs() < 1e-8);
        }
        // positive-definite quadratic: midpoint strictly below the average
        let b1 = &bh + DVector::from_vec(vec![0.3, -0.2]);
        let b2 = &bh + DVector::from_vec(vec![-0.1, 0.4]);
        let mid = (&b1 + &b2) * 0.5;
        let f = |b: &DVector<f64>| analysis.na_statistic(b).unwrap();
        assert!(f(&mid) < 0.5 * (f(&b1) + f(&b2)));
    }
}
