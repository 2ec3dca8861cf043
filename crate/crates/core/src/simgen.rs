//! Data generation for the three simulation models.
//!
//! Curves are `X_i(t) = Σ_{j=1}^{J} ξ_ij j⁻¹ φ_j(t)` with `φ_1 = 1`,
//! `φ_j(t) = √2 cos((j−1)πt)` and `ξ_ij ~ U[−√3, √3]`, `J = 50` by default.
//!
//! | model | β | Z | ε (normal / skew) |
//! |---|---|---|---|
//! | 1 | (1, 1) | N(0, [[0.9, 0.2], [0.2, 0.5]]) | sd 0.6 / sd 1 |
//! | 2 | (5, −1.7) | N(0, I₂) | sd 1 / sd 1 |
//! | 3 | (2, −1) | `Z_k = ⟨X, α_k⟩ + e_k`, `e ~ N(0, diag(0.25, 0.64))` | sd 0.5 / sd 0.5 |
//!
//! Skew-normal errors use shape 5, recentred and rescaled to the listed sd.
//! All functional inner products use the trapezoid rule on the data grid.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::bspline::FunctionalSample;
use crate::error::{Error, Result};
use crate::numerics::{
    sample_skew_normal_standardized, sample_standard_normal, sample_uniform, Grid, RngStream,
    SymMatrix,
};
use crate::pflr::{Dataset, Truth};

pub const DEFAULT_FOURIER_TERMS: usize = 50;
pub const DEFAULT_GRID_POINTS: usize = 101;
pub const SKEW_SHAPE: f64 = 5.0;
const MIN_SAMPLE_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    One,
    Two,
    Three,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::One, ModelId::Two, ModelId::Three];

    pub fn number(self) -> u8 {
        match self {
            ModelId::One => 1,
            ModelId::Two => 2,
            ModelId::Three => 3,
        }
    }

    pub fn from_number(id: u32) -> Result<Self> {
        match id {
            1 => Ok(ModelId::One),
            2 => Ok(ModelId::Two),
            3 => Ok(ModelId::Three),
            other => Err(Error::Config(format!(
                "unknown model id {other} (expected 1, 2 or 3)"
            ))),
        }
    }

    pub fn beta(self) -> [f64; 2] {
        match self {
            ModelId::One => [1.0, 1.0],
            ModelId::Two => [5.0, -1.7],
            ModelId::Three => [2.0, -1.0],
        }
    }

    /// Standard deviation of the model error for the given error kind.
    pub fn error_sd(self, kind: ErrorKind) -> f64 {
        match (self, kind) {
            (ModelId::One, ErrorKind::Normal) => 0.6,
            (ModelId::One, ErrorKind::SkewNormal) => 1.0,
            (ModelId::Two, _) => 1.0,
            (ModelId::Three, _) => 0.5,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorKind {
    Normal,
    SkewNormal,
}

impl ErrorKind {
    pub fn label(self) -> &'static str {
        match self {
            ErrorKind::Normal => "normal",
            ErrorKind::SkewNormal => "skew",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ErrorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(ErrorKind::Normal),
            "skew" | "skew_normal" | "skew-normal" => Ok(ErrorKind::SkewNormal),
            other => Err(Error::Config(format!(
                "unknown error kind '{other}' (expected normal or skew)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model: ModelId,
    pub n: usize,
    pub error: ErrorKind,
    pub grid: Grid,
    pub fourier_terms: usize,
    /// Replaces the model's error standard deviation when set.
    pub error_sd_override: Option<f64>,
}

impl ModelSpec {
    pub fn new(model: ModelId, n: usize, error: ErrorKind) -> Self {
        Self {
            model,
            n,
            error,
            grid: Grid::uniform(DEFAULT_GRID_POINTS).expect("default grid is valid"),
            fourier_terms: DEFAULT_FOURIER_TERMS,
            error_sd_override: None,
        }
    }

    pub fn error_sd(&self) -> f64 {
        self.error_sd_override
            .unwrap_or_else(|| self.model.error_sd(self.error))
    }

    fn validate(&self) -> Result<()> {
        if self.n < MIN_SAMPLE_SIZE {
            return Err(Error::Config(format!(
                "sample size {} below the minimum of {MIN_SAMPLE_SIZE}",
                self.n
            )));
        }
        if self.fourier_terms == 0 {
            return Err(Error::Config("fourier_terms must be at least 1".into()));
        }
        if let Some(sd) = self.error_sd_override {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::Config(format!(
                    "error sd override {sd} must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub beta: DVector<f64>,
    pub alpha: Vec<f64>,
    pub error: ErrorKind,
    pub error_sd: f64,
    pub skew_shape: Option<f64>,
}

/// `φ_j(t)` for `j ≥ 1`.
pub fn fourier_phi(j: usize, t: f64) -> f64 {
    if j == 1 {
        1.0
    } else {
        SQRT_2 * ((j - 1) as f64 * PI * t).cos()
    }
}

/// `Σ_{j} c_j φ_j(t)` over `j = 1..=coefficients.len()`.
fn fourier_series(coefficients: &[f64], t: f64) -> f64 {
    coefficients
        .iter()
        .enumerate()
        .map(|(idx, c)| c * fourier_phi(idx + 1, t))
        .sum()
}

/// Slope function of the model at `t`.
///
/// Model 3 does not define its own slope, so it shares Model 1's.
pub fn alpha(model: ModelId, fourier_terms: usize, t: f64) -> f64 {
    match model {
        ModelId::One | ModelId::Three => {
            let coeffs: Vec<f64> = (1..=fourier_terms)
                .map(|j| {
                    if j == 1 {
                        SQRT_2 / 2.0
                    } else {
                        4.0 / (j * j) as f64
                    }
                })
                .collect();
            fourier_series(&coeffs, t)
        }
        ModelId::Two => {
            2.0 * (0.5 * PI * t).sin() + 4.0 * (1.5 * PI * t).sin() + 5.0 * (2.5 * PI * t).sin()
        }
    }
}

/// Fourier coefficients of the Model 3 covariate slopes `α₁`, `α₂`.
pub fn model3_covariate_coefficients(fourier_terms: usize) -> [Vec<f64>; 2] {
    let a1 = (1..=fourier_terms)
        .map(|j| if j == 1 { 1.0 } else { 2.0 / (j * j) as f64 })
        .collect();
    let a2 = (1..=fourier_terms)
        .map(|j| if j == 1 { -0.5 } else { 3.0 / (j * j) as f64 })
        .collect();
    [a1, a2]
}

const MODEL1_Z_COV: [[f64; 2]; 2] = [[0.9, 0.2], [0.2, 0.5]];
const MODEL3_Z_NOISE_VAR: [f64; 2] = [0.25, 0.64];

/// Population `(Σ, Σ₁) = (Var(Z − E(Z|X)), E(ZZᵀ))` implied by the model,
/// using exact `L²` inner products of the Fourier expansion.
pub fn population_covariances(model: ModelId, fourier_terms: usize) -> (SymMatrix, SymMatrix) {
    match model {
        ModelId::One => {
            let c = MODEL1_Z_COV;
            let m = DMatrix::from_row_slice(2, 2, &[c[0][0], c[0][1], c[1][0], c[1][1]]);
            let s = SymMatrix::symmetrize(m);
            (s.clone(), s)
        }
        ModelId::Two => (SymMatrix::identity(2), SymMatrix::identity(2)),
        ModelId::Three => {
            // ⟨X, α_k⟩ = Σ_j ξ_j j⁻¹ a_kj with Var(ξ_j) = 1
            let [a1, a2] = model3_covariate_coefficients(fourier_terms);
            let mut m = DMatrix::zeros(2, 2);
            for j in 0..fourier_terms {
                let scale = 1.0 / ((j + 1) * (j + 1)) as f64;
                let a = [a1[j], a2[j]];
                for r in 0..2 {
                    for c in 0..2 {
                        m[(r, c)] += scale * a[r] * a[c];
                    }
                }
            }
            m[(0, 0)] += MODEL3_Z_NOISE_VAR[0];
            m[(1, 1)] += MODEL3_Z_NOISE_VAR[1];
            (
                SymMatrix::from_diagonal(&MODEL3_Z_NOISE_VAR),
                SymMatrix::symmetrize(m),
            )
        }
    }
}

/// `n` random curves on `grid` from the truncated Fourier expansion.
pub fn gen_x(
    n: usize,
    grid: &Grid,
    fourier_terms: usize,
    rng: &mut RngStream,
) -> Result<FunctionalSample> {
    let m = grid.len();
    let half_width = 3f64.sqrt();
    // row j-1 holds φ_j / j on the grid
    let phi = DMatrix::from_fn(fourier_terms, m, |r, c| {
        fourier_phi(r + 1, grid.points()[c]) / (r + 1) as f64
    });
    let xi = DMatrix::from_row_iterator(
        n,
        fourier_terms,
        (0..n * fourier_terms).map(|_| sample_uniform(rng, -half_width, half_width)),
    );
    FunctionalSample::new(grid.clone(), xi * phi)
}

fn draw_error(kind: ErrorKind, sd: f64, rng: &mut RngStream) -> f64 {
    match kind {
        ErrorKind::Normal => sd * sample_standard_normal(rng),
        ErrorKind::SkewNormal => sample_skew_normal_standardized(rng, SKEW_SHAPE, sd),
    }
}

/// One simulated dataset. Draw order: curve scores, then covariates, then
/// model errors.
pub fn gen_dataset(spec: &ModelSpec, rng: &mut RngStream) -> Result<(Dataset, TruthRecord)> {
    spec.validate()?;
    let n = spec.n;
    let grid = &spec.grid;
    let x = gen_x(n, grid, spec.fourier_terms, rng)?;

    let z = match spec.model {
        ModelId::One => {
            let c = MODEL1_Z_COV;
            let l11 = c[0][0].sqrt();
            let l21 = c[1][0] / l11;
            let l22 = (c[1][1] - l21 * l21).sqrt();
            let mut z = DMatrix::zeros(n, 2);
            for i in 0..n {
                let u1 = sample_standard_normal(rng);
                let u2 = sample_standard_normal(rng);
                z[(i, 0)] = l11 * u1;
                z[(i, 1)] = l21 * u1 + l22 * u2;
            }
            z
        }
        ModelId::Two => {
            DMatrix::from_row_iterator(n, 2, (0..2 * n).map(|_| sample_standard_normal(rng)))
        }
        ModelId::Three => {
            let [a1, a2] = model3_covariate_coefficients(spec.fourier_terms);
            let g1: Vec<f64> = grid
                .points()
                .iter()
                .map(|&t| fourier_series(&a1, t))
                .collect();
            let g2: Vec<f64> = grid
                .points()
                .iter()
                .map(|&t| fourier_series(&a2, t))
                .collect();
            let m1 = x.inner_products(&g1)?;
            let m2 = x.inner_products(&g2)?;
            let sd = [MODEL3_Z_NOISE_VAR[0].sqrt(), MODEL3_Z_NOISE_VAR[1].sqrt()];
            let mut z = DMatrix::zeros(n, 2);
            for i in 0..n {
                z[(i, 0)] = m1[i] + sd[0] * sample_standard_normal(rng);
                z[(i, 1)] = m2[i] + sd[1] * sample_standard_normal(rng);
            }
            z
        }
    };

    let beta = DVector::from_row_slice(&spec.model.beta());
    let alpha_grid: Vec<f64> = grid
        .points()
        .iter()
        .map(|&t| alpha(spec.model, spec.fourier_terms, t))
        .collect();
    let functional = x.inner_products(&alpha_grid)?;
    let sd = spec.error_sd();
    let linear = &z * &beta;
    let y = DVector::from_fn(n, |i, _| {
        linear[i] + functional[i] + draw_error(spec.error, sd, rng)
    });

    let truth = TruthRecord {
        beta: beta.clone(),
        alpha: alpha_grid.clone(),
        error: spec.error,
        error_sd: sd,
        skew_shape: (spec.error == ErrorKind::SkewNormal).then_some(SKEW_SHAPE),
    };
    let data = Dataset::new(z, y, x)?.with_truth(Truth {
        beta,
        alpha: alpha_grid,
    })?;
    Ok((data, truth))
}
