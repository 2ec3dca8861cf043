use pflr_core::inference::{sigma0_weights, weighted_chisq_quantile, DEFAULT_MC_DRAWS};
use pflr_core::numerics::SymMatrix;
use pflr_core::simgen::{model3_covariate_coefficients, population_covariances, ModelId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};

/// Eigenvalues of a symmetric 2×2 matrix, descending.
fn eig2(a: f64, b: f64, d: f64) -> [f64; 2] {
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    [mid + rad, mid - rad]
}

#[test]
fn model3_population_weights_match_closed_form() {
    // E Z Zᵀ from the coefficient series: ⟨X, α_k⟩ has variance Σ_j (b_kj / j)²
    let [b1, b2] = model3_covariate_coefficients(50);
    let term = |u: &[f64], v: &[f64]| -> f64 {
        u.iter()
            .zip(v)
            .enumerate()
            .map(|(j, (x, y))| x * y / ((j + 1) * (j + 1)) as f64)
            .sum()
    };
    let s1 = [term(&b1, &b1) + 0.25, term(&b1, &b2), term(&b2, &b2) + 0.64];
    let s = [0.25, 0.64];
    // Σ^{1/2} Σ₁⁻¹ Σ^{1/2} for diagonal Σ
    let det = s1[0] * s1[2] - s1[1] * s1[1];
    let inv = [s1[2] / det, -s1[1] / det, s1[0] / det];
    let expected = eig2(s[0] * inv[0], (s[0] * s[1]).sqrt() * inv[1], s[1] * inv[2]);

    let (sigma, sigma1) = population_covariances(ModelId::Three, 50);
    let w = sigma0_weights(&sigma, &sigma1).unwrap();
    for k in 0..2 {
        assert!((w[k] - expected[k]).abs() < 1e-10, "{w:?} vs {expected:?}");
    }
    assert!((sigma1.as_matrix()[(0, 1)] - s1[1]).abs() < 1e-12);
}

#[test]
fn models_with_independent_covariates_have_unit_weights() {
    for model in [ModelId::One, ModelId::Two] {
        let (sigma, sigma1) = population_covariances(model, 50);
        let w = sigma0_weights(&sigma, &sigma1).unwrap();
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-10), "{model}: {w:?}");
    }
    let w = sigma0_weights(
        &SymMatrix::from_diagonal(&[2.0, 3.0]),
        &SymMatrix::from_diagonal(&[4.0, 1.0]),
    )
    .unwrap();
    assert!((w[0] - 3.0).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
}

#[test]
fn weighted_quantile_agrees_with_large_draw_oracle() {
    let weights = [0.5, 0.25];
    let prob = 0.9;
    let big = 10_000_000;
    let chi = ChiSquared::new(1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut sample: Vec<f64> = (0..big)
        .map(|_| weights[0] * chi.sample(&mut rng) + weights[1] * chi.sample(&mut rng))
        .collect();
    let k = (big as f64 * prob).ceil() as usize - 1;
    let (_, &mut oracle, _) = sample.select_nth_unstable_by(k, f64::total_cmp);
    // density at the quantile from the oracle sample
    let h = 0.02;
    let mass = sample.iter().filter(|&&v| (v - oracle).abs() <= h).count() as f64 / big as f64;
    let density = mass / (2.0 * h);
    let se = |draws: usize| (prob * (1.0 - prob) / draws as f64).sqrt() / density;
    let tol = 3.0 * (se(DEFAULT_MC_DRAWS).powi(2) + se(big).powi(2)).sqrt();

    for seed in [1, 2, 3] {
        let q = weighted_chisq_quantile(&weights, prob, DEFAULT_MC_DRAWS, seed).unwrap();
        assert!(
            (q - oracle).abs() <= tol,
            "seed {seed}: {q} vs oracle {oracle} (tol {tol})"
        );
    }
}
