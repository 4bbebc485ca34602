//! Normal-distribution helpers and logistic link functions.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, evaluated through `erfc` so both tails keep full
/// relative precision.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(z)`.
#[inline]
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)`. Returns ±∞ at the endpoints.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Probability clamp used by every Bernoulli log-likelihood in the crate.
pub const PROB_FLOOR: f64 = 1e-12;

/// Bernoulli log-likelihood of `y` under `expit(eta)`, with the success
/// probability clamped to `[1e-12, 1 - 1e-12]`.
#[inline]
pub fn bernoulli_loglik(y: bool, eta: f64) -> f64 {
    let p = expit(eta).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if y {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Probabilists' Gauss–Hermite rule: nodes and weights integrating against
/// the standard normal density (weights sum to one).
pub fn gauss_hermite_normal(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    // Golub–Welsch on the Jacobi matrix of the monic Hermite_e recurrence.
    let mut jacobi = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64).sqrt();
        jacobi[(k, k - 1)] = off;
        jacobi[(k - 1, k)] = off;
    }
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}
