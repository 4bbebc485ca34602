use super::data::{quasi_loglik, ReplicatedRow};
use super::{MsmError, MsmFit};
use crate::special::expit;
use serde::{Deserialize, Serialize};

/// In-sample fit summaries on the replicated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    /// `100 ×` mean squared error of the row probabilities.
    pub brier: f64,
    /// Mean squared error on the probability scale.
    pub brier_raw: f64,
    pub deviance_mean: f64,
    pub deviance_at_mean: f64,
    pub k_effective: f64,
    pub dic: f64,
}

impl FitMetrics {
    pub fn from_parts(brier_raw: f64, draw_deviance: &[f64], deviance_at_mean: f64) -> Self {
        let deviance_mean = draw_deviance.iter().sum::<f64>() / draw_deviance.len() as f64;
        let k_effective = deviance_mean - deviance_at_mean;
        Self {
            brier: 100.0 * brier_raw,
            brier_raw,
            deviance_mean,
            deviance_at_mean,
            k_effective,
            dic: deviance_at_mean + 2.0 * k_effective,
        }
    }
}

/// Recompute the metrics of `fit` from scratch on `rows`, which must carry
/// the covariates the model was fitted with.
pub fn fit_metrics(fit: &MsmFit, rows: &[ReplicatedRow]) -> Result<FitMetrics, MsmError> {
    if rows.is_empty() {
        return Err(MsmError::InvalidSpec("no rows".into()));
    }
    let mut deviances = Vec::with_capacity(fit.surface_draws.len());
    for (beta, surface) in fit.beta_draws.iter().zip(&fit.surface_draws) {
        deviances.push(-2.0 * quasi_loglik(rows, beta, surface)?);
    }
    let lambda_bar = |d: f64, g: f64| fit.lambda_hat(d, g);
    let at_mean = -2.0 * quasi_loglik(rows, &fit.beta_mean, &lambda_bar)?;
    let mut sq = 0.0;
    for row in rows {
        let eta = row.x.iter().zip(&fit.beta_mean).map(|(a, b)| a * b).sum::<f64>()
            + fit.lambda_hat(row.d_scaled, row.g);
        sq += (row.y as f64 - expit(eta)).powi(2);
    }
    Ok(FitMetrics::from_parts(sq / rows.len() as f64, &deviances, at_mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dic_identities() {
        let m = FitMetrics::from_parts(0.19, &[3000.0, 3010.0, 3020.0], 2950.0);
        assert_relative_eq!(m.brier, 19.0);
        assert_relative_eq!(m.k_effective, 60.0);
        assert_relative_eq!(m.dic, m.deviance_mean + m.k_effective, epsilon = 1e-9);
    }

    #[test]
    fn constant_half_probability() {
        // Every row at p = 0.5: Brier 25 and deviance 2 log 2 per row.
        let rows = 12.0;
        let dev = -2.0 * rows * 0.5f64.ln();
        let m = FitMetrics::from_parts(0.25, &[dev, dev], dev);
        assert_relative_eq!(m.brier, 25.0);
        assert_relative_eq!(m.deviance_at_mean, -2.0 * rows * 0.5f64.ln());
        assert_eq!(m.k_effective, 0.0);
    }
}
