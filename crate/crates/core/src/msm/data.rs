use super::{MsmError, SurfaceDraw};
use crate::dvh::Cohort;
use crate::special::bernoulli_loglik;
use crate::surface::MonotonePointConfig;
use serde::{Deserialize, Serialize};

/// One (patient, dose bin) pair of the replicated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedRow {
    /// Zero-based position of the patient in the cohort.
    pub patient_index: usize,
    pub y: u8,
    pub x: Vec<f64>,
    /// One-based dose bin.
    pub d_bin: usize,
    pub d_scaled: f64,
    pub g: f64,
}

/// Patient-major expansion to `n × D` rows using every cohort covariate.
pub fn build_replicated_dataset(cohort: &Cohort) -> Vec<ReplicatedRow> {
    let all: Vec<usize> = (0..cohort.covariate_count()).collect();
    build_replicated_rows(cohort, &all)
}

/// As [`build_replicated_dataset`], keeping only the listed covariates.
pub fn build_replicated_rows(cohort: &Cohort, covariates: &[usize]) -> Vec<ReplicatedRow> {
    let grid = cohort.grid();
    let mut rows = Vec::with_capacity(cohort.len() * grid.n_bins());
    for (i, p) in cohort.patients().iter().enumerate() {
        let x: Vec<f64> = covariates.iter().map(|&j| p.covariates[j]).collect();
        for (k, &g) in p.dvh.values().iter().enumerate() {
            let d_bin = k + 1;
            rows.push(ReplicatedRow {
                patient_index: i,
                y: p.outcome,
                x: x.clone(),
                d_bin,
                d_scaled: grid.scaled(d_bin),
                g,
            });
        }
    }
    rows
}

/// Anything that supplies `λ(d, g)` on the rescaled dose axis.
pub trait LinkSurface {
    fn lambda(&self, d_scaled: f64, g: f64) -> f64;
}

impl LinkSurface for SurfaceDraw {
    fn lambda(&self, d_scaled: f64, g: f64) -> f64 {
        SurfaceDraw::lambda(self, d_scaled, g)
    }
}

/// A two-dimensional config reads `(d, g)`; a one-dimensional config is a
/// function of dose only.
impl LinkSurface for MonotonePointConfig {
    fn lambda(&self, d_scaled: f64, g: f64) -> f64 {
        self.value_at(d_scaled, g)
    }
}

impl<F: Fn(f64, f64) -> f64> LinkSurface for F {
    fn lambda(&self, d_scaled: f64, g: f64) -> f64 {
        self(d_scaled, g)
    }
}

/// Bernoulli quasi-log-likelihood of the replicated rows under
/// `η = β·x + λ(d, g)`, probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn quasi_loglik<S: LinkSurface + ?Sized>(
    rows: &[ReplicatedRow],
    beta: &[f64],
    surface: &S,
) -> Result<f64, MsmError> {
    if beta.iter().any(|b| b.is_nan()) {
        return Err(MsmError::Numerical("NaN coefficient".into()));
    }
    let mut total = 0.0;
    for row in rows {
        if row.x.len() != beta.len() {
            return Err(MsmError::InvalidSpec(format!(
                "row has {} covariates, coefficient vector has {}",
                row.x.len(),
                beta.len()
            )));
        }
        let eta = row.x.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>()
            + surface.lambda(row.d_scaled, row.g);
        if eta.is_nan() {
            return Err(MsmError::Numerical(format!(
                "NaN linear predictor at patient {}, bin {}",
                row.patient_index, row.d_bin
            )));
        }
        total += bernoulli_loglik(row.y == 1, eta);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dvh::{CumulativeDvh, DoseGrid, PatientRecord};
    use crate::special::logit;
    use approx::assert_relative_eq;

    fn toy(n: usize) -> Cohort {
        let grid = DoseGrid::from_zero(3, 30.0).unwrap();
        let patients = (0..n)
            .map(|i| PatientRecord {
                id: format!("p{i}"),
                covariates: vec![i as f64],
                dvh: CumulativeDvh::new(grid, vec![1.0, 0.8, 0.5]).unwrap(),
                outcome: 1,
            })
            .collect();
        Cohort::new(grid, vec!["x".into()], patients).unwrap()
    }

    #[test]
    fn expansion_single_patient() {
        let rows = build_replicated_dataset(&toy(1));
        assert_eq!(rows.len(), 3);
        let got: Vec<(u8, f64, f64)> = rows.iter().map(|r| (r.y, r.d_scaled, r.g)).collect();
        assert_eq!(got, vec![(1, 0.0, 1.0), (1, 0.5, 0.8), (1, 1.0, 0.5)]);
    }

    #[test]
    fn expansion_is_patient_major() {
        let rows = build_replicated_dataset(&toy(2));
        assert_eq!(rows.len(), 6);
        let idx: Vec<usize> = rows.iter().map(|r| r.patient_index).collect();
        assert_eq!(idx, vec![0, 0, 0, 1, 1, 1]);
        let unadjusted = build_replicated_rows(&toy(2), &[]);
        assert!(unadjusted.iter().all(|r| r.x.is_empty()));
    }

    #[test]
    fn loglik_examples() {
        let cohort = toy(2);
        let rows = build_replicated_dataset(&cohort);
        let zero = |_: f64, _: f64| 0.0;
        let ll = quasi_loglik(&rows, &[0.0], &zero).unwrap();
        assert_relative_eq!(ll, 6.0 * 0.5f64.ln(), epsilon = 1e-12);

        let one = vec![rows[0].clone()];
        let level = |_: f64, _: f64| logit(0.8);
        let ll = quasi_loglik(&one, &[0.0], &level).unwrap();
        assert_relative_eq!(ll, 0.8f64.ln(), epsilon = 1e-12);

        assert!(quasi_loglik(&rows, &[f64::NAN], &zero).is_err());
        assert!(quasi_loglik(&rows, &[0.0, 1.0], &zero).is_err());
    }
}
