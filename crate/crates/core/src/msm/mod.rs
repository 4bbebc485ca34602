//! Marginal structural models for the replicated dose-volume dataset.
//!
//! A model's linear predictor for patient `i` at dose bin `d` is
//! `Σ_j β_j x_ij + λ(d, G_{d,i})`, where the dose axis is rescaled to
//! `[0, 1]`. Monotone families keep no separate intercept: the surface base
//! level carries it. Parametric families put their intercept and dose-volume
//! terms into `λ`, so every family shares one evaluation path.

mod bootstrap;
mod data;
mod estimate;
mod fit;
mod metrics;

pub use bootstrap::{
    clustered_bootstrap, percentile_interval, BootstrapResult, BootstrapSettings, Estimands,
    Interval, ReplicateOutcome,
};
pub use data::{
    build_replicated_dataset, build_replicated_rows, quasi_loglik, LinkSurface, ReplicatedRow,
};
pub use estimate::{
    causal_risk_ratio, estimate_weight_model, pointwise_ntcp, pointwise_ntcp_grid,
    pointwise_ntcp_scaled, stochastic_ntcp, EstimatorOptions, InterventionKind, InterventionSpec,
    StochasticEstimate, StratumSummary, WeightModel, WeightOptions,
};
pub use fit::fit_msm;
pub use metrics::{fit_metrics, FitMetrics};

use crate::dvh::{Cohort, DoseGrid, DvhError};
use crate::surface::{KernelStats, MonotonePointConfig, PriorConfig, SurfaceError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MsmError {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),
    #[error(transparent)]
    Dvh(#[from] DvhError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("covariate stratum {0:?} has no patients")]
    EmptyStratum(Vec<i64>),
    #[error("risk-ratio denominator {0} is too close to zero")]
    DegenerateDenominator(f64),
    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapFailed { failed: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Intercept plus linear terms in dose and volume.
    Linear,
    /// Linear terms plus squared dose and squared volume, no interaction.
    Polynomial,
    /// Separate monotone functions of dose and of volume, added.
    AdditiveMonotone,
    /// One monotone function of dose and volume jointly.
    BivariableMonotone,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Linear,
        ModelFamily::Polynomial,
        ModelFamily::AdditiveMonotone,
        ModelFamily::BivariableMonotone,
    ];

    pub fn is_monotone(self) -> bool {
        matches!(self, ModelFamily::AdditiveMonotone | ModelFamily::BivariableMonotone)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Linear => "linear",
            ModelFamily::Polynomial => "polynomial",
            ModelFamily::AdditiveMonotone => "additive_monotone",
            ModelFamily::BivariableMonotone => "bivariable_monotone",
        }
    }

    /// Number of dose-volume coefficients (intercept included) for the
    /// parametric families.
    pub(crate) fn parametric_terms(self) -> usize {
        match self {
            ModelFamily::Linear => 3,
            ModelFamily::Polynomial => 5,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Reversible-jump updates of each monotone component per iteration.
    pub surface_steps: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self { iterations: 2000, burn_in: 1000, thinning: 1, seed: 0, surface_steps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// Indices of cohort covariates entering the model; `None` uses all of
    /// them and an empty list fits an unadjusted model.
    pub covariates: Option<Vec<usize>>,
    pub mcmc: McmcSettings,
    pub prior: PriorConfig,
    /// Normal prior sd for regression coefficients.
    pub coefficient_prior_sd: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            family: ModelFamily::BivariableMonotone,
            covariates: None,
            mcmc: McmcSettings::default(),
            prior: PriorConfig::default(),
            coefficient_prior_sd: 10.0,
        }
    }
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        Self { family, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), MsmError> {
        let m = &self.mcmc;
        if m.iterations <= m.burn_in {
            return Err(MsmError::InvalidSpec(format!(
                "iterations ({}) must exceed burn_in ({})",
                m.iterations, m.burn_in
            )));
        }
        if m.thinning == 0 {
            return Err(MsmError::InvalidSpec("thinning must be at least 1".into()));
        }
        if m.surface_steps == 0 && self.family.is_monotone() {
            return Err(MsmError::InvalidSpec("surface_steps must be at least 1".into()));
        }
        if !(self.coefficient_prior_sd > 0.0 && self.coefficient_prior_sd.is_finite()) {
            return Err(MsmError::InvalidSpec("coefficient_prior_sd must be positive".into()));
        }
        self.prior.validate()?;
        Ok(())
    }

    /// Covariate indices used by the model, checked against the cohort.
    pub fn covariate_indices(&self, cohort: &Cohort) -> Result<Vec<usize>, MsmError> {
        let p = cohort.covariate_count();
        match &self.covariates {
            None => Ok((0..p).collect()),
            Some(idx) => {
                if let Some(bad) = idx.iter().find(|&&j| j >= p) {
                    return Err(MsmError::InvalidSpec(format!(
                        "covariate index {bad} out of range for {p} covariates"
                    )));
                }
                let mut seen = idx.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != idx.len() {
                    return Err(MsmError::InvalidSpec("duplicate covariate index".into()));
                }
                Ok(idx.clone())
            }
        }
    }
}

/// Dose-volume component of one posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceDraw {
    Bivariable(MonotonePointConfig),
    Additive { dose: MonotonePointConfig, volume: MonotonePointConfig },
    /// Coefficients on `(1, d, g)` or `(1, d, g, d², g²)`.
    Parametric(Vec<f64>),
}

impl SurfaceDraw {
    /// `λ(d, g)` on the rescaled dose axis.
    #[inline]
    pub fn lambda(&self, d: f64, g: f64) -> f64 {
        match self {
            SurfaceDraw::Bivariable(c) => c.value_at(d, g),
            SurfaceDraw::Additive { dose, volume } => dose.value_at(d, 0.0) + volume.value_at(g, 0.0),
            SurfaceDraw::Parametric(theta) => parametric_lambda(theta, d, g),
        }
    }
}

#[inline]
pub(crate) fn parametric_lambda(theta: &[f64], d: f64, g: f64) -> f64 {
    let mut v = theta[0] + theta[1] * d + theta[2] * g;
    if theta.len() == 5 {
        v += theta[3] * d * d + theta[4] * g * g;
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSurface {
    pub d_scaled: Vec<f64>,
    pub g: Vec<f64>,
    /// `values[a][b]` is `λ̂(d_scaled[a], g[b])`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    /// A post-burn-in acceptance rate fell outside `[0.02, 0.95]`.
    NonConvergence { update: String, rate: f64 },
    /// Only one outcome class is present.
    DegenerateOutcome { events: usize, patients: usize },
    /// Proposals rejected because the objective was not a number.
    NumericalRejections { count: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub kernel: KernelStats,
    pub beta_acceptance: Option<f64>,
    /// Acceptance of the joint parametric update.
    pub coefficient_acceptance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmFit {
    pub spec: ModelSpec,
    pub grid: DoseGrid,
    pub covariate_indices: Vec<usize>,
    pub covariate_names: Vec<String>,
    /// Post-burn-in, thinned draws of the covariate coefficients.
    pub beta_draws: Vec<Vec<f64>>,
    pub surface_draws: Vec<SurfaceDraw>,
    /// `-2 ×` quasi-log-likelihood at each retained draw.
    pub draw_deviance: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub quasi_posterior_mean_surface: MeanSurface,
    pub metrics: FitMetrics,
    pub diagnostics: SamplerDiagnostics,
    pub warnings: Vec<FitWarning>,
}

impl MsmFit {
    pub fn family(&self) -> ModelFamily {
        self.spec.family
    }

    /// Quasi-posterior mean of `λ` at a rescaled dose and volume.
    pub fn lambda_hat(&self, d: f64, g: f64) -> f64 {
        let total: f64 = self.surface_draws.iter().map(|s| s.lambda(d, g)).sum();
        total / self.surface_draws.len() as f64
    }

    /// `Σ_j β̂_j x_j` for a full cohort covariate vector.
    pub fn covariate_effect(&self, x_full: &[f64]) -> f64 {
        self.covariate_indices
            .iter()
            .zip(&self.beta_mean)
            .map(|(&j, b)| b * x_full[j])
            .sum()
    }
}

/// Default volume axis for mean-surface summaries: `n` evenly spaced points
/// on `[0, 1]`.
pub(crate) fn unit_axis(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
}
