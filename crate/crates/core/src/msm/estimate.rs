//! Causal NTCP estimators built on a fitted model.

use super::{MsmError, MsmFit};
use crate::dvh::{Cohort, DoseGrid};
use crate::special::expit;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Population-averaged risk with the volume at `d_bin` fixed to `g_value`.
pub fn pointwise_ntcp(fit: &MsmFit, cohort: &Cohort, d_bin: usize, g_value: f64) -> Result<f64, MsmError> {
    check_bin(cohort.grid(), d_bin)?;
    check_volume(g_value)?;
    pointwise_ntcp_scaled(fit, cohort, cohort.grid().scaled(d_bin), g_value)
}

/// As [`pointwise_ntcp`], at an arbitrary rescaled dose in `[0, 1]`.
pub fn pointwise_ntcp_scaled(fit: &MsmFit, cohort: &Cohort, d_scaled: f64, g_value: f64) -> Result<f64, MsmError> {
    if !(0.0..=1.0).contains(&d_scaled) {
        return Err(MsmError::InvalidIntervention(format!("scaled dose {d_scaled} outside [0, 1]")));
    }
    check_volume(g_value)?;
    let lambda = fit.lambda_hat(d_scaled, g_value);
    let total: f64 = cohort
        .patients()
        .iter()
        .map(|p| expit(fit.covariate_effect(&p.covariates) + lambda))
        .sum();
    Ok(total / cohort.len() as f64)
}

/// Pointwise NTCP on a `d_scaled × g` lattice; row `a` is `d_scaled[a]`.
pub fn pointwise_ntcp_grid(
    fit: &MsmFit,
    cohort: &Cohort,
    d_scaled: &[f64],
    g: &[f64],
) -> Result<Vec<Vec<f64>>, MsmError> {
    if d_scaled.iter().chain(g).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(MsmError::InvalidIntervention("grid values must lie in [0, 1]".into()));
    }
    let effects: Vec<f64> = cohort.patients().iter().map(|p| fit.covariate_effect(&p.covariates)).collect();
    let n = effects.len() as f64;
    Ok(d_scaled
        .iter()
        .map(|&d| {
            g.iter()
                .map(|&v| {
                    let lambda = fit.lambda_hat(d, v);
                    effects.iter().map(|e| expit(e + lambda)).sum::<f64>() / n
                })
                .collect()
        })
        .collect())
}

fn check_bin(grid: &DoseGrid, d_bin: usize) -> Result<(), MsmError> {
    if !grid.contains_bin(d_bin) {
        return Err(MsmError::InvalidIntervention(format!(
            "dose bin {d_bin} outside 1..={}",
            grid.n_bins()
        )));
    }
    Ok(())
}

fn check_volume(g: f64) -> Result<(), MsmError> {
    if !(0.0..=1.0).contains(&g) {
        return Err(MsmError::InvalidIntervention(format!("volume {g} outside [0, 1]")));
    }
    Ok(())
}

/// How covariates are turned into strata for the weight model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightOptions {
    /// Cohort covariates that define strata; `None` uses all of them.
    pub covariates: Option<Vec<usize>>,
    /// Quantile bins for covariates treated as continuous.
    pub continuous_bins: usize,
    /// Integer-valued covariates with at most this many levels are used as
    /// they are; others are binned.
    pub max_discrete_levels: usize,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self { covariates: None, continuous_bins: 4, max_discrete_levels: 10 }
    }
}

/// Per-stratum empirical distribution of the volume at one dose bin.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightModel {
    d_bin: usize,
    covariates: Vec<usize>,
    /// Bin edges for each stratifying covariate; `None` for discrete ones.
    cutpoints: Vec<Option<Vec<f64>>>,
    strata: BTreeMap<Vec<i64>, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub key: Vec<i64>,
    pub count: usize,
}

fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Estimate `F̂(· | x)` of `G_{d_bin}` per covariate stratum. Point masses at
/// 0 and 1 are kept as they appear in the data.
pub fn estimate_weight_model(cohort: &Cohort, d_bin: usize, options: &WeightOptions) -> Result<WeightModel, MsmError> {
    check_bin(cohort.grid(), d_bin)?;
    let p = cohort.covariate_count();
    let covariates = match &options.covariates {
        None => (0..p).collect::<Vec<_>>(),
        Some(c) => {
            if let Some(bad) = c.iter().find(|&&j| j >= p) {
                return Err(MsmError::InvalidSpec(format!("stratum covariate {bad} out of range")));
            }
            c.clone()
        }
    };
    if options.continuous_bins == 0 {
        return Err(MsmError::InvalidSpec("continuous_bins must be at least 1".into()));
    }
    let cutpoints = covariates
        .iter()
        .map(|&j| {
            let mut values: Vec<f64> = cohort.patients().iter().map(|r| r.covariates[j]).collect();
            values.sort_by(f64::total_cmp);
            let mut levels = values.clone();
            levels.dedup();
            let integral = values.iter().all(|v| v.fract() == 0.0);
            if integral && levels.len() <= options.max_discrete_levels {
                None
            } else {
                let bins = options.continuous_bins;
                let mut cuts: Vec<f64> =
                    (1..bins).map(|k| quantile_type7(&values, k as f64 / bins as f64)).collect();
                cuts.dedup();
                Some(cuts)
            }
        })
        .collect();
    let mut model = WeightModel { d_bin, covariates, cutpoints, strata: BTreeMap::new() };
    for rec in cohort.patients() {
        let key = model.stratum_key(&rec.covariates);
        model.strata.entry(key).or_default().push(rec.dvh.at(d_bin));
    }
    for values in model.strata.values_mut() {
        values.sort_by(f64::total_cmp);
    }
    Ok(model)
}

impl WeightModel {
    pub fn d_bin(&self) -> usize {
        self.d_bin
    }

    pub fn stratum_key(&self, x_full: &[f64]) -> Vec<i64> {
        self.covariates
            .iter()
            .zip(&self.cutpoints)
            .map(|(&j, cuts)| match cuts {
                None => x_full[j] as i64,
                Some(c) => c.iter().filter(|&&edge| x_full[j] > edge).count() as i64,
            })
            .collect()
    }

    /// `F̂(q | x)`.
    pub fn cdf(&self, x_full: &[f64], q: f64) -> Result<f64, MsmError> {
        let key = self.stratum_key(x_full);
        let values = self.strata.get(&key).ok_or(MsmError::EmptyStratum(key))?;
        let below = values.partition_point(|&v| v <= q + 1e-12);
        Ok(below as f64 / values.len() as f64)
    }

    pub fn strata(&self) -> Vec<StratumSummary> {
        self.strata.iter().map(|(k, v)| StratumSummary { key: k.clone(), count: v.len() }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InterventionKind {
    /// Observed volume distribution at `d_bin`: the model-based observed risk.
    Identity { d_bin: usize },
    /// Volume at `d_bin` fixed to `g_value` for everyone.
    PointwiseDeterministic { d_bin: usize, g_value: f64 },
    /// Observed volume law at `d_bin` truncated to `[0, q]`.
    TruncateUpper { d_bin: usize, q: f64 },
}

impl InterventionKind {
    pub fn d_bin(&self) -> usize {
        match *self {
            InterventionKind::Identity { d_bin }
            | InterventionKind::PointwiseDeterministic { d_bin, .. }
            | InterventionKind::TruncateUpper { d_bin, .. } => d_bin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    #[serde(default)]
    pub weights: WeightOptions,
}

impl InterventionSpec {
    pub fn new(kind: InterventionKind) -> Self {
        Self { kind, weights: WeightOptions::default() }
    }

    pub fn validate(&self, grid: &DoseGrid) -> Result<(), MsmError> {
        check_bin(grid, self.kind.d_bin())?;
        match self.kind {
            InterventionKind::PointwiseDeterministic { g_value, .. } => check_volume(g_value),
            InterventionKind::TruncateUpper { q, .. } if !(q > 0.0 && q <= 1.0) => {
                Err(MsmError::InvalidIntervention(format!("threshold q = {q} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    /// Largest importance weight tolerated before a positivity warning.
    pub positivity_threshold: f64,
    /// Cap weights at this percentile (in `(0, 100]`) of the weights.
    pub weight_truncation_percentile: Option<f64>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { positivity_threshold: 10.0, weight_truncation_percentile: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticEstimate {
    pub value: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
    /// `Σ w / max w`.
    pub effective_sample_size: f64,
    pub positivity_warning: bool,
}

/// Importance-weighted average of model risks under an intervention on the
/// volume at one dose bin.
pub fn stochastic_ntcp(
    fit: &MsmFit,
    cohort: &Cohort,
    intervention: &InterventionSpec,
    options: &EstimatorOptions,
) -> Result<StochasticEstimate, MsmError> {
    intervention.validate(cohort.grid())?;
    let d_bin = intervention.kind.d_bin();
    let n = cohort.len() as f64;
    if let InterventionKind::PointwiseDeterministic { g_value, .. } = intervention.kind {
        let value = pointwise_ntcp(fit, cohort, d_bin, g_value)?;
        return Ok(StochasticEstimate {
            value,
            mean_weight: 1.0,
            max_weight: 1.0,
            effective_sample_size: n,
            positivity_warning: false,
        });
    }

    let d = cohort.grid().scaled(d_bin);
    let risks: Vec<f64> = cohort
        .patients()
        .iter()
        .map(|p| expit(fit.covariate_effect(&p.covariates) + fit.lambda_hat(d, p.dvh.at(d_bin))))
        .collect();

    let mut weights = match intervention.kind {
        InterventionKind::TruncateUpper { q, .. } => {
            let model = estimate_weight_model(cohort, d_bin, &intervention.weights)?;
            let mut w = Vec::with_capacity(cohort.len());
            for p in cohort.patients() {
                let f = model.cdf(&p.covariates, q)?;
                let kept = p.dvh.at(d_bin) <= q + 1e-12;
                w.push(if kept && f > 0.0 { 1.0 / f } else { 0.0 });
            }
            w
        }
        _ => vec![1.0; cohort.len()],
    };
    if let Some(pct) = options.weight_truncation_percentile {
        if !(pct > 0.0 && pct <= 100.0) {
            return Err(MsmError::InvalidIntervention(format!("truncation percentile {pct} outside (0, 100]")));
        }
        let mut sorted = weights.clone();
        sorted.sort_by(f64::total_cmp);
        let cap = quantile_type7(&sorted, pct / 100.0);
        weights.iter_mut().for_each(|w| *w = w.min(cap));
    }

    let value = risks.iter().zip(&weights).map(|(p, w)| p * w).sum::<f64>() / n;
    let total_w: f64 = weights.iter().sum();
    let max_weight = weights.iter().cloned().fold(0.0, f64::max);
    Ok(StochasticEstimate {
        value,
        mean_weight: total_w / n,
        max_weight,
        effective_sample_size: if max_weight > 0.0 { total_w / max_weight } else { 0.0 },
        positivity_warning: max_weight > options.positivity_threshold || max_weight == 0.0,
    })
}

/// Intervened risk over the model-based observed risk at the same dose bin.
pub fn causal_risk_ratio(
    fit: &MsmFit,
    cohort: &Cohort,
    intervention: &InterventionSpec,
    options: &EstimatorOptions,
) -> Result<f64, MsmError> {
    let numerator = stochastic_ntcp(fit, cohort, intervention, options)?.value;
    let identity = InterventionSpec {
        kind: InterventionKind::Identity { d_bin: intervention.kind.d_bin() },
        weights: intervention.weights.clone(),
    };
    let denominator = stochastic_ntcp(fit, cohort, &identity, options)?.value;
    if denominator < 1e-10 {
        return Err(MsmError::DegenerateDenominator(denominator));
    }
    Ok(numerator / denominator)
}
