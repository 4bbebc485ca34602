//! Clustered (patient-level) bootstrap of the causal estimands.

use super::estimate::{causal_risk_ratio, stochastic_ntcp, EstimatorOptions, InterventionKind, InterventionSpec};
use super::fit::fit_msm;
use super::{ModelSpec, MsmError, MsmFit};
use crate::dvh::Cohort;
use crate::par::map_indexed;
use crate::rng::{derive_seed, stream};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub n_boot: usize,
    pub ci_level: f64,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    pub max_failure_fraction: f64,
    /// Give every replicate the same random stream, so all resamples and
    /// refits coincide. Only useful for testing.
    pub shared_stream: bool,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { n_boot: 1000, ci_level: 0.95, seed: 0, workers: None, max_failure_fraction: 0.2, shared_stream: false }
    }
}

/// Intervened risk, model-based observed risk, and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimands {
    pub ntcp: f64,
    pub observed_ntcp: f64,
    pub risk_ratio: f64,
}

impl Estimands {
    pub fn compute(
        fit: &MsmFit,
        cohort: &Cohort,
        intervention: &InterventionSpec,
        options: &EstimatorOptions,
    ) -> Result<Self, MsmError> {
        let ntcp = stochastic_ntcp(fit, cohort, intervention, options)?.value;
        let identity = InterventionSpec {
            kind: InterventionKind::Identity { d_bin: intervention.kind.d_bin() },
            weights: intervention.weights.clone(),
        };
        let observed_ntcp = stochastic_ntcp(fit, cohort, &identity, options)?.value;
        let risk_ratio = causal_risk_ratio(fit, cohort, intervention, options)?;
        Ok(Self { ntcp, observed_ntcp, risk_ratio })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub estimands: Option<Estimands>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: Estimands,
    pub ci_level: f64,
    pub ntcp_ci: Interval,
    pub observed_ntcp_ci: Interval,
    pub risk_ratio_ci: Interval,
    pub failures: usize,
    pub replicates: Vec<ReplicateOutcome>,
}

/// Percentile interval of `values` at `level` (type-7 quantiles).
pub fn percentile_interval(values: &[f64], level: f64) -> Interval {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    Interval { lower: q((1.0 - level) / 2.0), upper: q((1.0 + level) / 2.0) }
}

/// Resample patients with replacement, refit with the same spec, and
/// recompute the estimands. Replicate `b` uses a stream derived from
/// `(seed, b)`, so results do not depend on the worker count.
pub fn clustered_bootstrap(
    cohort: &Cohort,
    spec: &ModelSpec,
    intervention: &InterventionSpec,
    settings: &BootstrapSettings,
    options: &EstimatorOptions,
) -> Result<BootstrapResult, MsmError> {
    if settings.n_boot < 2 {
        return Err(MsmError::InvalidSpec("n_boot must be at least 2".into()));
    }
    if !(settings.ci_level > 0.0 && settings.ci_level < 1.0) {
        return Err(MsmError::InvalidSpec(format!("ci_level {} outside (0, 1)", settings.ci_level)));
    }
    intervention.validate(cohort.grid())?;
    let fit = fit_msm(cohort, spec)?;
    let point = Estimands::compute(&fit, cohort, intervention, options)?;

    let n = cohort.len();
    let replicates = map_indexed(settings.n_boot, settings.workers, |b| {
        let key = if settings.shared_stream { 1 } else { b as u64 + 1 };
        let mut rng = stream(settings.seed, key);
        let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut replicate_spec = spec.clone();
        replicate_spec.mcmc.seed = derive_seed(settings.seed, key);
        let outcome = cohort
            .resample(&indices)
            .map_err(MsmError::from)
            .and_then(|c| fit_msm(&c, &replicate_spec).and_then(|f| Estimands::compute(&f, &c, intervention, options)));
        match outcome {
            Ok(e) => ReplicateOutcome { index: b, estimands: Some(e), error: None },
            Err(e) => ReplicateOutcome { index: b, estimands: None, error: Some(e.to_string()) },
        }
    });

    let ok: Vec<Estimands> = replicates.iter().filter_map(|r| r.estimands).collect();
    let failures = settings.n_boot - ok.len();
    if failures as f64 > settings.max_failure_fraction * settings.n_boot as f64 || ok.is_empty() {
        return Err(MsmError::BootstrapFailed { failed: failures, total: settings.n_boot });
    }
    let column = |f: fn(&Estimands) -> f64| ok.iter().map(f).collect::<Vec<_>>();
    Ok(BootstrapResult {
        point,
        ci_level: settings.ci_level,
        ntcp_ci: percentile_interval(&column(|e| e.ntcp), settings.ci_level),
        observed_ntcp_ci: percentile_interval(&column(|e| e.observed_ntcp), settings.ci_level),
        risk_ratio_ci: percentile_interval(&column(|e| e.risk_ratio), settings.ci_level),
        failures,
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let ci = percentile_interval(&v, 0.9);
        assert!((ci.lower - 5.0).abs() < 1e-9 && (ci.upper - 95.0).abs() < 1e-9);
        let flat = percentile_interval(&[2.0, 2.0], 0.95);
        assert_eq!(flat.lower, flat.upper);
    }
}
