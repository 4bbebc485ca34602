//! Repeated-sampling experiment: generate, fit, compare with the truth.

use super::design::DoseDesign;
use super::oracle::TruthGrid;
use super::SimError;
use crate::msm::{
    fit_msm, pointwise_ntcp_grid, stochastic_ntcp, EstimatorOptions, FitMetrics, InterventionKind, InterventionSpec,
    McmcSettings, ModelFamily, ModelSpec, MsmError,
};
use crate::par::map_indexed;
use crate::rng::derive_seed;
use crate::surface::PriorConfig;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// One model family to fit, with or without the design's confounders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub label: String,
    pub family: ModelFamily,
    pub adjusted: bool,
}

impl FamilyConfig {
    pub fn adjusted(family: ModelFamily) -> Self {
        Self { label: family.name().to_string(), family, adjusted: true }
    }

    pub fn unadjusted(family: ModelFamily) -> Self {
        Self { label: format!("{} (unadjusted)", family.name()), family, adjusted: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub replicates: usize,
    pub n: usize,
    pub families: Vec<FamilyConfig>,
    pub mcmc: McmcSettings,
    pub prior: PriorConfig,
    pub seed: u64,
    pub workers: Option<usize>,
    /// Reuse replicate 0's cohort and seeds everywhere. Only for testing.
    pub identical_replicates: bool,
    /// Also estimate the design's truncation intervention, if it has one.
    pub estimate_stochastic: bool,
    pub max_failure_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replicates: 104,
            n: 100,
            families: ModelFamily::ALL.iter().map(|&f| FamilyConfig::adjusted(f)).collect(),
            mcmc: McmcSettings { iterations: 2000, burn_in: 1000, ..Default::default() },
            prior: PriorConfig::default(),
            seed: 1,
            workers: None,
            identical_replicates: false,
            estimate_stochastic: true,
            max_failure_fraction: 0.2,
        }
    }
}

/// Replicate summaries at one evaluable lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub d_scaled: f64,
    pub d_gy: f64,
    pub g: f64,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mcsd: f64,
    pub rmse: f64,
    pub mce: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticStats {
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mcsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub label: String,
    pub family: ModelFamily,
    pub adjusted: bool,
    pub successes: usize,
    pub failures: Vec<String>,
    pub cells: Vec<CellStats>,
    /// Grid averages over the evaluable cells.
    pub mean_abs_bias: f64,
    pub mean_mcsd: f64,
    pub mean_rmse: f64,
    pub mean_mce: f64,
    /// Replicate means of the in-sample metrics.
    pub metrics: FitMetrics,
    pub stochastic: Option<StochasticStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n: usize,
    pub replicates: usize,
    pub families: Vec<FamilyReport>,
}

struct ReplicateFit {
    grid: Vec<Vec<f64>>,
    metrics: FitMetrics,
    stochastic: Option<f64>,
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Fit every family to `R` independent cohorts of size `n` and summarize
/// estimation error against `truth`. Failed fits are recorded; a family
/// with too many failures aborts the run.
pub fn run_experiment<D: DoseDesign + ?Sized>(
    design: &D,
    cfg: &ExperimentConfig,
    truth: &TruthGrid,
) -> Result<ExperimentReport, SimError> {
    design.validate()?;
    if cfg.replicates < 2 {
        return Err(SimError::InvalidConfig("at least two replicates are needed".into()));
    }
    if cfg.families.is_empty() {
        return Err(SimError::InvalidConfig("no model families given".into()));
    }
    let intervention = match (cfg.estimate_stochastic, design.intervention()) {
        (true, Some((d_bin, q))) => Some(InterventionSpec::new(InterventionKind::TruncateUpper { d_bin, q })),
        _ => None,
    };
    let specs: Vec<ModelSpec> = cfg
        .families
        .iter()
        .map(|f| {
            let spec = ModelSpec {
                family: f.family,
                covariates: if f.adjusted { None } else { Some(Vec::new()) },
                mcmc: cfg.mcmc,
                prior: cfg.prior.clone(),
                ..Default::default()
            };
            spec.validate().map(|_| spec)
        })
        .collect::<Result<_, _>>()?;

    let per_replicate = map_indexed(cfg.replicates, cfg.workers, |r| {
        let key = if cfg.identical_replicates { 0 } else { r as u64 };
        let cohort_seed = derive_seed(cfg.seed, 2 * key);
        let fit_seed = derive_seed(cfg.seed, 2 * key + 1);
        let cohort = match super::design::generate_cohort(design, cfg.n, cohort_seed) {
            Ok(c) => c.cohort,
            Err(e) => return specs.iter().map(|_| Err(format!("replicate {r}: {e}"))).collect(),
        };
        specs
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let mut spec = spec.clone();
                spec.mcmc.seed = derive_seed(fit_seed, k as u64);
                let run = || -> Result<ReplicateFit, MsmError> {
                    let fit = fit_msm(&cohort, &spec)?;
                    let grid = pointwise_ntcp_grid(&fit, &cohort, &truth.d_scaled, &truth.g)?;
                    let stochastic = match &intervention {
                        Some(iv) => Some(stochastic_ntcp(&fit, &cohort, iv, &EstimatorOptions::default())?.value),
                        None => None,
                    };
                    Ok(ReplicateFit { grid, metrics: fit.metrics, stochastic })
                };
                run().map_err(|e| format!("replicate {r}: {e}"))
            })
            .collect::<Vec<_>>()
    });

    let mut families = Vec::with_capacity(specs.len());
    for (k, fam) in cfg.families.iter().enumerate() {
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for rep in &per_replicate {
            match &rep[k] {
                Ok(f) => ok.push(f),
                Err(e) => failures.push(e.clone()),
            }
        }
        if failures.len() as f64 > cfg.max_failure_fraction * cfg.replicates as f64 || ok.len() < 2 {
            return Err(SimError::TooManyFailures { failed: failures.len(), total: cfg.replicates });
        }
        families.push(summarize(fam, &ok, failures, truth));
    }
    Ok(ExperimentReport { n: cfg.n, replicates: cfg.replicates, families })
}

fn summarize(fam: &FamilyConfig, fits: &[&ReplicateFit], failures: Vec<String>, truth: &TruthGrid) -> FamilyReport {
    let r = fits.len() as f64;
    let mut cells = Vec::new();
    for (a, row) in truth.values.iter().enumerate() {
        for (b, t) in row.iter().enumerate() {
            let Some(t) = *t else { continue };
            let est: Vec<f64> = fits.iter().map(|f| f.grid[a][b]).collect();
            let mean = est.iter().sum::<f64>() / r;
            let bias = mean - t;
            let mcsd = sample_sd(&est);
            cells.push(CellStats {
                d_scaled: truth.d_scaled[a],
                d_gy: truth.d_gy[a],
                g: truth.g[b],
                truth: t,
                mean_estimate: mean,
                bias,
                mcsd,
                rmse: (bias * bias + mcsd * mcsd).sqrt(),
                mce: mcsd / r.sqrt(),
            });
        }
    }
    let avg = |f: fn(&CellStats) -> f64| cells.iter().map(f).sum::<f64>() / cells.len().max(1) as f64;
    let mavg = |f: fn(&FitMetrics) -> f64| fits.iter().map(|x| f(&x.metrics)).sum::<f64>() / r;
    let metrics = FitMetrics {
        brier: mavg(|m| m.brier),
        brier_raw: mavg(|m| m.brier_raw),
        deviance_mean: mavg(|m| m.deviance_mean),
        deviance_at_mean: mavg(|m| m.deviance_at_mean),
        k_effective: mavg(|m| m.k_effective),
        dic: mavg(|m| m.dic),
    };
    let stochastic = match (truth.stochastic, fits.iter().map(|f| f.stochastic).collect::<Option<Vec<_>>>()) {
        (Some(t), Some(est)) => {
            let mean = est.iter().sum::<f64>() / r;
            Some(StochasticStats { truth: t, mean_estimate: mean, bias: mean - t, mcsd: sample_sd(&est) })
        }
        _ => None,
    };
    FamilyReport {
        label: fam.label.clone(),
        family: fam.family,
        adjusted: fam.adjusted,
        successes: fits.len(),
        failures,
        mean_abs_bias: avg(|c| c.bias.abs()),
        mean_mcsd: avg(|c| c.mcsd),
        mean_rmse: avg(|c| c.rmse),
        mean_mce: avg(|c| c.mce),
        cells,
        metrics,
        stochastic,
    }
}

impl ExperimentReport {
    /// One row per family in the layout of the usual summary table.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("model,adjusted,n,replicates,abs_bias,mcsd,rmse,mce,brier,deviance,k,dic\n");
        for f in &self.families {
            let m = &f.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4}",
                f.label, f.adjusted, self.n, f.successes, f.mean_abs_bias, f.mean_mcsd, f.mean_rmse, f.mean_mce,
                m.brier, m.deviance_mean, m.k_effective, m.dic
            );
        }
        s
    }

    /// Per-cell summaries for every family.
    pub fn grid_csv(&self) -> String {
        let mut s = String::from("model,d_gy,volume,truth,mean_est,bias,mcsd,rmse\n");
        for f in &self.families {
            for c in &f.cells {
                let _ = writeln!(
                    s,
                    "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    f.label, c.d_gy, c.g, c.truth, c.mean_estimate, c.bias, c.mcsd, c.rmse
                );
            }
        }
        s
    }

    pub fn family(&self, label: &str) -> Option<&FamilyReport> {
        self.families.iter().find(|f| f.label == label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{truth_grid, EvaluationGrid, OracleConfig, Sim1Config};

    fn small_truth(design: &Sim1Config) -> TruthGrid {
        let eval = EvaluationGrid { d_scaled: vec![0.4, 0.5], g: vec![0.3, 0.6] };
        truth_grid(design, &eval, &OracleConfig::default(), Some(1)).unwrap()
    }

    fn quick(families: Vec<FamilyConfig>) -> ExperimentConfig {
        ExperimentConfig {
            replicates: 2,
            n: 40,
            families,
            mcmc: McmcSettings { iterations: 60, burn_in: 30, surface_steps: 2, ..Default::default() },
            workers: Some(1),
            ..Default::default()
        }
    }

    #[test]
    fn identical_replicates_have_zero_spread() {
        let design = Sim1Config::default();
        let truth = small_truth(&design);
        let cfg = ExperimentConfig {
            identical_replicates: true,
            ..quick(vec![FamilyConfig::adjusted(ModelFamily::AdditiveMonotone)])
        };
        let report = run_experiment(&design, &cfg, &truth).unwrap();
        let fam = &report.families[0];
        assert_eq!(fam.cells.len(), truth.evaluable_cells());
        for c in &fam.cells {
            assert_eq!(c.mcsd, 0.0);
            assert_eq!(c.rmse, c.bias.abs());
        }
        assert_eq!(fam.stochastic.unwrap().mcsd, 0.0);
    }

    #[test]
    fn rmse_and_mce_identities() {
        let design = Sim1Config::default();
        let truth = small_truth(&design);
        let cfg = quick(vec![FamilyConfig::adjusted(ModelFamily::Linear), FamilyConfig::unadjusted(ModelFamily::Linear)]);
        let report = run_experiment(&design, &cfg, &truth).unwrap();
        for f in &report.families {
            for c in &f.cells {
                assert!((c.rmse * c.rmse - (c.bias * c.bias + c.mcsd * c.mcsd)).abs() < 1e-15);
                assert_eq!(c.mce, c.mcsd / 2f64.sqrt());
            }
        }
        assert_eq!(report.table_csv().lines().count(), 3);
        let again = run_experiment(&design, &cfg, &truth).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn rejects_single_replicate() {
        let design = Sim1Config::default();
        let truth = small_truth(&design);
        let cfg = ExperimentConfig { replicates: 1, ..quick(vec![FamilyConfig::adjusted(ModelFamily::Linear)]) };
        assert!(matches!(run_experiment(&design, &cfg, &truth), Err(SimError::InvalidConfig(_))));
    }
}
