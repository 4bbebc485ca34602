//! Browser bindings for the first simulation design: draw a cohort, map the
//! true pointwise NTCP, and fit a model to estimate the effect of capping
//! the volume at one dose bin. Results cross the boundary as JSON strings.

use ntcp_msm::msm::{
    causal_risk_ratio, fit_msm, pointwise_ntcp_grid, stochastic_ntcp, EstimatorOptions, InterventionKind,
    InterventionSpec, McmcSettings,
};
use ntcp_msm::sim::{
    generate_cohort_sim1, true_stochastic_ntcp, truth_grid, EvaluationGrid, OracleConfig, Sim1Config, SimError,
};
use ntcp_msm::{ModelFamily, ModelSpec, MsmError};
use serde::Serialize;
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Msm(#[from] MsmError),
    #[error(transparent)]
    Oracle(#[from] ntcp_msm::sim::OracleError),
    #[error("unknown model family {0:?}")]
    Family(String),
    #[error("{0} must be between {1} and {2}")]
    OutOfRange(&'static str, f64, f64),
}

fn in_range(name: &'static str, v: f64, lo: f64, hi: f64) -> Result<(), DemoError> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(DemoError::OutOfRange(name, lo, hi))
    }
}

/// The design with a user-chosen confounder effect on the outcome logit.
fn design(n: usize, seed: u64, confounding: f64) -> Result<Sim1Config, DemoError> {
    in_range("confounder effect", confounding, -3.0, 3.0)?;
    let mut cfg = Sim1Config { n, seed, ..Default::default() };
    cfg.gamma[2] = confounding;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub exposed: bool,
    pub outcome: u8,
    pub volume: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct CohortView {
    pub dose_gy: Vec<f64>,
    pub curves: Vec<Curve>,
}

pub fn cohort_curves(n: usize, seed: u64, confounding: f64) -> Result<CohortView, DemoError> {
    in_range("patients", n as f64, 1.0, 500.0)?;
    let cfg = design(n, seed, confounding)?;
    let cohort = generate_cohort_sim1(&cfg)?.cohort;
    let grid = cohort.grid();
    Ok(CohortView {
        dose_gy: (1..=grid.n_bins()).map(|b| grid.lower_edge(b)).collect(),
        curves: cohort
            .patients()
            .iter()
            .map(|p| Curve { exposed: p.covariates[0] > 0.5, outcome: p.outcome, volume: p.dvh.values().to_vec() })
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct Heatmap {
    pub dose_gy: Vec<f64>,
    pub volume: Vec<f64>,
    /// `ntcp[a][b]` at `(dose_gy[a], volume[b])`; null outside the support.
    pub ntcp: Vec<Vec<Option<f64>>>,
}

pub fn truth_heatmap(resolution: usize, confounding: f64) -> Result<Heatmap, DemoError> {
    in_range("resolution", resolution as f64, 2.0, 41.0)?;
    let cfg = design(1, 0, confounding)?;
    let t = truth_grid(&cfg, &EvaluationGrid::uniform(resolution, resolution), &OracleConfig::default(), Some(1))?;
    Ok(Heatmap { dose_gy: t.d_gy, volume: t.g, ntcp: t.values })
}

#[derive(Debug, Serialize)]
pub struct FitView {
    pub family: ModelFamily,
    pub dose_gy: f64,
    pub q: f64,
    pub ntcp: f64,
    pub observed_ntcp: f64,
    pub risk_ratio: f64,
    pub true_ntcp: f64,
    pub max_weight: f64,
    pub surface: Heatmap,
}

fn family(name: &str) -> Result<ModelFamily, DemoError> {
    serde_json::from_value(serde_json::Value::String(name.into())).map_err(|_| DemoError::Family(name.into()))
}

pub fn fit_view(
    n: usize,
    seed: u64,
    confounding: f64,
    family_name: &str,
    iterations: usize,
    d_bin: usize,
    q: f64,
) -> Result<FitView, DemoError> {
    in_range("patients", n as f64, 10.0, 500.0)?;
    in_range("iterations", iterations as f64, 20.0, 5000.0)?;
    in_range("q", q, 0.01, 1.0)?;
    let cfg = design(n, seed, confounding)?;
    let cohort = generate_cohort_sim1(&cfg)?.cohort;
    let mut spec = ModelSpec::new(family(family_name)?);
    spec.mcmc = McmcSettings { iterations, burn_in: iterations / 2, seed, ..Default::default() };
    let fit = fit_msm(&cohort, &spec)?;

    let intervention = InterventionSpec::new(InterventionKind::TruncateUpper { d_bin, q });
    intervention.validate(cohort.grid())?;
    let opts = EstimatorOptions::default();
    let est = stochastic_ntcp(&fit, &cohort, &intervention, &opts)?;
    let observed = InterventionSpec::new(InterventionKind::Identity { d_bin });
    let observed_ntcp = stochastic_ntcp(&fit, &cohort, &observed, &opts)?.value;
    let risk_ratio = causal_risk_ratio(&fit, &cohort, &intervention, &opts)?;

    let axis: Vec<f64> = (0..21).map(|j| j as f64 / 20.0).collect();
    let grid = cohort.grid();
    let values = pointwise_ntcp_grid(&fit, &cohort, &axis, &axis)?;
    Ok(FitView {
        family: spec.family,
        dose_gy: grid.lower_edge(d_bin),
        q,
        ntcp: est.value,
        observed_ntcp,
        risk_ratio,
        true_ntcp: true_stochastic_ntcp(&cfg, d_bin, q, &OracleConfig::default())?,
        max_weight: est.max_weight,
        surface: Heatmap {
            dose_gy: axis.iter().map(|&s| grid.dose_at_scaled(s)).collect(),
            volume: axis.clone(),
            ntcp: values.into_iter().map(|row| row.into_iter().map(Some).collect()).collect(),
        },
    })
}

fn to_js<T: Serialize>(r: Result<T, DemoError>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = cohortCurves)]
pub fn cohort_curves_js(n: usize, seed: u32, confounding: f64) -> Result<String, JsError> {
    to_js(cohort_curves(n, seed.into(), confounding))
}

#[wasm_bindgen(js_name = truthHeatmap)]
pub fn truth_heatmap_js(resolution: usize, confounding: f64) -> Result<String, JsError> {
    to_js(truth_heatmap(resolution, confounding))
}

#[wasm_bindgen(js_name = fitRiskRatio)]
pub fn fit_view_js(
    n: usize,
    seed: u32,
    confounding: f64,
    family: &str,
    iterations: usize,
    d_bin: usize,
    q: f64,
) -> Result<String, JsError> {
    to_js(fit_view(n, seed.into(), confounding, family, iterations, d_bin, q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_are_non_increasing_and_seeded() {
        let a = cohort_curves(30, 4, 0.5).unwrap();
        assert_eq!(a.dose_gy.len(), 26);
        assert_eq!(a.curves.len(), 30);
        for c in &a.curves {
            assert!(c.volume.windows(2).all(|w| w[1] <= w[0]));
        }
        let b = cohort_curves(30, 4, 0.5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn heatmap_increases_along_both_axes() {
        let h = truth_heatmap(6, 0.5).unwrap();
        assert_eq!(h.ntcp.len(), 6);
        let cells: Vec<(usize, usize, f64)> = h
            .ntcp
            .iter()
            .enumerate()
            .flat_map(|(a, row)| row.iter().enumerate().filter_map(move |(b, v)| v.map(|v| (a, b, v))))
            .collect();
        assert!(!cells.is_empty());
        for &(a, b, v) in &cells {
            for &(a2, b2, v2) in &cells {
                if a2 >= a && b2 >= b {
                    assert!(v2 >= v - 1e-9, "({a},{b})={v} > ({a2},{b2})={v2}");
                }
            }
        }
    }

    #[test]
    fn quick_fit_reports_a_ratio() {
        let f = fit_view(80, 3, 0.5, "additive_monotone", 60, 14, 0.8).unwrap();
        assert!(f.risk_ratio > 0.0 && f.risk_ratio.is_finite());
        assert!((f.dose_gy - 40.0).abs() < 1e-9);
        assert!(f.true_ntcp > 0.0 && f.true_ntcp < 1.0);
        let json = to_js(Ok(f)).unwrap();
        assert!(json.contains("\"family\":\"additive_monotone\""));
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(matches!(fit_view(80, 3, 0.5, "spline", 60, 14, 0.8), Err(DemoError::Family(_))));
        assert!(matches!(fit_view(80, 3, 0.5, "linear", 60, 99, 0.8), Err(DemoError::Msm(_))));
        assert!(matches!(truth_heatmap(100, 0.5), Err(DemoError::OutOfRange(..))));
    }
}
