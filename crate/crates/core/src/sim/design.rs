//! Data-generating designs for the two simulation studies.
//!
//! Both designs draw covariates, a mean dose from a domain-shifted Beta law
//! whose shapes depend on the covariates, and a dose spread from a uniform
//! law. The cumulative DVH is the normal upper tail at each bin's lower edge
//! and the outcome is logistic in the mean dose and covariates.

use super::SimError;
use crate::dvh::{normal_dvh, Cohort, DoseGrid, PatientRecord};
use crate::rng::{stream, StreamRng};
use crate::special::{expit, gauss_hermite_normal};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Covariate and dose-parameter law shared by the generators, the truth
/// oracle and the Monte Carlo oracle.
pub trait DoseDesign: Sync {
    fn grid(&self) -> DoseGrid;
    /// `(a_min, a_max)`: support of the mean dose.
    fn mean_dose_range(&self) -> (f64, f64);
    /// `(b_min, b_max)`: support of the dose standard deviation.
    fn sigma_range(&self) -> (f64, f64);
    fn covariate_names(&self) -> Vec<String>;
    fn sample_covariates(&self, rng: &mut StreamRng) -> Vec<f64>;
    /// Beta shapes of the rescaled mean dose given covariates.
    fn beta_shapes(&self, x: &[f64]) -> (f64, f64);
    fn outcome_logit(&self, mu: f64, x: &[f64]) -> f64;
    /// Discrete approximation of the covariate law as `(x, probability)`;
    /// exact for discrete covariates.
    fn covariate_nodes(&self) -> Vec<(Vec<f64>, f64)>;
    /// Truncation intervention `(d_bin, q)` studied with this design, if any.
    fn intervention(&self) -> Option<(usize, f64)>;
    /// Points at which pointwise NTCP is compared with the truth.
    fn evaluation_grid(&self) -> EvaluationGrid;
    fn validate(&self) -> Result<(), SimError>;
}

/// Lattice of rescaled doses and volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    pub d_scaled: Vec<f64>,
    pub g: Vec<f64>,
}

impl EvaluationGrid {
    /// `n_d × n_g` evenly spaced points on `[0, 1]²`.
    pub fn uniform(n_d: usize, n_g: usize) -> Self {
        let axis = |n: usize| (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
        Self { d_scaled: axis(n_d), g: axis(n_g) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub mu: f64,
    pub sigma: f64,
}

/// A generated cohort with the dose parameters behind each DVH. The latents
/// are for validation only; estimators never see them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohort {
    pub cohort: Cohort,
    pub latents: Vec<Latent>,
}

/// Draw `n` patients from `design`.
pub fn generate_cohort<D: DoseDesign + ?Sized>(design: &D, n: usize, seed: u64) -> Result<SimulatedCohort, SimError> {
    design.validate()?;
    if n == 0 {
        return Err(SimError::InvalidConfig("cohort size must be positive".into()));
    }
    let grid = design.grid();
    let (a_min, a_max) = design.mean_dose_range();
    let (b_min, b_max) = design.sigma_range();
    let mut rng = stream(seed, 0);
    let mut patients = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for i in 0..n {
        let x = design.sample_covariates(&mut rng);
        let (alpha, beta) = design.beta_shapes(&x);
        let shape = Beta::new(alpha, beta).map_err(|e| SimError::InvalidConfig(format!("beta shapes: {e}")))?;
        let mu = a_min + (a_max - a_min) * shape.sample(&mut rng);
        let sigma = b_min + (b_max - b_min) * rng.random::<f64>();
        let y = rng.random::<f64>() < expit(design.outcome_logit(mu, &x));
        patients.push(PatientRecord {
            id: format!("sim{:05}", i + 1),
            covariates: x,
            dvh: normal_dvh(mu, sigma, &grid)?,
            outcome: y as u8,
        });
        latents.push(Latent { mu, sigma });
    }
    Ok(SimulatedCohort { cohort: Cohort::new(grid, design.covariate_names(), patients)?, latents })
}

fn check_common(grid: Result<DoseGrid, SimError>, a: (f64, f64), b: (f64, f64)) -> Result<(), SimError> {
    let grid = grid?;
    if !(a.0 < a.1) {
        return Err(SimError::InvalidConfig(format!("mean-dose range {a:?} is empty")));
    }
    if !(b.0 > 0.0 && b.0 < b.1) {
        return Err(SimError::InvalidConfig(format!("sigma range {b:?} must be positive and non-empty")));
    }
    if a.0 < grid.d_min() || a.1 > grid.d_max() {
        return Err(SimError::InvalidConfig(format!(
            "mean-dose range {a:?} outside the grid span [{}, {}]",
            grid.d_min(),
            grid.d_max()
        )));
    }
    Ok(())
}

/// First study: one binary confounder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sim1Config {
    pub n: usize,
    /// `(γ0, γ1, γ2)`: intercept, mean-dose and covariate effects.
    pub gamma: [f64; 3],
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    /// First Beta shape when `X = 1` and when `X = 0`.
    pub alpha_exposed: f64,
    pub alpha_unexposed: f64,
    /// The two Beta shapes add up to this.
    pub shape_sum: f64,
    pub p_x: f64,
    pub n_bins: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub d_star: usize,
    pub q: f64,
    pub seed: u64,
}

impl Default for Sim1Config {
    fn default() -> Self {
        Self {
            n: 100,
            gamma: [-18.0, 0.45, 0.5],
            a_min: 35.0,
            a_max: 45.0,
            b_min: 1.0,
            b_max: 2.0,
            alpha_exposed: 2.0,
            alpha_unexposed: 4.0 / 3.0,
            shape_sum: 2.0 + 4.0 / 3.0,
            p_x: 0.4,
            n_bins: 26,
            d_min: 30.0,
            d_max: 50.0,
            d_star: 14,
            q: 0.8,
            seed: 1,
        }
    }
}

impl DoseDesign for Sim1Config {
    fn grid(&self) -> DoseGrid {
        DoseGrid::new(self.n_bins, self.d_min, self.d_max).expect("validated grid")
    }

    fn mean_dose_range(&self) -> (f64, f64) {
        (self.a_min, self.a_max)
    }

    fn sigma_range(&self) -> (f64, f64) {
        (self.b_min, self.b_max)
    }

    fn covariate_names(&self) -> Vec<String> {
        vec!["x".into()]
    }

    fn sample_covariates(&self, rng: &mut StreamRng) -> Vec<f64> {
        vec![if rng.random::<f64>() < self.p_x { 1.0 } else { 0.0 }]
    }

    fn beta_shapes(&self, x: &[f64]) -> (f64, f64) {
        let alpha = if x[0] == 1.0 { self.alpha_exposed } else { self.alpha_unexposed };
        (alpha, self.shape_sum - alpha)
    }

    fn outcome_logit(&self, mu: f64, x: &[f64]) -> f64 {
        self.gamma[0] + self.gamma[1] * mu + self.gamma[2] * x[0]
    }

    fn covariate_nodes(&self) -> Vec<(Vec<f64>, f64)> {
        vec![(vec![0.0], 1.0 - self.p_x), (vec![1.0], self.p_x)]
    }

    fn intervention(&self) -> Option<(usize, f64)> {
        Some((self.d_star, self.q))
    }

    fn evaluation_grid(&self) -> EvaluationGrid {
        EvaluationGrid::uniform(self.n_bins, self.n_bins)
    }

    fn validate(&self) -> Result<(), SimError> {
        let grid = DoseGrid::new(self.n_bins, self.d_min, self.d_max).map_err(SimError::from);
        check_common(grid, (self.a_min, self.a_max), (self.b_min, self.b_max))?;
        if !(0.0..=1.0).contains(&self.p_x) {
            return Err(SimError::InvalidConfig("p_x must lie in [0, 1]".into()));
        }
        for a in [self.alpha_exposed, self.alpha_unexposed] {
            if !(a > 0.0 && a < self.shape_sum) {
                return Err(SimError::InvalidConfig(format!("shape {a} incompatible with shape_sum {}", self.shape_sum)));
            }
        }
        if self.gamma.iter().any(|g| !g.is_finite()) {
            return Err(SimError::InvalidConfig("gamma must be finite".into()));
        }
        if self.d_star < 1 || self.d_star > self.n_bins || !(self.q > 0.0 && self.q <= 1.0) {
            return Err(SimError::InvalidConfig("intervention (d_star, q) out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    NoConfounding,
    Weak,
    Strong,
}

impl Scenario {
    /// `(γ0, γ1, γ2, γ3)`: intercept, mean dose, binary and continuous
    /// covariate effects.
    pub fn gamma(self) -> [f64; 4] {
        match self {
            Scenario::NoConfounding => [-18.0, 0.45, 0.0, 0.0],
            Scenario::Weak => [-18.0, 0.45, 0.5, 0.5],
            Scenario::Strong => [-21.0, 0.5, 1.0, 3.0],
        }
    }
}

/// Second study: one binary and one standard-normal confounder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sim2Config {
    pub n: usize,
    pub scenario: Scenario,
    /// Coefficients of the Beta-regression linear predictor.
    pub eta_coefs: [f64; 2],
    pub shape_scale: f64,
    pub p_x1: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub n_bins: usize,
    pub d_min: f64,
    pub d_max: f64,
    /// Gauss–Hermite nodes used to integrate over the continuous covariate.
    pub hermite_nodes: usize,
    pub seed: u64,
}

impl Default for Sim2Config {
    fn default() -> Self {
        // Bins of width 20/27 with doses 30 + d·20/27, d = 1..=26.
        Self {
            n: 500,
            scenario: Scenario::Strong,
            eta_coefs: [0.2, 0.5],
            shape_scale: 10.0 / 3.0,
            p_x1: 0.4,
            a_min: 35.0,
            a_max: 45.0,
            b_min: 1.0,
            b_max: 2.0,
            n_bins: 26,
            d_min: 30.0 + 20.0 / 27.0,
            d_max: 50.0,
            hermite_nodes: 24,
            seed: 1,
        }
    }
}

impl Sim2Config {
    fn mean_share(&self, x: &[f64]) -> f64 {
        expit(self.eta_coefs[0] * x[0] + self.eta_coefs[1] * x[1])
    }
}

impl DoseDesign for Sim2Config {
    fn grid(&self) -> DoseGrid {
        DoseGrid::new(self.n_bins, self.d_min, self.d_max).expect("validated grid")
    }

    fn mean_dose_range(&self) -> (f64, f64) {
        (self.a_min, self.a_max)
    }

    fn sigma_range(&self) -> (f64, f64) {
        (self.b_min, self.b_max)
    }

    fn covariate_names(&self) -> Vec<String> {
        vec!["x1".into(), "x2".into()]
    }

    fn sample_covariates(&self, rng: &mut StreamRng) -> Vec<f64> {
        let x1 = if rng.random::<f64>() < self.p_x1 { 1.0 } else { 0.0 };
        let x2: f64 = rng.sample(StandardNormal);
        vec![x1, x2]
    }

    fn beta_shapes(&self, x: &[f64]) -> (f64, f64) {
        let s = self.mean_share(x);
        (self.shape_scale * s, self.shape_scale * (1.0 - s))
    }

    fn outcome_logit(&self, mu: f64, x: &[f64]) -> f64 {
        let g = self.scenario.gamma();
        g[0] + g[1] * mu + g[2] * x[0] + g[3] * x[1]
    }

    fn covariate_nodes(&self) -> Vec<(Vec<f64>, f64)> {
        let rule = gauss_hermite_normal(self.hermite_nodes);
        let mut nodes = Vec::with_capacity(2 * rule.len());
        for (x1, p1) in [(0.0, 1.0 - self.p_x1), (1.0, self.p_x1)] {
            for &(x2, w) in &rule {
                nodes.push((vec![x1, x2], p1 * w));
            }
        }
        nodes
    }

    fn intervention(&self) -> Option<(usize, f64)> {
        None
    }

    fn evaluation_grid(&self) -> EvaluationGrid {
        EvaluationGrid::uniform(10, 10)
    }

    fn validate(&self) -> Result<(), SimError> {
        let grid = DoseGrid::new(self.n_bins, self.d_min, self.d_max).map_err(SimError::from);
        check_common(grid, (self.a_min, self.a_max), (self.b_min, self.b_max))?;
        if !(0.0..=1.0).contains(&self.p_x1) || !(self.shape_scale > 0.0) || self.hermite_nodes < 2 {
            return Err(SimError::InvalidConfig("invalid covariate or shape settings".into()));
        }
        Ok(())
    }
}

/// Study 1 cohort of `cfg.n` patients under `cfg.seed`.
pub fn generate_cohort_sim1(cfg: &Sim1Config) -> Result<SimulatedCohort, SimError> {
    generate_cohort(cfg, cfg.n, cfg.seed)
}

/// Study 2 cohort of `cfg.n` patients under `cfg.seed`.
pub fn generate_cohort_sim2(cfg: &Sim2Config) -> Result<SimulatedCohort, SimError> {
    generate_cohort(cfg, cfg.n, cfg.seed)
}
