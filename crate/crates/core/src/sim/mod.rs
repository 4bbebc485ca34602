//! Simulation designs, true-estimand oracles and the experiment runner.

pub mod design;
pub mod experiment;
pub mod mc;
pub mod oracle;

pub use design::{
    generate_cohort, generate_cohort_sim1, generate_cohort_sim2, DoseDesign, EvaluationGrid, Latent, Scenario,
    Sim1Config, Sim2Config, SimulatedCohort,
};
pub use experiment::{
    run_experiment, CellStats, ExperimentConfig, ExperimentReport, FamilyConfig, FamilyReport, StochasticStats,
};
pub use mc::{mc_pointwise_band, mc_truth_oracle, McEstimate, McIntervention};
pub use oracle::{
    jacobian, mu_bounds, sigma_from, true_pointwise_ntcp, true_stochastic_ntcp, truth_grid, OracleConfig,
    OracleError, QuadratureMethod, TruthGrid,
};

use crate::dvh::DvhError;
use crate::msm::MsmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dvh(#[from] DvhError),
    #[error(transparent)]
    Msm(#[from] MsmError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{failed} of {total} replicate fits failed")]
    TooManyFailures { failed: usize, total: usize },
}
