//! Causal normal-tissue complication probability (NTCP) from dose-volume
//! histograms.
//!
//! The crate fits marginal structural models whose dose-volume component is a
//! monotone surface sampled by reversible-jump MCMC, computes pointwise and
//! stochastic-intervention NTCP estimates with clustered-bootstrap intervals,
//! and ships a simulation engine with a numerical-integration truth oracle.

pub mod dvh;
pub mod msm;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod special;
pub mod surface;

pub use dvh::{Cohort, CumulativeDvh, DifferentialDvh, DoseGrid, DvhError, PatientRecord};
pub use msm::{ModelFamily, ModelSpec, MsmError, MsmFit};
pub use surface::{MonotonePointConfig, PriorConfig, SupportPoint};
