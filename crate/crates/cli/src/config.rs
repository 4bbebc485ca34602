//! Run configuration: a JSON file, overridden by command-line flags.

use crate::error::CliError;
use ntcp_msm::dvh::DvhTolerances;
use ntcp_msm::msm::{EstimatorOptions, InterventionSpec, McmcSettings, ModelFamily, ModelSpec};
use ntcp_msm::sim::{ExperimentConfig, OracleConfig, Sim1Config, Sim2Config};
use ntcp_msm::{Cohort, DoseGrid, PriorConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA: &str = include_str!("../schema/config.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_bins: usize,
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// Covariate columns entering the model, by name; `None` uses all.
    pub covariates: Option<Vec<String>>,
    pub coefficient_prior_sd: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        Self { family: spec.family, covariates: None, coefficient_prior_sd: spec.coefficient_prior_sd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub ci_level: f64,
    pub max_failure_fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_boot: 1000, ci_level: 0.95, max_failure_fraction: 0.2 }
    }
}

/// Lattice for surface and contour exports. `n_d = 0` means one row per
/// dose bin at its lower edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub n_d: usize,
    pub n_g: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { n_d: 0, n_g: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum DesignConfig {
    Sim1(Sim1Config),
    Sim2(Sim2Config),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub design: DesignConfig,
    pub experiment: ExperimentConfig,
    pub oracle: OracleConfig,
    /// Also write every replicate cohort as CSV.
    pub write_cohorts: bool,
    /// Directory of cached truth grids, keyed by content hash.
    pub cache_dir: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            design: DesignConfig::Sim1(Sim1Config::default()),
            experiment: ExperimentConfig::default(),
            oracle: OracleConfig::default(),
            write_cohorts: false,
            cache_dir: PathBuf::from(".ntcp-cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cohort CSV; relative paths are taken from the config file's folder.
    pub input: Option<PathBuf>,
    pub grid: Option<GridConfig>,
    pub tolerances: DvhTolerances,
    pub model: ModelConfig,
    /// `mcmc.seed` is replaced by `seed` when the config is resolved.
    pub mcmc: McmcSettings,
    pub prior: PriorConfig,
    pub intervention: Option<InterventionSpec>,
    pub estimator: EstimatorOptions,
    pub bootstrap: BootstrapConfig,
    pub surface_grid: LatticeConfig,
    pub contour_grid: LatticeConfig,
    pub simulate: Option<SimulateConfig>,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            grid: None,
            tolerances: DvhTolerances::default(),
            model: ModelConfig::default(),
            mcmc: McmcSettings::default(),
            prior: PriorConfig::default(),
            intervention: None,
            estimator: EstimatorOptions::default(),
            bootstrap: BootstrapConfig::default(),
            surface_grid: LatticeConfig::default(),
            contour_grid: LatticeConfig { n_d: 51, n_g: 51 },
            simulate: None,
            seed: 0,
            workers: None,
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Read `path` (or start from defaults) and apply `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                let mut cfg: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                if let Some(input) = cfg.input.as_mut() {
                    if input.is_relative() {
                        *input = base.join(&*input);
                    }
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if overrides.workers.is_some() {
            cfg.workers = overrides.workers;
        }
        if cfg.workers == Some(0) {
            return Err(CliError::Validation("workers must be at least 1".into()));
        }
        cfg.mcmc.seed = cfg.seed;
        if let Some(sim) = cfg.simulate.as_mut() {
            sim.experiment.seed = cfg.seed;
            sim.experiment.workers = cfg.workers;
        }
        Ok(cfg)
    }

    pub fn dose_grid(&self) -> Result<DoseGrid, CliError> {
        let g = self.grid.ok_or_else(|| CliError::Validation("config has no grid (n_bins, d_min, d_max)".into()))?;
        Ok(DoseGrid::new(g.n_bins, g.d_min, g.d_max)?)
    }

    pub fn input_path(&self) -> Result<&Path, CliError> {
        self.input.as_deref().ok_or_else(|| CliError::Validation("config has no input cohort".into()))
    }

    /// Model specification with covariate names mapped to cohort columns.
    pub fn model_spec(&self, cohort: &Cohort) -> Result<ModelSpec, CliError> {
        let covariates = match &self.model.covariates {
            None => None,
            Some(names) => Some(
                names
                    .iter()
                    .map(|n| {
                        cohort.covariate_names().iter().position(|c| c == n).ok_or_else(|| {
                            CliError::Validation(format!("model covariate {n:?} is not a cohort column"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let spec = ModelSpec {
            family: self.model.family,
            covariates,
            mcmc: self.mcmc,
            prior: self.prior,
            coefficient_prior_sd: self.model.coefficient_prior_sd,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn intervention(&self) -> Result<&InterventionSpec, CliError> {
        self.intervention
            .as_ref()
            .ok_or_else(|| CliError::Validation("config has no intervention".into()))
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn keys(v: &serde_json::Value) -> BTreeSet<String> {
        v.as_object().unwrap().keys().cloned().collect()
    }

    #[test]
    fn schema_lists_every_field() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        let mut cfg = RunConfig::default();
        cfg.simulate = Some(SimulateConfig::default());
        cfg.grid = Some(GridConfig { n_bins: 1, d_min: 0.0, d_max: 1.0 });
        let value = serde_json::to_value(&cfg).unwrap();
        assert_eq!(keys(&schema["properties"]), keys(&value));
        for section in [
            "model", "mcmc", "prior", "bootstrap", "tolerances", "estimator", "simulate", "grid", "surface_grid",
        ] {
            let mut node = &schema["properties"][section];
            if let Some(r) = node["$ref"].as_str() {
                node = &schema["$defs"][r.trim_start_matches("#/$defs/")];
            }
            assert_eq!(keys(&node["properties"]), keys(&value[section]), "section {section}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"familly": "linear"}}"#).is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 4, "input": "cohort.csv", "mcmc": {"seed": 99}}"#).unwrap();
        let cfg = RunConfig::load(Some(&path), &Overrides { seed: Some(7), workers: Some(2) }).unwrap();
        assert_eq!((cfg.seed, cfg.mcmc.seed, cfg.workers), (7, 7, Some(2)));
        assert_eq!(cfg.input.unwrap(), dir.path().join("cohort.csv"));
    }
}
