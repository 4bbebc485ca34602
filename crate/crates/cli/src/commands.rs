use crate::cohort_csv::{read_cohort, write_cohort};
use crate::config::{DesignConfig, LatticeConfig, RunConfig, SimulateConfig};
use crate::error::CliError;
use crate::output::{sha256_hex, OutputDir};
use ntcp_msm::msm::{
    clustered_bootstrap, estimate_weight_model, fit_msm, BootstrapSettings, Estimands, Interval, StratumSummary, pointwise_ntcp_grid, stochastic_ntcp, FitMetrics, FitWarning, InterventionKind,
    InterventionSpec, MeanSurface, ModelFamily, ModelSpec, MsmFit, SamplerDiagnostics, StochasticEstimate,
    SurfaceDraw,
};
use ntcp_msm::rng::derive_seed;
use ntcp_msm::sim::{generate_cohort, run_experiment, truth_grid, DoseDesign, EvaluationGrid, TruthGrid};
use ntcp_msm::{Cohort, DoseGrid};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const FIT_SUMMARY: &str = "fit_summary.json";
pub const DRAWS: &str = "draws.jsonl";

/// Everything in a fit except the per-draw records.
#[derive(Debug, Serialize, Deserialize)]
struct FitSummary {
    family: ModelFamily,
    patients: usize,
    events: usize,
    retained_draws: usize,
    spec: ModelSpec,
    grid: DoseGrid,
    covariate_indices: Vec<usize>,
    covariate_names: Vec<String>,
    beta_mean: Vec<f64>,
    metrics: FitMetrics,
    diagnostics: SamplerDiagnostics,
    warnings: Vec<FitWarning>,
    quasi_posterior_mean_surface: MeanSurface,
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawRecord {
    beta: Vec<f64>,
    deviance: f64,
    surface: SurfaceDraw,
}

fn json_err(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{what}: {e}"))
}

fn read_bytes(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Validation(format!("cannot read {what} {}: {e}", path.display())))
}

/// Start an output directory: stale manifest removed, config echoed.
fn begin(cfg: &RunConfig, config_path: Option<&Path>, out: &Path, command: &str) -> Result<OutputDir, CliError> {
    let mut dir = OutputDir::create(out, command)?;
    if let Some(p) = config_path {
        let bytes = read_bytes(p, "config")?;
        dir.note_input(p, &bytes);
    }
    dir.write("resolved_config.json", cfg.to_pretty_json())?;
    Ok(dir)
}

fn load_cohort(cfg: &RunConfig, out: &mut OutputDir) -> Result<Cohort, CliError> {
    let path = cfg.input_path()?;
    let bytes = read_bytes(path, "cohort")?;
    out.note_input(path, &bytes);
    read_cohort(bytes.as_slice(), cfg.dose_grid()?, &cfg.tolerances)
}

fn report_warnings(fit: &MsmFit) {
    for w in &fit.warnings {
        eprintln!("warning: {}", serde_json::to_string(w).unwrap_or_default());
    }
}

fn write_fit(fit: &MsmFit, cohort: &Cohort, out: &mut OutputDir) -> Result<(), CliError> {
    let summary = FitSummary {
        family: fit.family(),
        patients: cohort.len(),
        events: cohort.event_count(),
        retained_draws: fit.surface_draws.len(),
        spec: fit.spec.clone(),
        grid: fit.grid,
        covariate_indices: fit.covariate_indices.clone(),
        covariate_names: fit.covariate_names.clone(),
        beta_mean: fit.beta_mean.clone(),
        metrics: fit.metrics,
        diagnostics: fit.diagnostics.clone(),
        warnings: fit.warnings.clone(),
        quasi_posterior_mean_surface: fit.quasi_posterior_mean_surface.clone(),
    };
    out.write_json(FIT_SUMMARY, &summary)?;
    let mut lines = String::new();
    for ((beta, surface), deviance) in fit.beta_draws.iter().zip(&fit.surface_draws).zip(&fit.draw_deviance) {
        let rec = DrawRecord { beta: beta.clone(), deviance: *deviance, surface: surface.clone() };
        lines.push_str(&serde_json::to_string(&rec).expect("draw serializes"));
        lines.push('\n');
    }
    out.write(DRAWS, lines)?;
    out.write_json("metrics.json", &fit.metrics)
}

/// Rebuild a fit saved by `fit` in `dir`, checking it against the cohort.
fn load_fit(dir: &Path, cohort: &Cohort, out: &mut OutputDir) -> Result<MsmFit, CliError> {
    let summary_path = dir.join(FIT_SUMMARY);
    let draws_path = dir.join(DRAWS);
    let summary_bytes = read_bytes(&summary_path, "fit summary")?;
    let draws_bytes = read_bytes(&draws_path, "fit draws")?;
    out.note_input(&summary_path, &summary_bytes);
    out.note_input(&draws_path, &draws_bytes);
    let s: FitSummary = serde_json::from_slice(&summary_bytes).map_err(|e| json_err("fit summary", e))?;
    if s.grid != *cohort.grid() {
        return Err(CliError::Validation("saved fit was made on a different dose grid".into()));
    }
    if s.covariate_names.len() != cohort.covariate_count() || s.covariate_names != cohort.covariate_names() {
        return Err(CliError::Validation(format!(
            "saved fit has covariates {:?}, cohort has {:?}",
            s.covariate_names,
            cohort.covariate_names()
        )));
    }
    let text = std::str::from_utf8(&draws_bytes).map_err(|e| json_err("fit draws", e))?;
    let (mut beta_draws, mut surface_draws, mut draw_deviance) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: DrawRecord = serde_json::from_str(line).map_err(|e| json_err(&format!("draw {}", i + 1), e))?;
        if rec.beta.len() != s.covariate_indices.len() {
            return Err(CliError::Validation(format!("draw {} has the wrong number of coefficients", i + 1)));
        }
        beta_draws.push(rec.beta);
        surface_draws.push(rec.surface);
        draw_deviance.push(rec.deviance);
    }
    if surface_draws.is_empty() {
        return Err(CliError::Validation("saved fit has no draws".into()));
    }
    Ok(MsmFit {
        spec: s.spec,
        grid: s.grid,
        covariate_indices: s.covariate_indices,
        covariate_names: s.covariate_names,
        beta_draws,
        surface_draws,
        draw_deviance,
        beta_mean: s.beta_mean,
        quasi_posterior_mean_surface: s.quasi_posterior_mean_surface,
        metrics: s.metrics,
        diagnostics: s.diagnostics,
        warnings: s.warnings,
    })
}

fn obtain_fit(
    cfg: &RunConfig,
    fit_dir: Option<&Path>,
    cohort: &Cohort,
    out: &mut OutputDir,
) -> Result<MsmFit, CliError> {
    match fit_dir {
        Some(dir) => load_fit(dir, cohort, out),
        None => {
            let fit = fit_msm(cohort, &cfg.model_spec(cohort)?)?;
            report_warnings(&fit);
            Ok(fit)
        }
    }
}

fn axis(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
}

/// Rescaled dose and volume axes of a lattice on `grid`.
fn lattice_axes(lattice: &LatticeConfig, grid: &DoseGrid) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    if lattice.n_g < 2 || lattice.n_d == 1 {
        return Err(CliError::Validation("lattices need at least two points per axis".into()));
    }
    let d = if lattice.n_d == 0 { (1..=grid.n_bins()).map(|b| grid.scaled(b)).collect() } else { axis(lattice.n_d) };
    Ok((d, axis(lattice.n_g)))
}

/// `d_gy,volume,lambda,ntcp` over the lattice.
fn surface_csv(fit: &MsmFit, cohort: &Cohort, lattice: &LatticeConfig) -> Result<String, CliError> {
    let grid = cohort.grid();
    let (d, g) = lattice_axes(lattice, grid)?;
    let ntcp = pointwise_ntcp_grid(fit, cohort, &d, &g)?;
    let mut s = String::from("d_gy,volume,lambda,ntcp\n");
    for (a, &ds) in d.iter().enumerate() {
        for (b, &v) in g.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", grid.dose_at_scaled(ds), v, fit.lambda_hat(ds, v), ntcp[a][b]);
        }
    }
    Ok(s)
}

pub fn cmd_fit(cfg: &RunConfig, config_path: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut dir = begin(cfg, config_path, out, "fit")?;
    let cohort = load_cohort(cfg, &mut dir)?;
    let spec = cfg.model_spec(&cohort)?;
    let fit = fit_msm(&cohort, &spec)?;
    report_warnings(&fit);
    write_fit(&fit, &cohort, &mut dir)?;
    dir.write("surface.csv", surface_csv(&fit, &cohort, &cfg.surface_grid)?)?;
    dir.finish()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct WeightReport {
    mean_weight: f64,
    max_weight: f64,
    effective_sample_size: f64,
    positivity_warning: bool,
    strata: Vec<StratumSummary>,
}

#[derive(Debug, Serialize)]
struct StochasticReport {
    intervention: InterventionSpec,
    d_gy: f64,
    ntcp: f64,
    observed_ntcp: f64,
    risk_ratio: f64,
    weights: WeightReport,
}

fn weight_report(est: &StochasticEstimate, cohort: &Cohort, iv: &InterventionSpec) -> Result<WeightReport, CliError> {
    let strata = match iv.kind {
        InterventionKind::TruncateUpper { d_bin, .. } => estimate_weight_model(cohort, d_bin, &iv.weights)?.strata(),
        _ => Vec::new(),
    };
    Ok(WeightReport {
        mean_weight: est.mean_weight,
        max_weight: est.max_weight,
        effective_sample_size: est.effective_sample_size,
        positivity_warning: est.positivity_warning,
        strata,
    })
}

/// Intervention estimate plus weight diagnostics; fails with the
/// positivity code when `strict` and the weights breach the threshold.
fn stochastic_report(
    cfg: &RunConfig,
    fit: &MsmFit,
    cohort: &Cohort,
    iv: &InterventionSpec,
    strict: bool,
) -> Result<StochasticReport, CliError> {
    let est = stochastic_ntcp(fit, cohort, iv, &cfg.estimator)?;
    if est.positivity_warning {
        let msg = format!(
            "largest importance weight {:.3} exceeds the positivity threshold {}",
            est.max_weight, cfg.estimator.positivity_threshold
        );
        if strict {
            return Err(CliError::Positivity(msg));
        }
        eprintln!("warning: {msg}");
    }
    let e = Estimands::compute(fit, cohort, iv, &cfg.estimator)?;
    Ok(StochasticReport {
        intervention: iv.clone(),
        d_gy: cohort.grid().lower_edge(iv.kind.d_bin()),
        ntcp: e.ntcp,
        observed_ntcp: e.observed_ntcp,
        risk_ratio: e.risk_ratio,
        weights: weight_report(&est, cohort, iv)?,
    })
}

pub fn cmd_estimate(
    cfg: &RunConfig,
    config_path: Option<&Path>,
    out: &Path,
    fit_dir: Option<&Path>,
    strict: bool,
) -> Result<(), CliError> {
    let mut dir = begin(cfg, config_path, out, "estimate")?;
    let cohort = load_cohort(cfg, &mut dir)?;
    let fit = obtain_fit(cfg, fit_dir, &cohort, &mut dir)?;
    let stochastic = match &cfg.intervention {
        Some(iv) => Some(stochastic_report(cfg, &fit, &cohort, iv, strict)?),
        None => None,
    };
    #[derive(Serialize)]
    struct Report<'a> {
        family: ModelFamily,
        pointwise_grid: &'a str,
        stochastic: Option<StochasticReport>,
    }
    dir.write("pointwise.csv", surface_csv(&fit, &cohort, &cfg.surface_grid)?)?;
    dir.write_json("estimands.json", &Report { family: fit.family(), pointwise_grid: "pointwise.csv", stochastic })?;
    dir.finish()?;
    Ok(())
}

pub fn cmd_bootstrap(cfg: &RunConfig, config_path: Option<&Path>, out: &Path, strict: bool) -> Result<(), CliError> {
    let mut dir = begin(cfg, config_path, out, "bootstrap")?;
    let cohort = load_cohort(cfg, &mut dir)?;
    let iv = cfg.intervention()?;
    let spec = cfg.model_spec(&cohort)?;
    // The same fit the bootstrap starts from, for the weight diagnostics.
    let fit = fit_msm(&cohort, &spec)?;
    report_warnings(&fit);
    let point = stochastic_report(cfg, &fit, &cohort, iv, strict)?;
    let b = &cfg.bootstrap;
    let settings = BootstrapSettings {
        n_boot: b.n_boot,
        ci_level: b.ci_level,
        seed: cfg.seed,
        workers: cfg.workers,
        max_failure_fraction: b.max_failure_fraction,
        shared_stream: false,
    };
    let result = clustered_bootstrap(&cohort, &spec, iv, &settings, &cfg.estimator)?;
    if result.failures > 0 {
        eprintln!("warning: {} of {} bootstrap replicates failed", result.failures, b.n_boot);
    }

    #[derive(Serialize)]
    struct Report<'a> {
        family: ModelFamily,
        n_boot: usize,
        ci_level: f64,
        failures: usize,
        point: &'a StochasticReport,
        ntcp_ci: Interval,
        observed_ntcp_ci: Interval,
        risk_ratio_ci: Interval,
    }
    dir.write_json(
        "bootstrap.json",
        &Report {
            family: spec.family,
            n_boot: b.n_boot,
            ci_level: b.ci_level,
            failures: result.failures,
            point: &point,
            ntcp_ci: result.ntcp_ci,
            observed_ntcp_ci: result.observed_ntcp_ci,
            risk_ratio_ci: result.risk_ratio_ci,
        },
    )?;
    let mut csv = String::from("replicate,ntcp,observed_ntcp,risk_ratio,error\n");
    for r in &result.replicates {
        match (&r.estimands, &r.error) {
            (Some(e), _) => {
                let _ = writeln!(csv, "{},{},{},{},", r.index + 1, e.ntcp, e.observed_ntcp, e.risk_ratio);
            }
            (None, err) => {
                let msg = err.as_deref().unwrap_or("unknown").replace(['"', ','], ";");
                let _ = writeln!(csv, "{},,,,{msg}", r.index + 1);
            }
        }
    }
    dir.write("replicates.csv", csv)?;
    dir.finish()?;
    Ok(())
}

fn design_of(cfg: &DesignConfig) -> &dyn DoseDesign {
    match cfg {
        DesignConfig::Sim1(c) => c,
        DesignConfig::Sim2(c) => c,
    }
}

/// Truth on `eval`, read from the cache when an identical design, lattice
/// and oracle setting was computed before. Cohort size and seed do not
/// change the truth and are left out of the key.
fn cached_truth(sim: &SimulateConfig, eval: &EvaluationGrid, workers: Option<usize>) -> Result<TruthGrid, CliError> {
    let mut design = sim.design.clone();
    match &mut design {
        DesignConfig::Sim1(c) => (c.n, c.seed) = (0, 0),
        DesignConfig::Sim2(c) => (c.n, c.seed) = (0, 0),
    }
    let key_json = serde_json::to_string(&("truth-v1", &design, eval, &sim.oracle)).expect("key serializes");
    let key = sha256_hex(key_json.as_bytes());
    let path = sim.cache_dir.join(format!("truth-{key}.json"));
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(t) = serde_json::from_slice::<TruthGrid>(&bytes) {
            eprintln!("truth oracle: cache hit {}", path.display());
            return Ok(t);
        }
    }
    eprintln!("truth oracle: computing {}", path.display());
    let truth = truth_grid(design_of(&sim.design), eval, &sim.oracle, workers)?;
    // A failed cache write only costs a recomputation next time.
    let text = serde_json::to_string(&truth).expect("truth serializes");
    let tmp = path.with_extension("tmp");
    let saved = std::fs::create_dir_all(&sim.cache_dir)
        .and_then(|_| std::fs::write(&tmp, text))
        .and_then(|_| std::fs::rename(&tmp, &path));
    if let Err(e) = saved {
        eprintln!("warning: cannot cache truth grid at {}: {e}", path.display());
    }
    Ok(truth)
}

fn simulate_config(cfg: &RunConfig) -> Result<&SimulateConfig, CliError> {
    cfg.simulate.as_ref().ok_or_else(|| CliError::Validation("config has no simulate section".into()))
}

pub fn cmd_simulate(cfg: &RunConfig, config_path: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let sim = simulate_config(cfg)?;
    let design = design_of(&sim.design);
    design.validate()?;
    let mut dir = begin(cfg, config_path, out, "simulate")?;
    let truth = cached_truth(sim, &design.evaluation_grid(), cfg.workers)?;
    dir.write_json("truth.json", &truth)?;
    let exp = &sim.experiment;
    if sim.write_cohorts {
        for r in 0..exp.replicates {
            let key = if exp.identical_replicates { 0 } else { r as u64 };
            let cohort = generate_cohort(design, exp.n, derive_seed(exp.seed, 2 * key))?.cohort;
            dir.write(&format!("cohorts/replicate_{:04}.csv", r + 1), write_cohort(&cohort))?;
        }
    }
    let report = run_experiment(design, exp, &truth)?;
    for f in &report.families {
        for e in &f.failures {
            eprintln!("warning: {}: {e}", f.label);
        }
    }
    dir.write_json("report.json", &report)?;
    dir.write("table.csv", report.table_csv())?;
    dir.write("grid.csv", report.grid_csv())?;
    dir.finish()?;
    Ok(())
}

pub fn cmd_export_contours(
    cfg: &RunConfig,
    config_path: Option<&Path>,
    out: &Path,
    fit_dir: Option<&Path>,
) -> Result<(), CliError> {
    let fitted = fit_dir.is_some() || cfg.input.is_some();
    if !fitted && cfg.simulate.is_none() {
        return Err(CliError::Validation("nothing to export: give a fit, an input cohort or a simulate section".into()));
    }
    let mut dir = begin(cfg, config_path, out, "export-contours")?;
    if fitted {
        let cohort = load_cohort(cfg, &mut dir)?;
        let fit = obtain_fit(cfg, fit_dir, &cohort, &mut dir)?;
        dir.write("contours.csv", surface_csv(&fit, &cohort, &cfg.contour_grid)?)?;
    }
    if let Some(sim) = &cfg.simulate {
        let grid = design_of(&sim.design).grid();
        let (d_scaled, g) = lattice_axes(&cfg.contour_grid, &grid)?;
        let truth = cached_truth(sim, &EvaluationGrid { d_scaled, g }, cfg.workers)?;
        let mut s = String::from("d_gy,volume,ntcp\n");
        for (a, row) in truth.values.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let cell = v.map(|x| x.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{cell}", truth.d_gy[a], truth.g[b]);
            }
        }
        dir.write("truth_contours.csv", s)?;
    }
    dir.finish()?;
    Ok(())
}
