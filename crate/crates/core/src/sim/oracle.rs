//! True causal NTCP under a design, by numerical integration.
//!
//! For a fixed dose `d` the map `(μ, σ) → (μ, g)` with `g = 1 − Φ((d − μ)/σ)`
//! turns the joint law of `(μ, σ)` into a joint law of `(μ, G_d)`. Holding the
//! volume at `g` leaves a one-dimensional family of mean doses, bounded by
//! the supports of `μ` and `σ`, over which the outcome risk is averaged.

use super::design::{DoseDesign, EvaluationGrid};
use super::SimError;
use crate::par::map_indexed;
use crate::quadrature::{integrate, integrate_simpson, QuadratureError, QuadratureSettings};
use crate::special::{expit, normal_cdf, normal_pdf, normal_quantile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("volume 0.5 leaves sigma unconstrained")]
    SingularSolve,
    #[error("no admissible mean dose for g = {g} at {d_gy} Gy")]
    EmptyRegion { g: f64, d_gy: f64 },
    #[error("Jacobian integral vanishes at mu = {mu}, g = {g}")]
    SingularJacobian { mu: f64, g: f64 },
    #[error("integration failed: {0}")]
    Integration(#[from] QuadratureError),
    #[error("only {accepted} draws accepted, need at least {required}")]
    InsufficientAcceptance { accepted: usize, required: usize },
    #[error("invalid oracle input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMethod {
    GaussKronrod,
    Simpson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub method: QuadratureMethod,
    pub quadrature: QuadratureSettings,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { method: QuadratureMethod::GaussKronrod, quadrature: QuadratureSettings::default() }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let q = &self.quadrature;
        if !(q.abs_tol > 0.0 && q.rel_tol > 0.0) || q.max_subdivisions == 0 {
            return Err(OracleError::InvalidInput("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn integrate<F: FnMut(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64, OracleError> {
        let r = match self.method {
            QuadratureMethod::GaussKronrod => integrate(f, a, b, &self.quadrature)?,
            QuadratureMethod::Simpson => integrate_simpson(f, a, b, &self.quadrature)?,
        };
        Ok(r.value)
    }
}

/// Dose spread that puts volume `g` above `d_gy` for mean dose `mu`, or
/// `None` when no positive spread does.
pub fn sigma_from(mu: f64, g: f64, d_gy: f64) -> Result<Option<f64>, OracleError> {
    if !(g > 0.0 && g < 1.0) {
        return Err(OracleError::InvalidInput(format!("volume {g} outside (0, 1)")));
    }
    if g == 0.5 {
        return Err(OracleError::SingularSolve);
    }
    let sigma = (d_gy - mu) / normal_quantile(1.0 - g);
    Ok((sigma.is_finite() && sigma > 0.0).then_some(sigma))
}

/// Mean doses compatible with volume `g` at `d_gy`: spread within the
/// design's range and mean within its support. At `g = 0.5` the interval
/// collapses to `[d_gy, d_gy]`.
pub fn mu_bounds<D: DoseDesign + ?Sized>(g: f64, d_gy: f64, design: &D) -> Option<(f64, f64)> {
    if !(g > 0.0 && g < 1.0) {
        return None;
    }
    let (a_min, a_max) = design.mean_dose_range();
    let (b_min, b_max) = design.sigma_range();
    let z = normal_quantile(1.0 - g);
    if z == 0.0 {
        return (a_min..=a_max).contains(&d_gy).then_some((d_gy, d_gy));
    }
    let (e1, e2) = (d_gy - b_min * z, d_gy - b_max * z);
    let lo = e1.min(e2).max(a_min);
    let hi = e1.max(e2).min(a_max);
    (lo < hi).then_some((lo, hi))
}

const JACOBIAN_SETTINGS: QuadratureSettings =
    QuadratureSettings { abs_tol: 1e-14, rel_tol: 1e-10, max_subdivisions: 400 };

/// `|J|(μ, g) = σ² / |∫ φ((t−μ)/σ)(1 − ((t−μ)/σ)²) dt|` over `t ∈ [0, d_gy]`,
/// with `σ` solved from `(μ, g)`. The lower limit is raised to `μ − 12σ`
/// when positive since the integrand is negligible below it.
pub fn jacobian(mu: f64, g: f64, d_gy: f64) -> Result<f64, OracleError> {
    let sigma = sigma_from(mu, g, d_gy)?.ok_or(OracleError::EmptyRegion { g, d_gy })?;
    let lower = (mu.min(d_gy) - 12.0 * sigma).max(0.0);
    let inner = integrate(
        |t| {
            let u = (t - mu) / sigma;
            normal_pdf(u) * (1.0 - u * u)
        },
        lower,
        d_gy,
        &JACOBIAN_SETTINGS,
    )?
    .value;
    if inner.abs() < 1e-14 {
        return Err(OracleError::SingularJacobian { mu, g });
    }
    Ok(sigma * sigma / inner.abs())
}

/// `∫_lo^hi (μ − a)^{α−1} (b − μ)^{β−1} h(μ) dμ`. Endpoints that touch the
/// support with a shape below one are handled by a power substitution that
/// removes the singularity.
fn beta_weighted_integral<F: FnMut(f64) -> f64>(
    cfg: &OracleConfig,
    mut h: F,
    (lo, hi): (f64, f64),
    (a, b): (f64, f64),
    (alpha, beta): (f64, f64),
) -> Result<f64, OracleError> {
    let w = |mu: f64| ((mu - a).max(0.0)).powf(alpha - 1.0) * ((b - mu).max(0.0)).powf(beta - 1.0);
    let singular_lo = lo <= a && alpha < 1.0;
    let singular_hi = hi >= b && beta < 1.0;
    if !singular_lo && !singular_hi {
        return cfg.integrate(|mu| w(mu) * h(mu), lo, hi);
    }
    let mid = 0.5 * (lo + hi);
    let left = if singular_lo {
        // μ = a + (mid − a)·s^{1/α}
        let span = mid - a;
        let c = span.powf(alpha) / alpha;
        cfg.integrate(
            |s| {
                let mu = a + span * s.powf(1.0 / alpha);
                c * (b - mu).powf(beta - 1.0) * h(mu)
            },
            0.0,
            1.0,
        )?
    } else {
        cfg.integrate(|mu| w(mu) * h(mu), lo, mid)?
    };
    let right = if singular_hi {
        let span = b - mid;
        let c = span.powf(beta) / beta;
        cfg.integrate(
            |s| {
                let mu = b - span * s.powf(1.0 / beta);
                c * (mu - a).powf(alpha - 1.0) * h(mu)
            },
            0.0,
            1.0,
        )?
    } else {
        cfg.integrate(|mu| w(mu) * h(mu), mid, hi)?
    };
    Ok(left + right)
}

/// Risk integral and normalizer at one `(d, g)` for covariate value `x`:
/// `(∫ expit·w·|J| dμ, ∫ w·|J| dμ)` over the admissible mean doses.
fn slice_integrals<D: DoseDesign + ?Sized>(
    design: &D,
    cfg: &OracleConfig,
    x: &[f64],
    d_gy: f64,
    g: f64,
    bounds: (f64, f64),
) -> Result<(f64, f64), OracleError> {
    let support = design.mean_dose_range();
    let shapes = design.beta_shapes(x);
    let mut failure = None;
    let mut jac = |mu: f64| match jacobian(mu, g, d_gy) {
        Ok(j) => j,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    };
    let den = beta_weighted_integral(cfg, &mut jac, bounds, support, shapes);
    let mut failure2 = None;
    let num = beta_weighted_integral(
        cfg,
        |mu| match jacobian(mu, g, d_gy) {
            Ok(j) => expit(design.outcome_logit(mu, x)) * j,
            Err(e) => {
                failure2.get_or_insert(e);
                f64::NAN
            }
        },
        bounds,
        support,
        shapes,
    );
    if let Some(e) = failure.or(failure2) {
        return Err(e);
    }
    Ok((num?, den?))
}

/// True pointwise NTCP with the volume at `d_gy` held at `g`; `None` where
/// no mean dose in the design's support produces that volume.
pub fn true_pointwise_ntcp<D: DoseDesign + ?Sized>(
    design: &D,
    d_gy: f64,
    g: f64,
    cfg: &OracleConfig,
) -> Result<Option<f64>, OracleError> {
    let Some(bounds) = mu_bounds(g, d_gy, design) else {
        return Ok(None);
    };
    let nodes = design.covariate_nodes();
    if bounds.0 == bounds.1 {
        // Degenerate volume 0.5: the mean dose is pinned at d_gy.
        let v = nodes.iter().map(|(x, p)| p * expit(design.outcome_logit(bounds.0, x))).sum();
        return Ok(Some(v));
    }
    let mut total = 0.0;
    for (x, p) in &nodes {
        let (num, den) = slice_integrals(design, cfg, x, d_gy, g, bounds)?;
        if !(den > 0.0) {
            return Err(OracleError::SingularJacobian { mu: bounds.0, g });
        }
        total += p * num / den;
    }
    Ok(Some(total))
}

/// Volumes in `(0, q)` where the admissible mean-dose interval changes form.
fn breakpoints<D: DoseDesign + ?Sized>(design: &D, d_gy: f64, q: f64) -> Vec<f64> {
    let (a_min, a_max) = design.mean_dose_range();
    let (b_min, b_max) = design.sigma_range();
    let mut pts = vec![0.0, q];
    if q > 0.5 {
        pts.push(0.5);
    }
    for a in [a_min, a_max] {
        for b in [b_min, b_max] {
            let g = 1.0 - normal_cdf((d_gy - a) / b);
            if g > 0.0 && g < q {
                pts.push(g);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// True NTCP when the volume at `d_bin` follows its observed law truncated
/// to `[0, q]` within each covariate level.
pub fn true_stochastic_ntcp<D: DoseDesign + ?Sized>(
    design: &D,
    d_bin: usize,
    q: f64,
    cfg: &OracleConfig,
) -> Result<f64, OracleError> {
    cfg.validate()?;
    let grid = design.grid();
    if !grid.contains_bin(d_bin) || !(q > 0.0 && q <= 1.0) {
        return Err(OracleError::InvalidInput(format!("intervention ({d_bin}, {q}) out of range")));
    }
    let d_gy = grid.lower_edge(d_bin);
    let pts = breakpoints(design, d_gy, q);
    let mut total = 0.0;
    for (x, p) in design.covariate_nodes() {
        let mut num = 0.0;
        let mut den = 0.0;
        for w in pts.windows(2) {
            let mut err = None;
            let mut part = |want_num: bool| {
                cfg.integrate(
                    |g| match mu_bounds(g, d_gy, design) {
                        None => 0.0,
                        Some(b) if b.0 == b.1 => 0.0,
                        Some(b) => match slice_integrals(design, cfg, &x, d_gy, g, b) {
                            Ok((n, d)) => {
                                if want_num {
                                    n
                                } else {
                                    d
                                }
                            }
                            Err(e) => {
                                err.get_or_insert(e);
                                f64::NAN
                            }
                        },
                    },
                    w[0],
                    w[1],
                )
            };
            let n_part = part(true);
            let d_part = part(false);
            if let Some(e) = err {
                return Err(e);
            }
            num += n_part?;
            den += d_part?;
        }
        if !(den > 0.0) {
            return Err(OracleError::EmptyRegion { g: q, d_gy });
        }
        total += p * num / den;
    }
    Ok(total)
}

/// Truth on an evaluation lattice; missing cells are outside the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthGrid {
    pub d_scaled: Vec<f64>,
    pub d_gy: Vec<f64>,
    pub g: Vec<f64>,
    /// `values[a][b]` at `(d_scaled[a], g[b])`.
    pub values: Vec<Vec<Option<f64>>>,
    /// Truth under the design's truncation intervention, when it has one.
    pub stochastic: Option<f64>,
}

impl TruthGrid {
    pub fn evaluable_cells(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_some()).count()
    }
}

pub fn truth_grid<D: DoseDesign + ?Sized>(
    design: &D,
    eval: &EvaluationGrid,
    cfg: &OracleConfig,
    workers: Option<usize>,
) -> Result<TruthGrid, SimError> {
    design.validate()?;
    cfg.validate()?;
    let grid = design.grid();
    let d_gy: Vec<f64> = eval.d_scaled.iter().map(|&s| grid.dose_at_scaled(s)).collect();
    let rows = map_indexed(d_gy.len(), workers, |a| {
        eval.g
            .iter()
            .map(|&g| true_pointwise_ntcp(design, d_gy[a], g, cfg))
            .collect::<Result<Vec<_>, _>>()
    });
    let values = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let stochastic = match design.intervention() {
        Some((d_bin, q)) => Some(true_stochastic_ntcp(design, d_bin, q, cfg)?),
        None => None,
    };
    Ok(TruthGrid { d_scaled: eval.d_scaled.clone(), d_gy, g: eval.g.clone(), values, stochastic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Sim1Config;
    use approx::assert_relative_eq;

    #[test]
    fn sigma_examples() {
        let z = normal_quantile(1.0 - 0.3);
        let mu = 40.0 - z * 1.5;
        assert_relative_eq!(sigma_from(mu, 0.3, 40.0).unwrap().unwrap(), 1.5, epsilon = 1e-12);
        let s = sigma_from(42.0, 0.9, 40.0).unwrap().unwrap();
        assert_relative_eq!(s, 2.0 / 1.281_551_565_544_600_5, epsilon = 1e-9);
        assert_relative_eq!(s, 1.5606, epsilon = 1e-4);
        assert_eq!(sigma_from(42.0, 0.1, 40.0).unwrap(), None);
        assert_eq!(sigma_from(42.0, 0.5, 40.0), Err(OracleError::SingularSolve));
    }

    #[test]
    fn bounds_examples() {
        let wide = Sim1Config { a_min: 0.0, a_max: 100.0, d_min: 0.0, d_max: 100.0, ..Default::default() };
        let (lo, hi) = mu_bounds(0.9, 40.0, &wide).unwrap();
        assert_relative_eq!(lo, 41.281_551_565_544_6, epsilon = 1e-9);
        assert_relative_eq!(hi, 42.563_103_131_089_2, epsilon = 1e-9);
        let z = normal_quantile(0.8);
        let (lo, hi) = mu_bounds(0.2, 40.0, &wide).unwrap();
        assert_relative_eq!(lo, 40.0 - 2.0 * z, epsilon = 1e-12);
        assert_relative_eq!(hi, 40.0 - z, epsilon = 1e-12);
        assert_eq!(mu_bounds(0.01, 31.0, &Sim1Config::default()), None);
    }

    #[test]
    fn jacobian_matches_closed_form() {
        // The inner integral has antiderivative σ·u·φ(u).
        for &(mu, g, d) in &[(41.9, 0.9, 40.0), (38.0, 0.2, 40.0), (41.0, 0.45, 41.2), (36.0, 0.02, 40.0)] {
            let sigma = sigma_from(mu, g, d).unwrap().unwrap();
            let z = (d - mu) / sigma;
            let closed = sigma / (z.abs() * normal_pdf(z));
            assert_relative_eq!(jacobian(mu, g, d).unwrap(), closed, max_relative = 1e-8);
        }
    }

    #[test]
    fn constant_risk_reduces_to_covariate_average() {
        let cfg = Sim1Config { gamma: [-1.0, 0.0, 0.7], ..Default::default() };
        let expected = 0.6 * expit(-1.0) + 0.4 * expit(-0.3);
        let v = true_pointwise_ntcp(&cfg, 40.0, 0.3, &OracleConfig::default()).unwrap().unwrap();
        assert_relative_eq!(v, expected, epsilon = 1e-10);
    }

    #[test]
    fn pointwise_is_monotone_in_volume() {
        let cfg = Sim1Config::default();
        let oc = OracleConfig::default();
        let mut last = 0.0;
        for k in 1..20 {
            let g = k as f64 / 20.0;
            if let Some(v) = true_pointwise_ntcp(&cfg, 40.0, g, &oc).unwrap() {
                assert!(v >= last - 1e-6, "g = {g}: {v} < {last}");
                last = v;
            }
        }
    }

    #[test]
    fn untruncated_equals_outcome_mean() {
        // With q = 1 the truth is E[Y], computable from the Beta mean-dose law.
        let cfg = Sim1Config::default();
        let oc = OracleConfig::default();
        let v = true_stochastic_ntcp(&cfg, 14, 1.0, &oc).unwrap();
        let mut ey = 0.0;
        for (x, p) in cfg.covariate_nodes() {
            let (a, b) = cfg.beta_shapes(&x);
            let norm = statrs::function::beta::beta(a, b);
            let m = integrate(
                |s| s.powf(a - 1.0) * (1.0 - s).powf(b - 1.0) * expit(cfg.outcome_logit(35.0 + 10.0 * s, &x)),
                0.0,
                1.0,
                &QuadratureSettings { abs_tol: 1e-12, rel_tol: 1e-10, max_subdivisions: 400 },
            )
            .unwrap()
            .value;
            ey += p * m / norm;
        }
        assert_relative_eq!(v, ey, epsilon = 1e-5);
        let truncated = true_stochastic_ntcp(&cfg, 14, 0.8, &oc).unwrap();
        assert!(truncated < v);
    }
}
