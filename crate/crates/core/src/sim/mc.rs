//! Brute-force Monte Carlo truth, used to cross-check the quadrature oracle.
//!
//! Draws are stratified over the design's covariate nodes so the covariate
//! law is held fixed under the intervention. Work is split into fixed-size
//! chunks with their own streams, so results do not depend on threading.

use super::design::DoseDesign;
use super::oracle::OracleError;
use crate::par::map_indexed;
use crate::rng::{stream, StreamRng};
use crate::special::{expit, normal_sf};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

const CHUNK: usize = 1 << 16;
const MIN_ACCEPTED: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum McIntervention {
    /// No intervention: the population mean risk.
    Identity,
    /// Volume at `d_bin` drawn from its law truncated to `[0, q]`.
    TruncateUpper { d_bin: usize, q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub accepted: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    count: usize,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
        self.count += 1;
    }

    fn merge(&mut self, o: &Moments) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.count += o.count;
    }
}

struct Stratum {
    x: Vec<f64>,
    weight: f64,
    draws: usize,
    sampler: Beta<f64>,
}

fn strata<D: DoseDesign + ?Sized>(design: &D, n_draws: usize) -> Result<Vec<Stratum>, OracleError> {
    let mut out = Vec::new();
    for (x, p) in design.covariate_nodes() {
        let draws = (p * n_draws as f64).round() as usize;
        if draws == 0 {
            continue;
        }
        let (a, b) = design.beta_shapes(&x);
        let sampler = Beta::new(a, b).map_err(|e| OracleError::InvalidInput(format!("beta shapes: {e}")))?;
        out.push(Stratum { x, weight: p, draws, sampler });
    }
    if out.is_empty() {
        return Err(OracleError::InvalidInput("no covariate stratum receives draws".into()));
    }
    Ok(out)
}

/// Runs `visit(stratum, mu, sigma, risk, acc)` over all draws and returns
/// per-stratum accumulators of length `cells`.
fn simulate<D, F>(
    design: &D,
    strata: &[Stratum],
    cells: usize,
    seed: u64,
    workers: Option<usize>,
    visit: F,
) -> Vec<Vec<Moments>>
where
    D: DoseDesign + ?Sized,
    F: Fn(f64, f64, f64, &mut [Moments]) + Sync,
{
    let (a_min, a_max) = design.mean_dose_range();
    let (b_min, b_max) = design.sigma_range();
    let jobs: Vec<(usize, usize)> = strata
        .iter()
        .enumerate()
        .flat_map(|(s, st)| (0..st.draws.div_ceil(CHUNK)).map(move |c| (s, c)))
        .collect();
    let partials = map_indexed(jobs.len(), workers, |j| {
        let (s, c) = jobs[j];
        let st = &strata[s];
        let mut rng: StreamRng = stream(seed, ((s as u64) << 32) | c as u64);
        let mut acc = vec![Moments::default(); cells];
        let count = CHUNK.min(st.draws - c * CHUNK);
        for _ in 0..count {
            let mu = a_min + (a_max - a_min) * st.sampler.sample(&mut rng);
            let sigma = b_min + (b_max - b_min) * rng.random::<f64>();
            let risk = expit(design.outcome_logit(mu, &st.x));
            visit(mu, sigma, risk, &mut acc);
        }
        (s, acc)
    });
    let mut totals = vec![vec![Moments::default(); cells]; strata.len()];
    for (s, acc) in partials {
        for (t, a) in totals[s].iter_mut().zip(&acc) {
            t.merge(a);
        }
    }
    totals
}

/// Combine per-stratum means with the covariate weights.
fn combine(strata: &[Stratum], per_stratum: impl Iterator<Item = Moments>) -> Result<McEstimate, OracleError> {
    let mut value = 0.0;
    let mut var = 0.0;
    let mut total_weight = 0.0;
    let mut accepted = 0;
    let mut empty_stratum = false;
    for (st, m) in strata.iter().zip(per_stratum) {
        accepted += m.count;
        if m.count == 0 {
            empty_stratum = true;
            continue;
        }
        let n = m.count as f64;
        let mean = m.sum / n;
        let v = if m.count > 1 { (m.sum_sq - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
        value += st.weight * mean;
        var += st.weight * st.weight * v / n;
        total_weight += st.weight;
    }
    if accepted < MIN_ACCEPTED || empty_stratum {
        return Err(OracleError::InsufficientAcceptance { accepted, required: MIN_ACCEPTED });
    }
    Ok(McEstimate { value: value / total_weight, standard_error: var.sqrt() / total_weight, accepted })
}

/// Monte Carlo causal NTCP under `intervention` from about `n_draws`
/// simulated patients. Truncation is done by rejection within each
/// covariate stratum.
pub fn mc_truth_oracle<D: DoseDesign + ?Sized>(
    design: &D,
    intervention: McIntervention,
    n_draws: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<McEstimate, OracleError> {
    design.validate().map_err(|e| OracleError::InvalidInput(e.to_string()))?;
    let grid = design.grid();
    let (d_gy, q) = match intervention {
        McIntervention::Identity => (0.0, f64::INFINITY),
        McIntervention::TruncateUpper { d_bin, q } => {
            if !grid.contains_bin(d_bin) || !(q >= 0.0 && q <= 1.0) {
                return Err(OracleError::InvalidInput(format!("intervention ({d_bin}, {q}) out of range")));
            }
            (grid.lower_edge(d_bin), q)
        }
    };
    let strata = strata(design, n_draws)?;
    let totals = simulate(design, &strata, 1, seed, workers, |mu, sigma, risk, acc| {
        if q.is_infinite() || normal_sf((d_gy - mu) / sigma) <= q {
            acc[0].push(risk);
        }
    });
    combine(&strata, totals.iter().map(|t| t[0]))
}

/// Monte Carlo pointwise NTCP on a `d_gy × g` lattice: the covariate-level
/// mean risk among draws whose volume at `d_gy[a]` lies within `h` of
/// `g[b]`, averaged over the covariate law. Draws are shared across cells.
pub fn mc_pointwise_band<D: DoseDesign + ?Sized>(
    design: &D,
    d_gy: &[f64],
    g: &[f64],
    h: f64,
    n_draws: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<Vec<Result<McEstimate, OracleError>>>, OracleError> {
    design.validate().map_err(|e| OracleError::InvalidInput(e.to_string()))?;
    if !(h > 0.0) || d_gy.is_empty() || g.is_empty() {
        return Err(OracleError::InvalidInput("band half-width and lattice must be non-empty".into()));
    }
    let strata = strata(design, n_draws)?;
    let nb = g.len();
    let totals = simulate(design, &strata, d_gy.len() * nb, seed, workers, |mu, sigma, risk, acc| {
        for (a, &d) in d_gy.iter().enumerate() {
            let v = normal_sf((d - mu) / sigma);
            for (b, &target) in g.iter().enumerate() {
                if (v - target).abs() <= h {
                    acc[a * nb + b].push(risk);
                }
            }
        }
    });
    Ok((0..d_gy.len())
        .map(|a| (0..nb).map(|b| combine(&strata, totals.iter().map(|t| t[a * nb + b]))).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Sim1Config;

    #[test]
    fn identity_estimate_is_precise_and_seeded() {
        let cfg = Sim1Config::default();
        let a = mc_truth_oracle(&cfg, McIntervention::Identity, 200_000, 3, Some(1)).unwrap();
        let b = mc_truth_oracle(&cfg, McIntervention::Identity, 200_000, 3, Some(2)).unwrap();
        assert_eq!(a, b);
        assert!(a.standard_error < 0.002);
        assert_eq!(a.accepted, 200_000);
    }

    #[test]
    fn truncation_to_zero_is_rejected() {
        let cfg = Sim1Config::default();
        let r = mc_truth_oracle(&cfg, McIntervention::TruncateUpper { d_bin: 14, q: 1e-9 }, 100_000, 1, None);
        assert!(matches!(r, Err(OracleError::InsufficientAcceptance { .. })));
    }

    #[test]
    fn band_cells_outside_support_are_errors() {
        let cfg = Sim1Config::default();
        let cells = mc_pointwise_band(&cfg, &[30.0, 40.0], &[0.02, 0.5], 0.005, 1_000_000, 1, None).unwrap();
        assert!(cells[0][0].is_err());
        assert!(cells[1][1].is_ok());
    }
}
