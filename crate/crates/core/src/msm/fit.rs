//! Quasi-posterior samplers.
//!
//! Monotone families alternate a random-walk Metropolis update of `β` with
//! reversible-jump updates of the surface component(s). Per-row linear
//! predictors and log-likelihood terms are cached so a surface move only
//! touches the rows whose level it changes.
//!
//! Parametric families start at the quasi-posterior mode (Newton) and run a
//! random-walk Metropolis chain whose proposal is shaped by the inverse
//! Hessian at the mode.

use super::metrics::FitMetrics;
use super::{
    unit_axis, FitWarning, McmcSettings, MeanSurface, ModelFamily, ModelSpec, MsmError, MsmFit,
    SamplerDiagnostics, SurfaceDraw,
};
use crate::dvh::Cohort;
use crate::rng::{stream, StreamRng};
use crate::special::{bernoulli_loglik, expit};
use crate::surface::{
    rjmcmc_step_with, Change, KernelStats, LocationLaw, MonotonePointConfig, MoveKind, SurfaceTarget,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const ADAPT_BATCH: usize = 50;
const TARGET_ACCEPT: f64 = 0.3;

/// Fit a marginal structural model by quasi-posterior MCMC.
pub fn fit_msm(cohort: &Cohort, spec: &ModelSpec) -> Result<MsmFit, MsmError> {
    spec.validate()?;
    let covariates = spec.covariate_indices(cohort)?;
    let design = Design::new(cohort, &covariates);
    let mut rng = stream(spec.mcmc.seed, 0);
    let chain = if spec.family.is_monotone() {
        run_monotone(&design, spec, &mut rng)?
    } else {
        run_parametric(&design, spec, &mut rng)?
    };
    finish(cohort, spec, covariates, &design, chain)
}

/// Replicated dataset in columnar form.
pub(crate) struct Design {
    pub d: Vec<f64>,
    pub g: Vec<f64>,
    pub y: Vec<bool>,
    pub patient: Vec<usize>,
    /// Selected covariates per patient.
    pub x: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(cohort: &Cohort, covariates: &[usize]) -> Self {
        let grid = cohort.grid();
        let rows = cohort.len() * grid.n_bins();
        let mut design = Design {
            d: Vec::with_capacity(rows),
            g: Vec::with_capacity(rows),
            y: Vec::with_capacity(rows),
            patient: Vec::with_capacity(rows),
            x: Vec::with_capacity(cohort.len()),
        };
        for (i, p) in cohort.patients().iter().enumerate() {
            design.x.push(covariates.iter().map(|&j| p.covariates[j]).collect());
            for (k, &g) in p.dvh.values().iter().enumerate() {
                design.d.push(grid.scaled(k + 1));
                design.g.push(g);
                design.y.push(p.outcome == 1);
                design.patient.push(i);
            }
        }
        design
    }

    pub fn rows(&self) -> usize {
        self.d.len()
    }

    pub fn p(&self) -> usize {
        self.x.first().map_or(0, |x| x.len())
    }

    fn xb(&self, beta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.x.iter().map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()));
    }
}

/// Everything the sampler hands back before summaries are computed.
struct Chain {
    beta_draws: Vec<Vec<f64>>,
    surface_draws: Vec<SurfaceDraw>,
    draw_deviance: Vec<f64>,
    /// Sum over retained draws of `λ` at each row.
    lambda_sum: Vec<f64>,
    diagnostics: SamplerDiagnostics,
    numerical_rejections: u64,
}

fn log_normal_prior(v: &[f64], sd: f64) -> f64 {
    -0.5 * v.iter().map(|b| (b / sd).powi(2)).sum::<f64>()
}

fn adapt_scale(scale: &mut f64, accepted: usize, proposed: usize, lo: f64, hi: f64) {
    if proposed == 0 {
        return;
    }
    let rate = accepted as f64 / proposed as f64;
    *scale = (*scale * (2.0 * (rate - TARGET_ACCEPT)).exp()).clamp(lo, hi);
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    Joint,
    Dose,
    Volume,
}

impl Axis {
    #[inline]
    fn coords(self, d: f64, g: f64) -> (f64, f64) {
        match self {
            Axis::Joint => (d, g),
            Axis::Dose => (d, 0.0),
            Axis::Volume => (g, 0.0),
        }
    }
}

struct Component {
    config: MonotonePointConfig,
    axis: Axis,
    moves: &'static [MoveKind],
    locations: LocationLaw,
    /// Current excess over the base level at each row.
    excess: Vec<f64>,
}

/// Cached per-row state of a monotone chain.
struct RowState {
    xb: Vec<f64>,
    eta: Vec<f64>,
    ll: Vec<f64>,
    total: f64,
}

enum Pending {
    Nothing,
    /// `(row, new excess, new eta, new log-likelihood)`.
    Rows,
    Shift(f64),
    Rebase(f64),
}

struct ComponentTarget<'a> {
    design: &'a Design,
    axis: Axis,
    excess: &'a mut [f64],
    state: &'a mut RowState,
    pending: Pending,
    changed: &'a mut Vec<(usize, f64, f64, f64)>,
    shifted_ll: &'a mut Vec<f64>,
    pending_total: f64,
}

impl ComponentTarget<'_> {
    fn stage_row(&mut self, r: usize, new_excess: f64, delta: &mut f64) {
        let old = self.excess[r];
        if new_excess == old {
            return;
        }
        let eta = self.state.eta[r] + (new_excess - old);
        let ll = bernoulli_loglik(self.design.y[r], eta);
        *delta += ll - self.state.ll[r];
        self.changed.push((r, new_excess, eta, ll));
    }
}

impl SurfaceTarget for ComponentTarget<'_> {
    fn current(&self) -> f64 {
        self.state.total
    }

    fn evaluate(&mut self, candidate: &MonotonePointConfig, change: &Change) -> f64 {
        self.changed.clear();
        let design = self.design;
        let axis = self.axis;
        let mut delta = 0.0;
        match *change {
            Change::BaseShift { previous_base } => {
                let shift = candidate.base_level() - previous_base;
                self.shifted_ll.clear();
                let mut total = 0.0;
                for r in 0..design.rows() {
                    let ll = bernoulli_loglik(design.y[r], self.state.eta[r] + shift);
                    total += ll;
                    self.shifted_ll.push(ll);
                }
                self.pending = Pending::Shift(shift);
                self.pending_total = total;
                return total;
            }
            Change::Rebase { shift } => {
                for r in 0..design.rows() {
                    if self.excess[r] == 0.0 {
                        let eta = self.state.eta[r] + shift;
                        let ll = bernoulli_loglik(design.y[r], eta);
                        delta += ll - self.state.ll[r];
                        self.changed.push((r, 0.0, eta, ll));
                    }
                }
                self.pending = Pending::Rebase(shift);
                self.pending_total = self.state.total + delta;
                return self.pending_total;
            }
            Change::Birth { point } => {
                for r in 0..design.rows() {
                    let (u0, u1) = axis.coords(design.d[r], design.g[r]);
                    if point.is_dominated_by(u0, u1) && point.mark > self.excess[r] {
                        self.stage_row(r, point.mark, &mut delta);
                    }
                }
            }
            Change::Death { removed, .. } => {
                for r in 0..design.rows() {
                    let (u0, u1) = axis.coords(design.d[r], design.g[r]);
                    if self.excess[r] == removed.mark && removed.is_dominated_by(u0, u1) {
                        self.stage_row(r, candidate.excess_at(u0, u1), &mut delta);
                    }
                }
            }
            Change::MarkShift { index, previous_mark } => {
                let point = candidate.points()[index];
                let up = point.mark > previous_mark;
                for r in 0..design.rows() {
                    let (u0, u1) = axis.coords(design.d[r], design.g[r]);
                    if !point.is_dominated_by(u0, u1) {
                        continue;
                    }
                    if up {
                        if point.mark > self.excess[r] {
                            self.stage_row(r, point.mark, &mut delta);
                        }
                    } else if self.excess[r] == previous_mark {
                        self.stage_row(r, candidate.excess_at(u0, u1), &mut delta);
                    }
                }
            }
            Change::Move { index, previous } => {
                let point = candidate.points()[index];
                for r in 0..design.rows() {
                    let (u0, u1) = axis.coords(design.d[r], design.g[r]);
                    if self.excess[r] == previous.mark && previous.is_dominated_by(u0, u1) {
                        self.stage_row(r, candidate.excess_at(u0, u1), &mut delta);
                    } else if point.mark > self.excess[r] && point.is_dominated_by(u0, u1) {
                        self.stage_row(r, point.mark, &mut delta);
                    }
                }
            }
        }
        self.pending = Pending::Rows;
        self.pending_total = self.state.total + delta;
        self.pending_total
    }

    fn accept(&mut self) {
        match std::mem::replace(&mut self.pending, Pending::Nothing) {
            Pending::Nothing => {}
            Pending::Rows => {
                for &(r, ex, eta, ll) in self.changed.iter() {
                    self.excess[r] = ex;
                    self.state.eta[r] = eta;
                    self.state.ll[r] = ll;
                }
            }
            Pending::Shift(shift) => {
                self.state.eta.iter_mut().for_each(|e| *e += shift);
                std::mem::swap(&mut self.state.ll, self.shifted_ll);
            }
            Pending::Rebase(shift) => {
                self.excess.iter_mut().filter(|e| **e > 0.0).for_each(|e| *e -= shift);
                for &(r, _, eta, ll) in self.changed.iter() {
                    self.state.eta[r] = eta;
                    self.state.ll[r] = ll;
                }
            }
        }
        self.state.total = self.pending_total;
    }
}

/// Scales every mark of every component by a common factor about the
/// row-average excess, keeping the mean level in place. Mark-by-mark moves
/// struggle to widen or narrow the whole surface because intermediate levels
/// have to follow one at a time. Returns `(accepted, proposed)`.
fn stretch_step(
    design: &Design,
    comps: &mut [Component],
    state: &mut RowState,
    sd: f64,
    rng: &mut StreamRng,
    eta_prop: &mut [f64],
    ll_prop: &mut [f64],
) -> (bool, bool) {
    let points: usize = comps.iter().map(|c| c.config.len()).sum();
    if points == 0 {
        return (false, false);
    }
    let n_rows = design.rows();
    let log_factor = sd * rng.sample::<f64, _>(StandardNormal);
    let factor = log_factor.exp();
    let total_excess = |r: usize| comps.iter().map(|c| c.excess[r]).sum::<f64>();
    let pivot = (0..n_rows).map(total_excess).sum::<f64>() / n_rows as f64;
    let shift = -(factor - 1.0) * pivot;

    let mut total = 0.0;
    for r in 0..n_rows {
        let eta = state.eta[r] + (factor - 1.0) * total_excess(r) + shift;
        eta_prop[r] = eta;
        ll_prop[r] = bernoulli_loglik(design.y[r], eta);
        total += ll_prop[r];
    }
    // comps[0] carries the base level in both monotone families.
    let base = comps[0].config.base_level();
    let base_sd = comps[0].config.prior().base_level_prior_sd;
    let mut log_a = total - state.total + log_factor * points as f64;
    log_a += ((base / base_sd).powi(2) - ((base + shift) / base_sd).powi(2)) / 2.0;
    for c in comps.iter() {
        let marks: f64 = c.config.points().iter().map(|p| p.mark).sum();
        log_a -= c.config.prior().mark_prior_rate * (factor - 1.0) * marks;
    }
    if log_a.is_nan() || !(log_a >= 0.0 || rng.random::<f64>().ln() < log_a) {
        return (false, true);
    }
    for (k, c) in comps.iter_mut().enumerate() {
        c.config.stretch(factor, if k == 0 { shift } else { 0.0 });
        c.excess.iter_mut().for_each(|e| *e *= factor);
    }
    state.eta.copy_from_slice(eta_prop);
    state.ll.copy_from_slice(ll_prop);
    state.total = total;
    (true, true)
}

fn initial_level(design: &Design) -> f64 {
    let events = design.y.iter().filter(|&&y| y).count() as f64;
    let rate = (events / design.rows() as f64).clamp(0.01, 0.99);
    (rate / (1.0 - rate)).ln()
}

fn run_monotone(design: &Design, spec: &ModelSpec, rng: &mut StreamRng) -> Result<Chain, MsmError> {
    let n_rows = design.rows();
    let p = design.p();
    let mcmc: McmcSettings = spec.mcmc;
    let prior_sd = spec.coefficient_prior_sd;
    let base0 = initial_level(design);
    let atoms = |f: &dyn Fn(usize) -> [f64; 2]| {
        LocationLaw::atoms((0..n_rows).map(f).collect())
            .ok_or_else(|| MsmError::Numerical("row coordinates outside the unit square".into()))
    };

    let mut comps: Vec<Component> = match spec.family {
        ModelFamily::BivariableMonotone => vec![Component {
            config: MonotonePointConfig::constant(2, base0, spec.prior)?,
            axis: Axis::Joint,
            moves: &MoveKind::ALL,
            locations: atoms(&|r| [design.d[r], design.g[r]])?,
            excess: vec![0.0; n_rows],
        }],
        ModelFamily::AdditiveMonotone => vec![
            Component {
                config: MonotonePointConfig::constant(1, base0, spec.prior)?,
                axis: Axis::Dose,
                moves: &MoveKind::ALL,
                locations: atoms(&|r| [design.d[r], 0.0])?,
                excess: vec![0.0; n_rows],
            },
            Component {
                config: MonotonePointConfig::constant(1, 0.0, spec.prior)?,
                axis: Axis::Volume,
                moves: &MoveKind::WITHOUT_BASE,
                locations: atoms(&|r| [design.g[r], 0.0])?,
                excess: vec![0.0; n_rows],
            },
        ],
        _ => unreachable!("parametric family routed to the monotone sampler"),
    };

    let mut beta = vec![0.0; p];
    let mut state = RowState { xb: Vec::new(), eta: vec![base0; n_rows], ll: Vec::with_capacity(n_rows), total: 0.0 };
    design.xb(&beta, &mut state.xb);
    state.ll.extend((0..n_rows).map(|r| bernoulli_loglik(design.y[r], state.eta[r])));
    state.total = state.ll.iter().sum();
    if !state.total.is_finite() {
        return Err(MsmError::Numerical("initial quasi-log-likelihood is not finite".into()));
    }

    let mut beta_scale = 0.1;
    let mut stretch_sd = 0.05;
    let (mut stretch_acc, mut stretch_n) = (0usize, 0usize);
    let mut xb_prop = Vec::with_capacity(design.x.len());
    let mut eta_prop = vec![0.0; n_rows];
    let mut ll_prop = vec![0.0; n_rows];
    let mut changed = Vec::new();
    let mut shifted = Vec::with_capacity(n_rows);

    let mut chain = Chain {
        beta_draws: Vec::new(),
        surface_draws: Vec::new(),
        draw_deviance: Vec::new(),
        lambda_sum: vec![0.0; n_rows],
        diagnostics: SamplerDiagnostics::default(),
        numerical_rejections: 0,
    };
    let mut post_kernel = KernelStats::default();
    let mut batch_kernel = vec![KernelStats::default(); comps.len()];
    let (mut beta_acc, mut beta_prop_n) = (0usize, 0usize);
    let (mut post_beta_acc, mut post_beta_n) = (0usize, 0usize);

    for it in 0..mcmc.iterations {
        // Coefficients.
        if p > 0 {
            let proposal: Vec<f64> = beta
                .iter()
                .map(|b| b + beta_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            design.xb(&proposal, &mut xb_prop);
            let mut total = 0.0;
            for r in 0..n_rows {
                let i = design.patient[r];
                let eta = state.eta[r] + xb_prop[i] - state.xb[i];
                eta_prop[r] = eta;
                let ll = bernoulli_loglik(design.y[r], eta);
                ll_prop[r] = ll;
                total += ll;
            }
            let log_a = total - state.total + log_normal_prior(&proposal, prior_sd) - log_normal_prior(&beta, prior_sd);
            beta_prop_n += 1;
            if it >= mcmc.burn_in {
                post_beta_n += 1;
            }
            if log_a.is_nan() {
                chain.numerical_rejections += 1;
            } else if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
                beta = proposal;
                std::mem::swap(&mut state.xb, &mut xb_prop);
                std::mem::swap(&mut state.eta, &mut eta_prop);
                std::mem::swap(&mut state.ll, &mut ll_prop);
                state.total = total;
                beta_acc += 1;
                if it >= mcmc.burn_in {
                    post_beta_acc += 1;
                }
            }
        }

        // Surface components.
        for (c, comp) in comps.iter_mut().enumerate() {
            let mut config = std::mem::replace(
                &mut comp.config,
                MonotonePointConfig::constant(1, 0.0, spec.prior)?,
            );
            let mut target = ComponentTarget {
                design,
                axis: comp.axis,
                excess: &mut comp.excess,
                state: &mut state,
                pending: Pending::Nothing,
                changed: &mut changed,
                shifted_ll: &mut shifted,
                pending_total: 0.0,
            };
            for _ in 0..mcmc.surface_steps {
                let s = rjmcmc_step_with(&mut config, &mut target, rng, comp.moves, &comp.locations);
                batch_kernel[c].merge(&s);
                if it >= mcmc.burn_in {
                    post_kernel.merge(&s);
                }
            }
            comp.config = config;
        }
        // Shed drift from incremental updates.
        state.total = state.ll.iter().sum();

        let (accepted, tried) = stretch_step(design, &mut comps, &mut state, stretch_sd, rng, &mut eta_prop, &mut ll_prop);
        stretch_acc += accepted as usize;
        stretch_n += tried as usize;

        if it < mcmc.burn_in && (it + 1) % ADAPT_BATCH == 0 {
            adapt_scale(&mut beta_scale, beta_acc, beta_prop_n, 1e-4, 10.0);
            beta_acc = 0;
            beta_prop_n = 0;
            adapt_scale(&mut stretch_sd, stretch_acc, stretch_n, 1e-4, 1.0);
            stretch_acc = 0;
            stretch_n = 0;
            for (comp, batch) in comps.iter_mut().zip(batch_kernel.iter_mut()) {
                let prior = comp.config.prior_mut();
                adapt_scale(
                    &mut prior.proposal_sd_base,
                    batch.acceptances(MoveKind::BaseShift) as usize,
                    (batch.proposals(MoveKind::BaseShift) - batch.skipped[MoveKind::BaseShift as usize]) as usize,
                    1e-4,
                    5.0,
                );
                adapt_scale(
                    &mut prior.proposal_sd_mark,
                    batch.acceptances(MoveKind::MarkShift) as usize,
                    (batch.proposals(MoveKind::MarkShift) - batch.skipped[MoveKind::MarkShift as usize]) as usize,
                    1e-3,
                    3.0,
                );
                *batch = KernelStats::default();
            }
        }

        if it >= mcmc.burn_in && (it - mcmc.burn_in) % mcmc.thinning == 0 {
            chain.beta_draws.push(beta.clone());
            chain.draw_deviance.push(-2.0 * state.total);
            for r in 0..n_rows {
                chain.lambda_sum[r] += state.eta[r] - state.xb[design.patient[r]];
            }
            let draw = match spec.family {
                ModelFamily::BivariableMonotone => SurfaceDraw::Bivariable(comps[0].config.clone()),
                _ => SurfaceDraw::Additive {
                    dose: comps[0].config.clone(),
                    volume: comps[1].config.clone(),
                },
            };
            chain.surface_draws.push(draw);
        }
    }

    chain.numerical_rejections += post_kernel.numerical_errors;
    chain.diagnostics = SamplerDiagnostics {
        kernel: post_kernel,
        beta_acceptance: (post_beta_n > 0).then(|| post_beta_acc as f64 / post_beta_n as f64),
        coefficient_acceptance: None,
    };
    Ok(chain)
}

/// Parametric design matrix, row-major: dose-volume terms then covariates.
fn parametric_matrix(design: &Design, family: ModelFamily) -> (Vec<f64>, usize) {
    let terms = family.parametric_terms();
    let k = terms + design.p();
    let mut z = Vec::with_capacity(design.rows() * k);
    for r in 0..design.rows() {
        let (d, g) = (design.d[r], design.g[r]);
        z.extend_from_slice(&[1.0, d, g]);
        if terms == 5 {
            z.extend_from_slice(&[d * d, g * g]);
        }
        z.extend_from_slice(&design.x[design.patient[r]]);
    }
    (z, k)
}

fn parametric_loglik(z: &[f64], k: usize, y: &[bool], theta: &[f64]) -> f64 {
    z.chunks_exact(k)
        .zip(y)
        .map(|(row, &yi)| bernoulli_loglik(yi, row.iter().zip(theta).map(|(a, b)| a * b).sum()))
        .sum()
}

/// Newton ascent on the log quasi-posterior; returns the mode and the
/// negative Hessian there.
fn parametric_mode(z: &[f64], k: usize, y: &[bool], sd: f64) -> Result<(Vec<f64>, DMatrix<f64>), MsmError> {
    let objective = |t: &[f64]| parametric_loglik(z, k, y, t) + log_normal_prior(t, sd);
    let mut theta = vec![0.0; k];
    let mut current = objective(&theta);
    let mut info = DMatrix::<f64>::zeros(k, k);
    for _ in 0..200 {
        let mut grad = DVector::<f64>::from_iterator(k, theta.iter().map(|t| -t / (sd * sd)));
        info.fill(0.0);
        for i in 0..k {
            info[(i, i)] = 1.0 / (sd * sd);
        }
        for (row, &yi) in z.chunks_exact(k).zip(y) {
            let eta: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let p = expit(eta);
            let resid = if yi { 1.0 - p } else { -p };
            let w = p * (1.0 - p);
            for a in 0..k {
                grad[a] += resid * row[a];
                for b in 0..=a {
                    info[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let step = info
            .clone()
            .cholesky()
            .ok_or_else(|| MsmError::Numerical("information matrix is not positive definite".into()))?
            .solve(&grad);
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let value = objective(&trial);
            if value.is_finite() && value >= current - 1e-12 {
                theta = trial;
                current = value;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        let size = step.amax() * scale;
        if !improved || size < 1e-9 {
            break;
        }
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(MsmError::Numerical("mode search diverged".into()));
    }
    Ok((theta, info))
}

fn run_parametric(design: &Design, spec: &ModelSpec, rng: &mut StreamRng) -> Result<Chain, MsmError> {
    let (z, k) = parametric_matrix(design, spec.family);
    let terms = spec.family.parametric_terms();
    let sd = spec.coefficient_prior_sd;
    let (mode, info) = parametric_mode(&z, k, &design.y, sd)?;
    let cov = info
        .cholesky()
        .ok_or_else(|| MsmError::Numerical("information matrix is not positive definite".into()))?
        .inverse();
    let chol = cov
        .cholesky()
        .ok_or_else(|| MsmError::Numerical("posterior covariance is not positive definite".into()))?
        .l();

    let log_post = |t: &[f64]| parametric_loglik(&z, k, &design.y, t) + log_normal_prior(t, sd);
    let mut theta = mode;
    let mut current = log_post(&theta);
    let mut scale = 2.38 / (k as f64).sqrt();
    let mut chain = Chain {
        beta_draws: Vec::new(),
        surface_draws: Vec::new(),
        draw_deviance: Vec::new(),
        lambda_sum: vec![0.0; design.rows()],
        diagnostics: SamplerDiagnostics::default(),
        numerical_rejections: 0,
    };
    let (mut acc, mut prop) = (0usize, 0usize);
    let (mut post_acc, mut post_n) = (0usize, 0usize);
    let mcmc = spec.mcmc;
    for it in 0..mcmc.iterations {
        let noise = DVector::<f64>::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &chol * noise;
        let proposal: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
        let value = log_post(&proposal);
        prop += 1;
        if it >= mcmc.burn_in {
            post_n += 1;
        }
        let log_a = value - current;
        if log_a.is_nan() {
            chain.numerical_rejections += 1;
        } else if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
            theta = proposal;
            current = value;
            acc += 1;
            if it >= mcmc.burn_in {
                post_acc += 1;
            }
        }
        if it < mcmc.burn_in && (it + 1) % ADAPT_BATCH == 0 {
            adapt_scale(&mut scale, acc, prop, 1e-3, 10.0);
            acc = 0;
            prop = 0;
        }
        if it >= mcmc.burn_in && (it - mcmc.burn_in) % mcmc.thinning == 0 {
            let surface = theta[..terms].to_vec();
            chain.beta_draws.push(theta[terms..].to_vec());
            chain.draw_deviance.push(-2.0 * parametric_loglik(&z, k, &design.y, &theta));
            for (r, row) in z.chunks_exact(k).enumerate() {
                chain.lambda_sum[r] += row[..terms].iter().zip(&surface).map(|(a, b)| a * b).sum::<f64>();
            }
            chain.surface_draws.push(SurfaceDraw::Parametric(surface));
        }
    }
    chain.diagnostics.coefficient_acceptance = (post_n > 0).then(|| post_acc as f64 / post_n as f64);
    Ok(chain)
}

fn finish(
    cohort: &Cohort,
    spec: &ModelSpec,
    covariates: Vec<usize>,
    design: &Design,
    chain: Chain,
) -> Result<MsmFit, MsmError> {
    let draws = chain.beta_draws.len();
    if draws == 0 {
        return Err(MsmError::InvalidSpec("no draws retained after burn-in".into()));
    }
    let p = design.p();
    let mut beta_mean = vec![0.0; p];
    for b in &chain.beta_draws {
        for (m, v) in beta_mean.iter_mut().zip(b) {
            *m += v;
        }
    }
    beta_mean.iter_mut().for_each(|m| *m /= draws as f64);

    let xb: Vec<f64> = design
        .x
        .iter()
        .map(|x| x.iter().zip(&beta_mean).map(|(a, b)| a * b).sum())
        .collect();
    let mut sq = 0.0;
    let mut ll_at_mean = 0.0;
    for r in 0..design.rows() {
        let eta = xb[design.patient[r]] + chain.lambda_sum[r] / draws as f64;
        let y = if design.y[r] { 1.0 } else { 0.0 };
        sq += (y - expit(eta)).powi(2);
        ll_at_mean += bernoulli_loglik(design.y[r], eta);
    }
    let metrics = FitMetrics::from_parts(sq / design.rows() as f64, &chain.draw_deviance, -2.0 * ll_at_mean);

    let mut warnings = Vec::new();
    let events = cohort.event_count();
    if events == 0 || events == cohort.len() {
        warnings.push(FitWarning::DegenerateOutcome { events, patients: cohort.len() });
    }
    let mut check = |update: &str, rate: Option<f64>| {
        if let Some(rate) = rate {
            if !(0.02..=0.95).contains(&rate) {
                warnings.push(FitWarning::NonConvergence { update: update.to_string(), rate });
            }
        }
    };
    check("beta", chain.diagnostics.beta_acceptance);
    check("coefficients", chain.diagnostics.coefficient_acceptance);
    for kind in MoveKind::ALL {
        check(kind.name(), chain.diagnostics.kernel.acceptance_rate(kind));
    }
    if chain.numerical_rejections > 0 {
        warnings.push(FitWarning::NumericalRejections { count: chain.numerical_rejections });
    }

    let grid = *cohort.grid();
    let d_axis: Vec<f64> = (1..=grid.n_bins()).map(|k| grid.scaled(k)).collect();
    let g_axis = unit_axis(grid.n_bins());
    let mut fit = MsmFit {
        spec: spec.clone(),
        grid,
        covariate_names: covariates.iter().map(|&j| cohort.covariate_names()[j].clone()).collect(),
        covariate_indices: covariates,
        beta_draws: chain.beta_draws,
        surface_draws: chain.surface_draws,
        draw_deviance: chain.draw_deviance,
        beta_mean,
        quasi_posterior_mean_surface: MeanSurface { d_scaled: Vec::new(), g: Vec::new(), values: Vec::new() },
        metrics,
        diagnostics: chain.diagnostics,
        warnings,
    };
    let values = d_axis
        .iter()
        .map(|&d| g_axis.iter().map(|&g| fit.lambda_hat(d, g)).collect())
        .collect();
    fit.quasi_posterior_mean_surface = MeanSurface { d_scaled: d_axis, g: g_axis, values };
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dvh::{normal_dvh, DoseGrid, PatientRecord};
    use crate::msm::{build_replicated_rows, quasi_loglik};
    use crate::surface::is_monotone_sample;
    use rand::SeedableRng;

    fn cohort(n: usize, all_events: bool, seed: u64) -> Cohort {
        let grid = DoseGrid::new(6, 30.0, 50.0).unwrap();
        let mut rng = StreamRng::seed_from_u64(seed);
        let patients = (0..n)
            .map(|i| {
                let mu = 35.0 + 10.0 * rng.random::<f64>();
                let x = (rng.random::<f64>() < 0.4) as u8 as f64;
                let p = expit(-18.0 + 0.45 * mu + 0.5 * x);
                let y = all_events || rng.random::<f64>() < p;
                PatientRecord {
                    id: format!("{i}"),
                    covariates: vec![x],
                    dvh: normal_dvh(mu, 1.5, &grid).unwrap(),
                    outcome: y as u8,
                }
            })
            .collect();
        Cohort::new(grid, vec!["x".into()], patients).unwrap()
    }

    fn quick(family: ModelFamily) -> ModelSpec {
        let mut spec = ModelSpec::new(family);
        spec.mcmc = McmcSettings { iterations: 400, burn_in: 200, thinning: 2, seed: 3, surface_steps: 5 };
        spec
    }

    #[test]
    fn cached_deviance_matches_direct_loglik() {
        let c = cohort(30, false, 1);
        for family in ModelFamily::ALL {
            let fit = fit_msm(&c, &quick(family)).unwrap();
            let rows = build_replicated_rows(&c, &fit.covariate_indices);
            for (k, (b, s)) in fit.beta_draws.iter().zip(&fit.surface_draws).enumerate().step_by(17) {
                let direct = -2.0 * quasi_loglik(&rows, b, s).unwrap();
                assert!(
                    (direct - fit.draw_deviance[k]).abs() < 1e-8 * direct.abs().max(1.0),
                    "{family:?} draw {k}: {direct} vs {}",
                    fit.draw_deviance[k]
                );
            }
        }
    }

    #[test]
    fn constant_events_give_high_risk() {
        let c = cohort(20, true, 2);
        let fit = fit_msm(&c, &quick(ModelFamily::BivariableMonotone)).unwrap();
        assert!(fit.warnings.iter().any(|w| matches!(w, FitWarning::DegenerateOutcome { .. })));
        for p in c.patients() {
            for (k, &g) in p.dvh.values().iter().enumerate() {
                let eta = fit.covariate_effect(&p.covariates) + fit.lambda_hat(c.grid().scaled(k + 1), g);
                assert!(expit(eta) >= 0.95, "risk {}", expit(eta));
            }
        }
    }

    #[test]
    fn monotone_fits_have_monotone_draws() {
        let c = cohort(25, false, 4);
        for family in [ModelFamily::AdditiveMonotone, ModelFamily::BivariableMonotone] {
            let fit = fit_msm(&c, &quick(family)).unwrap();
            assert!(is_monotone_sample(&fit.quasi_posterior_mean_surface.values));
            assert_eq!(fit.beta_draws.len(), 100);
        }
    }

    #[test]
    fn seed_determinism() {
        let c = cohort(20, false, 5);
        let a = fit_msm(&c, &quick(ModelFamily::AdditiveMonotone)).unwrap();
        let b = fit_msm(&c, &quick(ModelFamily::AdditiveMonotone)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_spec() {
        let c = cohort(5, false, 6);
        let mut spec = quick(ModelFamily::Linear);
        spec.mcmc.burn_in = spec.mcmc.iterations;
        assert!(matches!(fit_msm(&c, &spec), Err(MsmError::InvalidSpec(_))));
        let mut spec = quick(ModelFamily::Linear);
        spec.covariates = Some(vec![3]);
        assert!(fit_msm(&c, &spec).is_err());
    }
}
