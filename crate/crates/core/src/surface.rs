//! Piecewise-constant monotone functions on `[0,1]` and `[0,1]²` built from
//! marked point configurations, and a reversible-jump sampler over them.
//!
//! A configuration holds a base level and a set of support points, each with
//! a non-negative mark. The function value at `u` is the base level plus the
//! largest mark among the points dominated by `u` (componentwise `<=`), or
//! just the base level when no point is dominated. Any such function is
//! non-decreasing in every argument, so every move of the sampler preserves
//! monotonicity without a separate check.

use crate::special::normal_pdf;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("query point {0:?} lies outside the unit hypercube")]
    DomainError(Vec<f64>),
    #[error("query has {got} coordinates, surface has dimension {dim}")]
    DimensionMismatch { dim: usize, got: usize },
    #[error("no draws to average")]
    EmptyDraws,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed draw record: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    /// Location; only the first coordinate is used by one-dimensional
    /// configurations and the second is kept at zero.
    pub coords: [f64; 2],
    pub mark: f64,
}

impl SupportPoint {
    /// Whether the query `(u0, u1)` dominates this point. One-dimensional
    /// points sit at second coordinate zero, so passing `u1 = 0` works there.
    #[inline]
    pub fn is_dominated_by(&self, u0: f64, u1: f64) -> bool {
        self.coords[0] <= u0 && self.coords[1] <= u1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub max_points: usize,
    /// Poisson mean of the point count before truncation at `max_points`.
    pub point_count_prior_mean: f64,
    /// Rate of the exponential prior on marks.
    pub mark_prior_rate: f64,
    pub base_level_prior_sd: f64,
    /// Log-scale step of the multiplicative mark walk.
    pub proposal_sd_mark: f64,
    pub proposal_sd_base: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            max_points: 200,
            point_count_prior_mean: 40.0,
            mark_prior_rate: 0.2,
            base_level_prior_sd: 10.0,
            proposal_sd_mark: 0.3,
            proposal_sd_base: 0.1,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), SurfaceError> {
        let positive = [
            ("point_count_prior_mean", self.point_count_prior_mean),
            ("mark_prior_rate", self.mark_prior_rate),
            ("base_level_prior_sd", self.base_level_prior_sd),
            ("proposal_sd_mark", self.proposal_sd_mark),
            ("proposal_sd_base", self.proposal_sd_base),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SurfaceError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_points < 1 {
            return Err(SurfaceError::InvalidConfig("max_points must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean of a Poisson(`mean`) law truncated to `0..=max`.
pub fn truncated_poisson_mean(mean: f64, max: usize) -> f64 {
    let weights = truncated_poisson_pmf(mean, max);
    weights.iter().enumerate().map(|(k, w)| k as f64 * w).sum()
}

/// Probabilities of a Poisson(`mean`) law truncated to `0..=max`.
pub fn truncated_poisson_pmf(mean: f64, max: usize) -> Vec<f64> {
    let mut logw = Vec::with_capacity(max + 1);
    let mut lw = -mean;
    logw.push(lw);
    for k in 1..=max {
        lw += mean.ln() - (k as f64).ln();
        logw.push(lw);
    }
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonePointConfig {
    dim: usize,
    base_level: f64,
    points: Vec<SupportPoint>,
    prior: PriorConfig,
}

impl MonotonePointConfig {
    /// Constant function at `base_level`.
    pub fn constant(dim: usize, base_level: f64, prior: PriorConfig) -> Result<Self, SurfaceError> {
        Self::new(dim, base_level, Vec::new(), prior)
    }

    pub fn new(
        dim: usize,
        base_level: f64,
        points: Vec<SupportPoint>,
        prior: PriorConfig,
    ) -> Result<Self, SurfaceError> {
        if dim != 1 && dim != 2 {
            return Err(SurfaceError::InvalidConfig(format!("dimension must be 1 or 2, got {dim}")));
        }
        prior.validate()?;
        if !base_level.is_finite() {
            return Err(SurfaceError::InvalidConfig("base level must be finite".into()));
        }
        for p in &points {
            let used = &p.coords[..dim];
            if used.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(SurfaceError::InvalidConfig(format!("point {:?} outside unit cube", p.coords)));
            }
            if dim == 1 && p.coords[1] != 0.0 {
                return Err(SurfaceError::InvalidConfig("1-d points must have zero second coordinate".into()));
            }
            if !(p.mark >= 0.0 && p.mark.is_finite()) {
                return Err(SurfaceError::InvalidConfig(format!("mark {} must be non-negative", p.mark)));
            }
        }
        if points.len() > prior.max_points {
            return Err(SurfaceError::InvalidConfig(format!(
                "{} points exceed the cap of {}",
                points.len(),
                prior.max_points
            )));
        }
        Ok(Self { dim, base_level, points, prior })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base_level(&self) -> f64 {
        self.base_level
    }

    pub fn points(&self) -> &[SupportPoint] {
        &self.points
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    /// Scales every mark by `factor` (> 0) and moves the base by `shift`.
    pub(crate) fn stretch(&mut self, factor: f64, shift: f64) {
        self.points.iter_mut().for_each(|p| p.mark *= factor);
        self.base_level += shift;
    }

    pub(crate) fn prior_mut(&mut self) -> &mut PriorConfig {
        &mut self.prior
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest mark dominated by `(u0, u1)`, zero when none is. The second
    /// coordinate is ignored in one dimension.
    #[inline]
    pub fn excess_at(&self, u0: f64, u1: f64) -> f64 {
        let mut best = 0.0f64;
        for p in &self.points {
            if p.mark > best && p.coords[0] <= u0 && (self.dim == 1 || p.coords[1] <= u1) {
                best = p.mark;
            }
        }
        best
    }

    /// Function value without domain checks.
    #[inline]
    pub fn value_at(&self, u0: f64, u1: f64) -> f64 {
        self.base_level + self.excess_at(u0, u1)
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<f64, SurfaceError> {
        if u.len() != self.dim {
            return Err(SurfaceError::DimensionMismatch { dim: self.dim, got: u.len() });
        }
        if u.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(SurfaceError::DomainError(u.to_vec()));
        }
        Ok(self.value_at(u[0], if self.dim == 2 { u[1] } else { 0.0 }))
    }

    /// Same function of the first argument, viewed as a 2-d surface that is
    /// constant in the second argument.
    pub fn embed_in_2d(&self) -> Self {
        let mut out = self.clone();
        out.dim = 2;
        for p in &mut out.points {
            p.coords[1] = 0.0;
        }
        out
    }

    /// Log prior density up to an additive constant.
    pub fn log_prior(&self) -> f64 {
        let k = self.points.len() as f64;
        let nu = self.prior.point_count_prior_mean;
        let rate = self.prior.mark_prior_rate;
        let sd = self.prior.base_level_prior_sd;
        let count = k * nu.ln() - ln_factorial(self.points.len());
        let marks: f64 = self.points.iter().map(|p| rate.ln() - rate * p.mark).sum();
        let base = -0.5 * (self.base_level / sd).powi(2);
        count + marks + base
    }

    /// One JSON object: `{"base": b, "points": [[c0, (c1,) mark], ...]}`.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "base": self.base_level, "points": self.point_rows() }).to_string()
    }

    pub fn from_json_line(line: &str, dim: usize, prior: PriorConfig) -> Result<Self, SurfaceError> {
        #[derive(Deserialize)]
        struct Record {
            base: f64,
            points: Vec<Vec<f64>>,
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| SurfaceError::Parse(e.to_string()))?;
        Self::from_record(rec.base, &rec.points, dim, prior)
    }

    pub(crate) fn from_record(
        base: f64,
        rows: &[Vec<f64>],
        dim: usize,
        prior: PriorConfig,
    ) -> Result<Self, SurfaceError> {
        let points = rows
            .iter()
            .map(|row| {
                if row.len() != dim + 1 {
                    return Err(SurfaceError::Parse(format!("point record {row:?} has wrong arity")));
                }
                let mut coords = [0.0; 2];
                coords[..dim].copy_from_slice(&row[..dim]);
                Ok(SupportPoint { coords, mark: row[dim] })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dim, base, points, prior)
    }

    pub(crate) fn point_rows(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|p| {
                let mut row = p.coords[..self.dim].to_vec();
                row.push(p.mark);
                row
            })
            .collect()
    }
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Birth,
    Death,
    Move,
    MarkShift,
    BaseShift,
}

impl MoveKind {
    pub const ALL: [MoveKind; 5] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::Move,
        MoveKind::MarkShift,
        MoveKind::BaseShift,
    ];
    /// Moves for a component whose base level is held fixed.
    pub const WITHOUT_BASE: [MoveKind; 4] =
        [MoveKind::Birth, MoveKind::Death, MoveKind::Move, MoveKind::MarkShift];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
            MoveKind::Move => "move",
            MoveKind::MarkShift => "mark_shift",
            MoveKind::BaseShift => "base_shift",
        }
    }
}

/// Proposal and acceptance tallies per move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelStats {
    pub proposed: [u64; 5],
    pub accepted: [u64; 5],
    /// Proposals that were impossible in the current state (death or move
    /// with no points, birth at the cap). The state is left unchanged.
    pub skipped: [u64; 5],
    /// Proposals rejected because the target returned NaN.
    pub numerical_errors: u64,
}

impl KernelStats {
    pub fn merge(&mut self, other: &KernelStats) {
        for i in 0..5 {
            self.proposed[i] += other.proposed[i];
            self.accepted[i] += other.accepted[i];
            self.skipped[i] += other.skipped[i];
        }
        self.numerical_errors += other.numerical_errors;
    }

    pub fn proposals(&self, kind: MoveKind) -> u64 {
        self.proposed[kind.slot()]
    }

    pub fn acceptances(&self, kind: MoveKind) -> u64 {
        self.accepted[kind.slot()]
    }

    /// Acceptance rate among proposals that could be made; `None` if there
    /// were none.
    pub fn acceptance_rate(&self, kind: MoveKind) -> Option<f64> {
        let i = kind.slot();
        let made = self.proposed[i] - self.skipped[i];
        (made > 0).then(|| self.accepted[i] as f64 / made as f64)
    }
}

/// Description of how a candidate differs from the current state, so a
/// target can update cached quantities locally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Change {
    /// The new point was appended at the end of the point list.
    Birth { point: SupportPoint },
    /// The point at `index` was removed by `swap_remove`.
    Death { index: usize, removed: SupportPoint },
    /// The point now at `index` used to be `previous`.
    Move { index: usize, previous: SupportPoint },
    MarkShift { index: usize, previous_mark: f64 },
    BaseShift { previous_base: f64 },
    /// The base level rose by `shift` and every mark fell by `shift`, so
    /// only the region dominating no point changed.
    Rebase { shift: f64 },
}

/// Log target (the part of the log posterior that is not the configuration
/// prior) seen by the reversible-jump kernel.
pub trait SurfaceTarget {
    /// Log target at the current state.
    fn current(&self) -> f64;
    /// Log target at `candidate`, which differs from the current state by
    /// `change`. May cache work for a following [`SurfaceTarget::accept`].
    fn evaluate(&mut self, candidate: &MonotonePointConfig, change: &Change) -> f64;
    /// The candidate passed to the last `evaluate` becomes the current state.
    fn accept(&mut self);
}

/// Adapts a plain closure over configurations into a [`SurfaceTarget`].
pub struct FnTarget<F> {
    f: F,
    current: f64,
    pending: f64,
}

impl<F: FnMut(&MonotonePointConfig) -> f64> FnTarget<F> {
    pub fn new(mut f: F, start: &MonotonePointConfig) -> Self {
        let current = f(start);
        Self { f, current, pending: current }
    }
}

impl<F: FnMut(&MonotonePointConfig) -> f64> SurfaceTarget for FnTarget<F> {
    fn current(&self) -> f64 {
        self.current
    }

    fn evaluate(&mut self, candidate: &MonotonePointConfig, _change: &Change) -> f64 {
        self.pending = (self.f)(candidate);
        self.pending
    }

    fn accept(&mut self) {
        self.current = self.pending;
    }
}

// Rate of the "step up" branch of the birth mark proposal.
const BIRTH_STEP_RATE: f64 = 4.0;
// Standard deviation of the local (reflected) relocation walk.
const LOCAL_MOVE_SD: f64 = 0.05;

fn birth_mark_log_density(mark: f64, floor: f64, prior_rate: f64) -> f64 {
    let from_prior = prior_rate * (-prior_rate * mark).exp();
    let step_up = if mark > floor {
        BIRTH_STEP_RATE * (-BIRTH_STEP_RATE * (mark - floor)).exp()
    } else {
        0.0
    };
    (0.5 * from_prior + 0.5 * step_up).ln()
}

fn reflect_unit(mut x: f64) -> f64 {
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > 1.0 {
            x = 2.0 - x;
        } else {
            return x;
        }
    }
}

/// Prior law of point locations, also used to propose them.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum LocationLaw {
    /// Uniform on the unit square (or interval).
    #[default]
    Uniform,
    /// Uniform over a list of observed coordinates, with repeats counted.
    /// A step function only changes where it dominates data, so points off
    /// the observed set add nothing but prior mass in empty regions.
    Atoms(Vec<[f64; 2]>),
}

impl LocationLaw {
    /// Atoms from coordinate pairs; `None` if there are none or any lies
    /// outside the unit square.
    pub fn atoms(coords: Vec<[f64; 2]>) -> Option<Self> {
        let inside = coords.iter().all(|c| c.iter().all(|v| (0.0..=1.0).contains(v)));
        (!coords.is_empty() && inside).then_some(Self::Atoms(coords))
    }

    fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> [f64; 2] {
        match self {
            Self::Uniform => {
                let mut c = [0.0; 2];
                c.iter_mut().take(dim).for_each(|v| *v = rng.random::<f64>());
                c
            }
            Self::Atoms(a) => a[rng.random_range(0..a.len())],
        }
    }
}

/// One reversible-jump Metropolis–Hastings–Green update.
///
/// A move type is drawn uniformly from `moves`:
/// * birth adds a point at a uniform location with a mark drawn from an
///   even mixture of the mark prior and a step above the current level;
/// * death removes a uniformly chosen point;
/// * move relocates a point, half the time to a fresh uniform location and
///   half the time by a reflected Gaussian step;
/// * mark shift multiplies a mark by a log-normal factor;
/// * base shift adds a Gaussian increment to the base level; half the time
///   every mark is lowered by the same amount, which moves only the part of
///   the surface above no point.
///
/// Point-count prior ratios use the truncated Poisson law; impossible
/// proposals are skipped and leave the state unchanged.
pub fn rjmcmc_step<T: SurfaceTarget, R: Rng + ?Sized>(
    config: &mut MonotonePointConfig,
    target: &mut T,
    rng: &mut R,
    moves: &[MoveKind],
) -> KernelStats {
    rjmcmc_step_with(config, target, rng, moves, &LocationLaw::Uniform)
}

/// As [`rjmcmc_step`], with point locations following `locations` instead
/// of the uniform law. The law serves as both prior and proposal, so it
/// cancels from birth, death and relocation ratios.
pub fn rjmcmc_step_with<T: SurfaceTarget, R: Rng + ?Sized>(
    config: &mut MonotonePointConfig,
    target: &mut T,
    rng: &mut R,
    moves: &[MoveKind],
    locations: &LocationLaw,
) -> KernelStats {
    let mut stats = KernelStats::default();
    let kind = moves[rng.random_range(0..moves.len())];
    let slot = kind.slot();
    stats.proposed[slot] += 1;

    let prior = config.prior;
    let k = config.points.len();
    let nu = prior.point_count_prior_mean;
    let rate = prior.mark_prior_rate;
    let dim = config.dim;

    let mut candidate = config.clone();
    let (change, log_ratio) = match kind {
        MoveKind::Birth => {
            if k >= prior.max_points {
                stats.skipped[slot] += 1;
                return stats;
            }
            let coords = locations.sample(dim, rng);
            let floor = config.excess_at(coords[0], coords[1]);
            let mark = if rng.random::<bool>() {
                Exp::new(rate).expect("positive rate").sample(rng)
            } else {
                floor + Exp::new(BIRTH_STEP_RATE).expect("positive rate").sample(rng)
            };
            let point = SupportPoint { coords, mark };
            candidate.points.push(point);
            // The location is drawn from its prior intensity, so that factor cancels.
            let log_prior_ratio = (nu / (k as f64 + 1.0)).ln() + rate.ln() - rate * mark;
            let log_q = birth_mark_log_density(mark, floor, rate);
            (Change::Birth { point }, log_prior_ratio - log_q)
        }
        MoveKind::Death => {
            if k == 0 {
                stats.skipped[slot] += 1;
                return stats;
            }
            let index = rng.random_range(0..k);
            let removed = candidate.points.swap_remove(index);
            let floor = candidate.excess_at(removed.coords[0], removed.coords[1]);
            let log_prior_ratio = (k as f64 / nu).ln() - (rate.ln() - rate * removed.mark);
            let log_q = birth_mark_log_density(removed.mark, floor, rate);
            (Change::Death { index, removed }, log_prior_ratio + log_q)
        }
        MoveKind::Move => {
            if k == 0 {
                stats.skipped[slot] += 1;
                return stats;
            }
            let index = rng.random_range(0..k);
            let previous = candidate.points[index];
            // Local steps only make sense on a continuum.
            if *locations == LocationLaw::Uniform && rng.random::<bool>() {
                for c in candidate.points[index].coords.iter_mut().take(dim) {
                    let step: f64 = rng.sample(StandardNormal);
                    *c = reflect_unit(*c + LOCAL_MOVE_SD * step);
                }
            } else {
                candidate.points[index].coords = locations.sample(dim, rng);
            }
            (Change::Move { index, previous }, 0.0)
        }
        MoveKind::MarkShift => {
            if k == 0 {
                stats.skipped[slot] += 1;
                return stats;
            }
            let index = rng.random_range(0..k);
            let previous_mark = candidate.points[index].mark;
            let step: f64 = rng.sample(StandardNormal);
            let mark = previous_mark * (prior.proposal_sd_mark * step).exp();
            candidate.points[index].mark = mark;
            // Prior ratio times the Jacobian of the log-scale walk.
            let log_ratio = -rate * (mark - previous_mark) + (mark / previous_mark).ln();
            (Change::MarkShift { index, previous_mark }, log_ratio)
        }
        MoveKind::BaseShift => {
            let previous_base = config.base_level;
            let compensate = k > 0 && rng.random::<bool>();
            let step: f64 = rng.sample(StandardNormal);
            let shift = prior.proposal_sd_base * step;
            candidate.base_level = previous_base + shift;
            let sd = prior.base_level_prior_sd;
            let log_ratio = (normal_pdf(candidate.base_level / sd) / normal_pdf(previous_base / sd)).ln();
            if compensate {
                if candidate.points.iter().any(|p| p.mark - shift <= 0.0) {
                    return stats;
                }
                candidate.points.iter_mut().for_each(|p| p.mark -= shift);
                (Change::Rebase { shift }, log_ratio + rate * shift * k as f64)
            } else {
                (Change::BaseShift { previous_base }, log_ratio)
            }
        }
    };

    let current = target.current();
    let proposed = target.evaluate(&candidate, &change);
    if proposed.is_nan() {
        stats.numerical_errors += 1;
        return stats;
    }
    let log_accept = proposed - current + log_ratio;
    if log_accept.is_nan() {
        stats.numerical_errors += 1;
        return stats;
    }
    if log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept {
        target.accept();
        *config = candidate;
        stats.accepted[slot] += 1;
    }
    stats
}

fn check_axis(axis: &[f64]) -> Result<(), SurfaceError> {
    if axis.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(SurfaceError::DomainError(axis.to_vec()));
    }
    if axis.windows(2).any(|w| w[0] > w[1]) {
        return Err(SurfaceError::InvalidConfig("grid axes must be sorted ascending".into()));
    }
    Ok(())
}

/// Average of the draws evaluated on the `grid_d × grid_g` lattice; row `a`
/// corresponds to `grid_d[a]`. One-dimensional draws are constant along
/// `grid_g`.
pub fn posterior_mean_on_grid(
    draws: &[MonotonePointConfig],
    grid_d: &[f64],
    grid_g: &[f64],
) -> Result<Vec<Vec<f64>>, SurfaceError> {
    if draws.is_empty() {
        return Err(SurfaceError::EmptyDraws);
    }
    check_axis(grid_d)?;
    check_axis(grid_g)?;
    let mut out = vec![vec![0.0; grid_g.len()]; grid_d.len()];
    for draw in draws {
        for (row, &d) in out.iter_mut().zip(grid_d) {
            for (cell, &g) in row.iter_mut().zip(grid_g) {
                *cell += draw.value_at(d, g);
            }
        }
    }
    let n = draws.len() as f64;
    out.iter_mut().flatten().for_each(|c| *c /= n);
    Ok(out)
}

/// Whether a matrix is non-decreasing along both axes (slack `1e-12`).
pub fn is_monotone_sample(values: &[Vec<f64>]) -> bool {
    const EPS: f64 = 1e-12;
    for (a, row) in values.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if b + 1 < row.len() && row[b + 1] < v - EPS {
                return false;
            }
            if let Some(next) = values.get(a + 1) {
                if let Some(&below) = next.get(b) {
                    if below < v - EPS {
                        return false;
                    }
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(c0: f64, c1: f64, mark: f64) -> SupportPoint {
        SupportPoint { coords: [c0, c1], mark }
    }

    fn two_point() -> MonotonePointConfig {
        MonotonePointConfig::new(
            2,
            0.0,
            vec![pt(0.2, 0.5, 1.0), pt(0.6, 0.1, 2.0)],
            PriorConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let flat = MonotonePointConfig::constant(2, 0.3, PriorConfig::default()).unwrap();
        assert_eq!(flat.evaluate(&[0.9, 0.1]).unwrap(), 0.3);
        let c = two_point();
        assert_eq!(c.evaluate(&[0.7, 0.6]).unwrap(), 2.0);
        assert_eq!(c.evaluate(&[0.3, 0.6]).unwrap(), 1.0);
        assert_eq!(c.evaluate(&[0.1, 0.05]).unwrap(), 0.0);
        assert_eq!(c.evaluate(&[0.0, 0.0]).unwrap(), c.base_level());
        // Ties count as dominated.
        assert_eq!(c.evaluate(&[0.2, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_rejects_bad_queries() {
        let c = two_point();
        assert!(matches!(c.evaluate(&[1.2, 0.5]), Err(SurfaceError::DomainError(_))));
        assert!(matches!(c.evaluate(&[0.5]), Err(SurfaceError::DimensionMismatch { .. })));
    }

    #[test]
    fn invalid_configs() {
        let p = PriorConfig::default();
        assert!(MonotonePointConfig::new(3, 0.0, vec![], p).is_err());
        assert!(MonotonePointConfig::new(2, 0.0, vec![pt(0.5, 0.5, -1.0)], p).is_err());
        assert!(MonotonePointConfig::new(2, 0.0, vec![pt(1.5, 0.5, 1.0)], p).is_err());
        let bad = PriorConfig { mark_prior_rate: 0.0, ..p };
        assert!(MonotonePointConfig::constant(1, 0.0, bad).is_err());
    }

    #[test]
    fn one_dim_embedding_is_flat_in_volume() {
        let c = MonotonePointConfig::new(
            1,
            -1.0,
            vec![pt(0.3, 0.0, 0.5), pt(0.7, 0.0, 1.5)],
            PriorConfig::default(),
        )
        .unwrap();
        let e = c.embed_in_2d();
        for &d in &[0.0, 0.3, 0.5, 0.71, 1.0] {
            let expected = c.evaluate(&[d]).unwrap();
            for &g in &[0.0, 0.2, 0.9, 1.0] {
                assert_eq!(e.evaluate(&[d, g]).unwrap(), expected);
            }
        }
    }

    #[test]
    fn json_line_roundtrip() {
        let c = two_point();
        let line = c.to_json_line();
        let back = MonotonePointConfig::from_json_line(&line, 2, *c.prior()).unwrap();
        assert_eq!(back, c);
        assert!(MonotonePointConfig::from_json_line("{\"base\":0,\"points\":[[0.1]]}", 2, *c.prior()).is_err());
    }

    #[test]
    fn grid_mean_examples() {
        let p = PriorConfig::default();
        let a = MonotonePointConfig::constant(2, 0.0, p).unwrap();
        let b = MonotonePointConfig::constant(2, 1.0, p).unwrap();
        let m = posterior_mean_on_grid(&[a.clone(), b], &[0.0, 0.5, 1.0], &[0.0, 1.0]).unwrap();
        assert!(m.iter().flatten().all(|v| *v == 0.5));
        let single = posterior_mean_on_grid(&[a], &[0.1, 0.2], &[0.3]).unwrap();
        assert!(single.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(posterior_mean_on_grid(&[], &[0.1], &[0.1]), Err(SurfaceError::EmptyDraws));
        assert!(posterior_mean_on_grid(&[two_point()], &[0.5, 0.1], &[0.1]).is_err());
    }

    #[test]
    fn monotone_sample_examples() {
        assert!(is_monotone_sample(&[vec![2.0, 2.0], vec![2.0, 2.0]]));
        assert!(is_monotone_sample(&[vec![0.0, 1.0], vec![1.0, 2.0]]));
        assert!(!is_monotone_sample(&[vec![0.0, 1.0], vec![0.5, 0.4]]));
    }

    #[test]
    fn death_on_empty_is_skipped() {
        let mut c = MonotonePointConfig::constant(2, 0.0, PriorConfig::default()).unwrap();
        let mut target = FnTarget::new(|_: &MonotonePointConfig| 0.0, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stats = rjmcmc_step(&mut c, &mut target, &mut rng, &[MoveKind::Death]);
        assert_eq!(stats.skipped[MoveKind::Death as usize], 1);
        assert_eq!(stats.accepted[MoveKind::Death as usize], 0);
        assert!(c.is_empty());
    }

    #[test]
    fn nan_target_is_rejected_and_flagged() {
        let mut c = two_point();
        let before = c.clone();
        let mut calls = 0;
        let mut target = FnTarget::new(
            |_: &MonotonePointConfig| {
                calls += 1;
                if calls > 1 {
                    f64::NAN
                } else {
                    0.0
                }
            },
            &c,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stats = rjmcmc_step(&mut c, &mut target, &mut rng, &[MoveKind::BaseShift]);
        assert_eq!(stats.numerical_errors, 1);
        assert_eq!(c, before);
    }

    #[test]
    fn prior_only_point_count_matches_truncated_poisson() {
        let prior = PriorConfig { point_count_prior_mean: 4.0, max_points: 12, ..Default::default() };
        let mut c = MonotonePointConfig::constant(2, 0.0, prior).unwrap();
        let mut target = FnTarget::new(|_: &MonotonePointConfig| 0.0, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sweeps = 50_000;
        let burn = 2_000;
        let mut counts = Vec::with_capacity(sweeps);
        for i in 0..sweeps + burn {
            rjmcmc_step(&mut c, &mut target, &mut rng, &MoveKind::ALL);
            if i >= burn {
                counts.push(c.len() as f64);
            }
        }
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let expected = truncated_poisson_mean(4.0, 12);
        // Batch-means standard error for an autocorrelated chain.
        let batch = 1000;
        let batch_means: Vec<f64> = counts
            .chunks(batch)
            .map(|ch| ch.iter().sum::<f64>() / ch.len() as f64)
            .collect();
        let bm = batch_means.iter().sum::<f64>() / batch_means.len() as f64;
        let var = batch_means.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (batch_means.len() - 1) as f64;
        let se = (var / batch_means.len() as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se + 0.05, "mean {mean} vs {expected} (se {se})");
    }
}
