//! Dose grids and dose-volume histograms.
//!
//! A cumulative DVH `g` stores, for every dose bin `d`, the fraction of the
//! organ volume receiving at least the lower edge of that bin. The
//! differential form `b` is its bin-wise mass; the two are related by suffix
//! sums and adjacent differences (`b_d = g_d - g_{d+1}`, `g_{D+1} = 0`).

use crate::special::normal_sf;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DvhError {
    #[error("invalid dose grid: {0}")]
    InvalidGrid(String),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("histograms are defined on different dose grids")]
    GridMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty patient subset")]
    EmptySubset,
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),
}

/// Numerical tolerances for histogram validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvhTolerances {
    /// Slack for componentwise ordering checks.
    pub ordering: f64,
    /// Slack on total differential mass.
    pub mass: f64,
    /// Largest upward step in a cumulative DVH that is repaired (by a running
    /// minimum) rather than rejected.
    pub repair: f64,
    /// Require differential mass to sum to one even when the grid starts
    /// above zero dose.
    pub strict_mass: bool,
}

impl Default for DvhTolerances {
    fn default() -> Self {
        Self {
            ordering: 1e-12,
            mass: 1e-9,
            repair: 1e-6,
            strict_mass: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    n_bins: usize,
    d_min: f64,
    d_max: f64,
}

impl DoseGrid {
    pub fn new(n_bins: usize, d_min: f64, d_max: f64) -> Result<Self, DvhError> {
        if n_bins < 2 {
            return Err(DvhError::InvalidGrid(format!("need at least 2 bins, got {n_bins}")));
        }
        if !(d_min.is_finite() && d_max.is_finite()) || d_max <= d_min {
            return Err(DvhError::InvalidGrid(format!(
                "d_max ({d_max}) must exceed d_min ({d_min})"
            )));
        }
        Ok(Self { n_bins, d_min, d_max })
    }

    /// Grid over `[0, d_max]`.
    pub fn from_zero(n_bins: usize, d_max: f64) -> Result<Self, DvhError> {
        Self::new(n_bins, 0.0, d_max)
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn bin_width(&self) -> f64 {
        (self.d_max - self.d_min) / self.n_bins as f64
    }

    /// Lower edge, in Gy, of 1-based bin `k`.
    pub fn lower_edge(&self, bin: usize) -> f64 {
        self.d_min + (bin as f64 - 1.0) * self.bin_width()
    }

    /// Dose coordinate of 1-based bin `k` rescaled to `[0, 1]`.
    pub fn scaled(&self, bin: usize) -> f64 {
        (bin as f64 - 1.0) / (self.n_bins as f64 - 1.0)
    }

    /// Inverse of [`DoseGrid::scaled`] on the continuous scale: the dose in Gy
    /// at a scaled coordinate in `[0, 1]` (lower edge of bin 1 to lower edge
    /// of bin `D`).
    pub fn dose_at_scaled(&self, s: f64) -> f64 {
        self.lower_edge(1) + s * (self.lower_edge(self.n_bins) - self.lower_edge(1))
    }

    pub fn contains_bin(&self, bin: usize) -> bool {
        (1..=self.n_bins).contains(&bin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialDvh {
    grid: DoseGrid,
    b: Vec<f64>,
}

impl DifferentialDvh {
    pub fn new(grid: DoseGrid, b: Vec<f64>) -> Result<Self, DvhError> {
        Self::with_tolerances(grid, b, &DvhTolerances::default())
    }

    pub fn with_tolerances(grid: DoseGrid, b: Vec<f64>, tol: &DvhTolerances) -> Result<Self, DvhError> {
        if b.len() != grid.n_bins() {
            return Err(DvhError::InvalidHistogram(format!(
                "expected {} bins, got {}",
                grid.n_bins(),
                b.len()
            )));
        }
        if let Some((i, v)) = b.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(DvhError::InvalidHistogram(format!("b[{}] = {v} outside [0, 1]", i + 1)));
        }
        let total: f64 = b.iter().sum();
        if total > 1.0 + tol.mass {
            return Err(DvhError::InvalidHistogram(format!("total mass {total} exceeds 1")));
        }
        if (tol.strict_mass || grid.d_min() == 0.0) && (total - 1.0).abs() > tol.mass {
            return Err(DvhError::InvalidHistogram(format!("total mass {total} differs from 1")));
        }
        Ok(Self { grid, b })
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.b
    }

    pub fn total_mass(&self) -> f64 {
        self.b.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeDvh {
    grid: DoseGrid,
    g: Vec<f64>,
}

impl CumulativeDvh {
    /// Validates `g` with default tolerances. Upward steps no larger than
    /// `1e-6` are treated as export noise and flattened by a running minimum.
    pub fn new(grid: DoseGrid, g: Vec<f64>) -> Result<Self, DvhError> {
        Self::with_tolerances(grid, g, &DvhTolerances::default())
    }

    pub fn with_tolerances(grid: DoseGrid, mut g: Vec<f64>, tol: &DvhTolerances) -> Result<Self, DvhError> {
        if g.len() != grid.n_bins() {
            return Err(DvhError::InvalidHistogram(format!(
                "expected {} bins, got {}",
                grid.n_bins(),
                g.len()
            )));
        }
        for (i, v) in g.iter_mut().enumerate() {
            if !v.is_finite() || *v < -tol.mass || *v > 1.0 + tol.mass {
                return Err(DvhError::InvalidHistogram(format!("g[{}] = {v} outside [0, 1]", i + 1)));
            }
            *v = v.clamp(0.0, 1.0);
        }
        let mut running = g[0];
        for i in 1..g.len() {
            if g[i] > running {
                if g[i] - running > tol.repair {
                    return Err(DvhError::InvalidHistogram(format!(
                        "cumulative DVH increases by {} at bin {}",
                        g[i] - running,
                        i + 1
                    )));
                }
                g[i] = running;
            }
            running = g[i];
        }
        Ok(Self { grid, g })
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    /// Volume fraction at 1-based bin `bin`.
    pub fn at(&self, bin: usize) -> f64 {
        self.g[bin - 1]
    }
}

/// `g_d = Σ_{d' ≥ d} b_{d'}`.
pub fn cumulative_from_differential(b: &DifferentialDvh) -> CumulativeDvh {
    let mut g = vec![0.0; b.b.len()];
    let mut acc = 0.0;
    for (slot, &mass) in g.iter_mut().zip(&b.b).rev() {
        acc += mass;
        *slot = acc.min(1.0);
    }
    CumulativeDvh { grid: b.grid, g }
}

/// `b_d = g_d - g_{d+1}` with `g_{D+1} = 0`.
pub fn differential_from_cumulative(g: &CumulativeDvh) -> Result<DifferentialDvh, DvhError> {
    differential_from_values(g.grid, &g.g)
}

/// Adjacent differences of a raw cumulative vector; fails if it increases
/// anywhere by more than the ordering tolerance.
pub fn differential_from_values(grid: DoseGrid, g: &[f64]) -> Result<DifferentialDvh, DvhError> {
    let tol = DvhTolerances::default();
    let n = g.len();
    if n != grid.n_bins() {
        return Err(DvhError::InvalidHistogram(format!("expected {} bins, got {n}", grid.n_bins())));
    }
    let mut b = Vec::with_capacity(n);
    for d in 0..n {
        let next = if d + 1 < n { g[d + 1] } else { 0.0 };
        let mass = g[d] - next;
        if mass < -tol.ordering {
            return Err(DvhError::InvalidHistogram(format!(
                "cumulative DVH increases at bin {}",
                d + 2
            )));
        }
        b.push(mass.max(0.0));
    }
    DifferentialDvh::with_tolerances(grid, b, &DvhTolerances { strict_mass: false, ..tol })
}

/// True when `lo` is dominated by `hi` on the cumulative scale: every volume
/// in `lo` is no larger than the matching volume in `hi`.
pub fn stochastically_dominates(lo: &CumulativeDvh, hi: &CumulativeDvh) -> Result<bool, DvhError> {
    if lo.grid != hi.grid {
        return Err(DvhError::GridMismatch);
    }
    let eps = DvhTolerances::default().ordering;
    Ok(lo.g.iter().zip(&hi.g).all(|(a, b)| *a <= *b + eps))
}

/// DVH of a normal dose distribution: `g_d = 1 - Φ((edge_d - mu) / sigma)`.
pub fn normal_dvh(mu: f64, sigma: f64, grid: &DoseGrid) -> Result<CumulativeDvh, DvhError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DvhError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if mu.is_nan() {
        return Err(DvhError::InvalidParameter("mu is NaN".into()));
    }
    let g = (1..=grid.n_bins())
        .map(|d| normal_sf((grid.lower_edge(d) - mu) / sigma))
        .collect();
    CumulativeDvh::new(*grid, g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub covariates: Vec<f64>,
    pub dvh: CumulativeDvh,
    pub outcome: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    grid: DoseGrid,
    covariate_names: Vec<String>,
    patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(
        grid: DoseGrid,
        covariate_names: Vec<String>,
        patients: Vec<PatientRecord>,
    ) -> Result<Self, DvhError> {
        if patients.is_empty() {
            return Err(DvhError::InvalidCohort("cohort has no patients".into()));
        }
        let p = covariate_names.len();
        for rec in &patients {
            if rec.dvh.grid != grid {
                return Err(DvhError::GridMismatch);
            }
            if rec.outcome > 1 {
                return Err(DvhError::InvalidCohort(format!(
                    "patient {}: outcome {} is not binary",
                    rec.id, rec.outcome
                )));
            }
            if rec.covariates.len() != p {
                return Err(DvhError::InvalidCohort(format!(
                    "patient {}: {} covariates, expected {p}",
                    rec.id,
                    rec.covariates.len()
                )));
            }
            if rec.covariates.iter().any(|v| !v.is_finite()) {
                return Err(DvhError::InvalidCohort(format!("patient {}: non-finite covariate", rec.id)));
            }
        }
        Ok(Self { grid, covariate_names, patients })
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn covariate_count(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn event_count(&self) -> usize {
        self.patients.iter().filter(|p| p.outcome == 1).count()
    }

    /// Cohort made of the listed patients, repeats allowed (bootstrap draws).
    pub fn resample(&self, indices: &[usize]) -> Result<Self, DvhError> {
        if indices.is_empty() {
            return Err(DvhError::EmptySubset);
        }
        let patients = indices.iter().map(|&i| self.patients[i].clone()).collect();
        Ok(Self {
            grid: self.grid,
            covariate_names: self.covariate_names.clone(),
            patients,
        })
    }
}

/// Componentwise mean DVH over a subset of patients.
pub fn pointwise_average_dvh(cohort: &Cohort, subset: &[usize]) -> Result<CumulativeDvh, DvhError> {
    if subset.is_empty() {
        return Err(DvhError::EmptySubset);
    }
    let n_bins = cohort.grid.n_bins();
    let mut acc = vec![0.0; n_bins];
    for &i in subset {
        let rec = cohort
            .patients
            .get(i)
            .ok_or_else(|| DvhError::InvalidParameter(format!("patient index {i} out of range")))?;
        for (a, v) in acc.iter_mut().zip(rec.dvh.values()) {
            *a += v;
        }
    }
    let k = subset.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    CumulativeDvh::new(cohort.grid, acc)
}
