//! One-dimensional numerical integration.
//!
//! The workhorse is a globally adaptive 7/15-point Gauss–Kronrod scheme: the
//! interval with the largest error estimate is bisected until the summed
//! error meets `max(abs_tol, rel_tol * |value|)`. A composite Simpson rule
//! with Richardson error control is kept as a fallback for integrands where
//! Kronrod bisection runs out of subdivisions.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("integral did not reach tolerance: value {value}, estimated error {error}")]
    NotConverged { value: f64, error: f64 },
    #[error("integrand returned a non-finite value at t = {at}")]
    NonFinite { at: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            max_subdivisions: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

// Positive Kronrod abscissae, outermost first; the last one is the centre.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64), QuadratureError> {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite { at: centre });
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let (t1, t2) = (centre - dx, centre + dx);
        let (f1, f2) = (f(t1), f(t2));
        if !f1.is_finite() {
            return Err(QuadratureError::NonFinite { at: t1 });
        }
        if !f2.is_finite() {
            return Err(QuadratureError::NonFinite { at: t2 });
        }
        kronrod += w * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok((kronrod * half, ((kronrod - gauss) * half).abs()))
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    settings: &QuadratureSettings,
) -> Result<Integral, QuadratureError> {
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let (value, error) = kronrod15(&mut f, lo, hi)?;
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a: lo, b: hi, value, error });
    let mut total = value;
    let mut total_err = error;
    let min_width = (hi - lo) * 1e-13;

    loop {
        let tol = settings.abs_tol.max(settings.rel_tol * total.abs());
        if total_err <= tol {
            break;
        }
        if heap.len() >= settings.max_subdivisions {
            return Err(QuadratureError::NotConverged { value: sign * total, error: total_err });
        }
        let worst = heap.pop().expect("heap is never empty");
        if worst.b - worst.a < min_width {
            return Err(QuadratureError::NotConverged { value: sign * total, error: total_err });
        }
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = kronrod15(&mut f, worst.a, mid)?;
        let (v2, e2) = kronrod15(&mut f, mid, worst.b)?;
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // Re-sum from the segments to shed accumulated cancellation in `total`.
    let mut segs: Vec<Segment> = heap.into_vec();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value: f64 = segs.iter().map(|s| s.value).sum();
    let error: f64 = segs.iter().map(|s| s.error).sum();
    Ok(Integral { value: sign * value, error, evaluations })
}

/// Composite Simpson with interval doubling; the Richardson estimate
/// `|S(2n) - S(n)| / 15` controls termination.
pub fn integrate_simpson<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    settings: &QuadratureSettings,
) -> Result<Integral, QuadratureError> {
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let mut eval = |t: f64| -> Result<f64, QuadratureError> {
        let v = f(t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(QuadratureError::NonFinite { at: t })
        }
    };
    let mut n = 2usize;
    let h0 = b - a;
    let ends = eval(a)? + eval(b)?;
    let mut odd_sum = eval(0.5 * (a + b))?;
    let mut even_sum = 0.0;
    let mut evaluations = 3;
    let mut previous = h0 / 6.0 * (ends + 4.0 * odd_sum);
    // 2^20 panels is far beyond anything the oracle needs.
    for _ in 0..20 {
        n *= 2;
        let h = h0 / n as f64;
        even_sum += odd_sum;
        odd_sum = 0.0;
        for k in (1..n).step_by(2) {
            odd_sum += eval(a + k as f64 * h)?;
        }
        evaluations += n / 2;
        let current = h / 3.0 * (ends + 4.0 * odd_sum + 2.0 * even_sum);
        let error = (current - previous).abs() / 15.0;
        let extrapolated = current + (current - previous) / 15.0;
        if error <= settings.abs_tol.max(settings.rel_tol * extrapolated.abs()) {
            return Ok(Integral { value: extrapolated, error, evaluations });
        }
        previous = current;
    }
    Err(QuadratureError::NotConverged { value: previous, error: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let s = QuadratureSettings::default();
        let r = integrate(|x| 3.0 * x * x - x + 2.0, -1.0, 2.0, &s).unwrap();
        assert_relative_eq!(r.value, 13.5, epsilon = 1e-12);
        assert_eq!(r.evaluations, 15);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let s = QuadratureSettings::default();
        let fwd = integrate(f64::sin, 0.0, 2.0, &s).unwrap().value;
        let back = integrate(f64::sin, 2.0, 0.0, &s).unwrap().value;
        assert_relative_eq!(fwd, -back, epsilon = 1e-14);
        assert_relative_eq!(fwd, 1.0 - 2f64.cos(), epsilon = 1e-10);
    }

    #[test]
    fn endpoint_singularity() {
        // ∫₀¹ x^{-1/3} dx = 3/2, singular but integrable.
        let s = QuadratureSettings { max_subdivisions: 400, ..Default::default() };
        let r = integrate(|x| x.powf(-1.0 / 3.0), 0.0, 1.0, &s).unwrap();
        assert_relative_eq!(r.value, 1.5, max_relative = 1e-6);
    }

    #[test]
    fn narrow_peak() {
        let s = QuadratureSettings { abs_tol: 1e-12, ..Default::default() };
        let r = integrate(|x| crate::special::normal_pdf((x - 37.0) / 0.5) / 0.5, 0.0, 60.0, &s)
            .unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn simpson_matches_kronrod() {
        let s = QuadratureSettings::default();
        let f = |x: f64| (x * x).exp() * x.cos();
        let a = integrate(f, 0.0, 1.5, &s).unwrap().value;
        let b = integrate_simpson(f, 0.0, 1.5, &s).unwrap().value;
        assert_relative_eq!(a, b, max_relative = 1e-6);
    }

    #[test]
    fn non_finite_is_reported() {
        let s = QuadratureSettings::default();
        let err = integrate(|x| if x > 0.5 { f64::NAN } else { 1.0 }, 0.0, 1.0, &s).unwrap_err();
        assert!(matches!(err, QuadratureError::NonFinite { .. }));
    }
}
