//! Lagged correlation pooled over units, times and replications.
//!
//! `ρ_τ[X_a, X_b]` correlates `x(i, a, t - τ, k)` with `x(i, b, t, k)` over every
//! `(i, t, k)` where both members are observed. Positive `τ` means `X_a` leads.
//! Significance uses the Student t test for a Pearson coefficient and the
//! confidence interval comes from the Fisher z transform.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::stfield::SpatioTemporalField;

pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("insufficient data: {n} complete pairs")]
    InsufficientData { n: usize },
    #[error("degenerate input: zero variance over {n} pairs")]
    Degenerate { n: usize },
    #[error("lag {tau} leaves no overlap in {times} time steps")]
    EmptyOverlap { tau: i64, times: usize },
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("correlation {0} outside [-1, 1]")]
    InvalidCorrelation(f64),
    #[error("variable index {0} out of range")]
    UnknownVariable(usize),
    #[error("maximum lag {tau_max} must be below the series length {times}")]
    LagRange { tau_max: usize, times: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub r: f64,
    pub n: usize,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    /// Set when a significance gate replaced `r` with zero.
    pub gated: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Count, means and centered second moments of a set of `(x, y)` pairs.
///
/// Built with two compensated passes over the data; partial results over
/// disjoint pair sets merge exactly (up to rounding) with [`CoMoments::merge`],
/// so a pooled estimate can be reduced from per-replication pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoMoments {
    pub n: usize,
    pub mean_x: f64,
    pub mean_y: f64,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
    scale_x: f64,
    scale_y: f64,
}

impl Default for CoMoments {
    fn default() -> Self {
        Self {
            n: 0,
            mean_x: 0.0,
            mean_y: 0.0,
            sxx: 0.0,
            syy: 0.0,
            sxy: 0.0,
            scale_x: 0.0,
            scale_y: 0.0,
        }
    }
}

impl CoMoments {
    /// Two passes over chunks of `(x, y)` slices; pairs with a non-finite member are skipped.
    fn from_chunks<'a, F, I>(chunks: F) -> Self
    where
        F: Fn() -> I,
        I: Iterator<Item = (&'a [f64], &'a [f64])>,
    {
        let mut n = 0usize;
        let (mut sx, mut sy) = (Neumaier::default(), Neumaier::default());
        let (mut scale_x, mut scale_y) = (0.0_f64, 0.0_f64);
        for (xs, ys) in chunks() {
            for (&x, &y) in xs.iter().zip(ys) {
                if x.is_finite() && y.is_finite() {
                    n += 1;
                    sx.add(x);
                    sy.add(y);
                    scale_x = scale_x.max(x.abs());
                    scale_y = scale_y.max(y.abs());
                }
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean_x = sx.value() / n as f64;
        let mean_y = sy.value() / n as f64;
        let (mut cxx, mut cyy, mut cxy) = (
            Neumaier::default(),
            Neumaier::default(),
            Neumaier::default(),
        );
        for (xs, ys) in chunks() {
            for (&x, &y) in xs.iter().zip(ys) {
                if x.is_finite() && y.is_finite() {
                    let dx = x - mean_x;
                    let dy = y - mean_y;
                    cxx.add(dx * dx);
                    cyy.add(dy * dy);
                    cxy.add(dx * dy);
                }
            }
        }
        Self {
            n,
            mean_x,
            mean_y,
            sxx: cxx.value(),
            syy: cyy.value(),
            sxy: cxy.value(),
            scale_x,
            scale_y,
        }
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Result<Self, CorrError> {
        if x.len() != y.len() {
            return Err(CorrError::LengthMismatch(x.len(), y.len()));
        }
        Ok(Self::from_chunks(|| std::iter::once((x, y))))
    }

    /// Moments of the union of two disjoint pair sets.
    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        let w = na * nb / n;
        Self {
            n: self.n + other.n,
            mean_x: self.mean_x + dx * nb / n,
            mean_y: self.mean_y + dy * nb / n,
            sxx: self.sxx + other.sxx + dx * dx * w,
            syy: self.syy + other.syy + dy * dy * w,
            sxy: self.sxy + other.sxy + dx * dy * w,
            scale_x: self.scale_x.max(other.scale_x),
            scale_y: self.scale_y.max(other.scale_y),
        }
    }

    /// Pearson estimate with p-value and interval at `level`.
    pub fn estimate(&self, level: f64) -> Result<CorrelationEstimate, CorrError> {
        if !(level > 0.0 && level < 1.0) {
            return Err(CorrError::InvalidLevel(level));
        }
        let n = self.n;
        if n < 3 {
            return Err(CorrError::InsufficientData { n });
        }
        // Constant inputs leave only rounding residue in the centered sums.
        let floor = |scale: f64| n as f64 * (64.0 * f64::EPSILON * scale).powi(2);
        if self.sxx <= floor(self.scale_x) || self.syy <= floor(self.scale_y) {
            return Err(CorrError::Degenerate { n });
        }
        let r = (self.sxy / (self.sxx.sqrt() * self.syy.sqrt())).clamp(-1.0, 1.0);
        let p_value = significance(r, n)?;
        let (ci_low, ci_high) = if n >= 4 {
            confidence_interval(r, n, level)?
        } else {
            (-1.0, 1.0)
        };
        Ok(CorrelationEstimate {
            r,
            n,
            p_value,
            ci_low,
            ci_high,
            level,
            gated: false,
        })
    }
}

/// Pearson correlation at the default 95% level. Non-finite entries mark
/// missing observations and are removed pairwise.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationEstimate, CorrError> {
    pearson_at_level(x, y, DEFAULT_LEVEL)
}

pub fn pearson_at_level(
    x: &[f64],
    y: &[f64],
    level: f64,
) -> Result<CorrelationEstimate, CorrError> {
    CoMoments::from_slices(x, y)?.estimate(level)
}

/// Two-sided p-value of `H0: ρ = 0` for a sample correlation `r` over `n` pairs.
///
/// With `t = r √(n-2) / √(1-r²)` and `ν = n - 2`, the two-sided Student tail
/// equals the regularized incomplete beta `I_{ν/(ν+t²)}(ν/2, 1/2)`, and
/// `ν/(ν+t²)` reduces to `1 - r²`. This form stays accurate deep in the tail.
pub fn significance(r: f64, n: usize) -> Result<f64, CorrError> {
    if n < 3 {
        return Err(CorrError::InsufficientData { n });
    }
    if !(r.abs() <= 1.0) {
        return Err(CorrError::InvalidCorrelation(r));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let x = (1.0 - r) * (1.0 + r);
    Ok(beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0))
}

/// Fisher z interval: `tanh(atanh(r) ± q / √(n-3))`.
pub fn confidence_interval(r: f64, n: usize, level: f64) -> Result<(f64, f64), CorrError> {
    if n < 4 {
        return Err(CorrError::InsufficientData { n });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CorrError::InvalidLevel(level));
    }
    if !(r.abs() <= 1.0) {
        return Err(CorrError::InvalidCorrelation(r));
    }
    if r.abs() == 1.0 {
        return Ok((r, r));
    }
    let q = Normal::standard().inverse_cdf((1.0 + level) / 2.0);
    let z = r.atanh();
    let half = q / ((n - 3) as f64).sqrt();
    let low = (z - half).tanh().min(r);
    let high = (z + half).tanh().max(r);
    Ok((low, high))
}

fn check_lag(
    field: &SpatioTemporalField,
    a: usize,
    b: usize,
    tau: i64,
) -> Result<(usize, usize), CorrError> {
    let dims = field.dims();
    for j in [a, b] {
        if j >= dims.variables {
            return Err(CorrError::UnknownVariable(j));
        }
    }
    if tau.unsigned_abs() as usize >= dims.times {
        return Err(CorrError::EmptyOverlap {
            tau,
            times: dims.times,
        });
    }
    Ok(if tau >= 0 {
        (tau as usize, dims.times)
    } else {
        (0, dims.times - tau.unsigned_abs() as usize)
    })
}

/// Collects the pooled pairs `(x(i, a, t - τ, k), x(i, b, t, k))`, NaN for missing members.
pub fn lagged_pairs(
    field: &SpatioTemporalField,
    a: usize,
    b: usize,
    tau: i64,
) -> Result<(Vec<f64>, Vec<f64>), CorrError> {
    let (t_start, t_end) = check_lag(field, a, b, tau)?;
    let dims = field.dims();
    let len = (t_end - t_start) * dims.units * dims.replications;
    let mut xs = Vec::with_capacity(len);
    let mut ys = Vec::with_capacity(len);
    for k in 0..dims.replications {
        for t in t_start..t_end {
            xs.extend_from_slice(field.unit_slice(a, (t as i64 - tau) as usize, k));
            ys.extend_from_slice(field.unit_slice(b, t, k));
        }
    }
    Ok((xs, ys))
}

fn comoments_over(
    field: &SpatioTemporalField,
    a: usize,
    b: usize,
    tau: i64,
    replications: std::ops::Range<usize>,
) -> Result<CoMoments, CorrError> {
    let (t_start, t_end) = check_lag(field, a, b, tau)?;
    let chunks = || {
        replications.clone().flat_map(move |k| {
            (t_start..t_end).map(move |t| {
                (
                    field.unit_slice(a, (t as i64 - tau) as usize, k),
                    field.unit_slice(b, t, k),
                )
            })
        })
    };
    Ok(CoMoments::from_chunks(chunks))
}

/// Moments of the lag-`τ` pairs of replication `k` alone.
pub fn replication_comoments(
    field: &SpatioTemporalField,
    a: usize,
    b: usize,
    tau: i64,
    k: usize,
) -> Result<CoMoments, CorrError> {
    comoments_over(field, a, b, tau, k..k + 1)
}

/// Moments of the lag-`τ` pairs pooled over every replication.
pub fn lagged_comoments(
    field: &SpatioTemporalField,
    a: usize,
    b: usize,
    tau: i64,
) -> Result<CoMoments, CorrError> {
    comoments_over(field, a, b, tau, 0..field.dims().replications)
}

pub fn lagged_correlation(
    field: &SpatioTemporalField,
    a: usize,
    b: usize,
    tau: i64,
) -> Result<CorrelationEstimate, CorrError> {
    lagged_correlation_at_level(field, a, b, tau, DEFAULT_LEVEL)
}

pub fn lagged_correlation_at_level(
    field: &SpatioTemporalField,
    a: usize,
    b: usize,
    tau: i64,
    level: f64,
) -> Result<CorrelationEstimate, CorrError> {
    lagged_comoments(field, a, b, tau)?.estimate(level)
}

/// One lag of a profile. Failed estimates (degenerate or too few pairs) stay in place.
#[derive(Debug, Clone, PartialEq)]
pub struct LagEntry {
    pub tau: i64,
    pub estimate: Result<CorrelationEstimate, CorrError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationProfile {
    /// Ordered pair `(a, b)`: `a` is the lagged variable.
    pub pair: (usize, usize),
    pub names: (String, String),
    pub entries: Vec<LagEntry>,
}

impl CorrelationProfile {
    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        self.entries.iter().map(|e| e.tau)
    }

    pub fn get(&self, tau: i64) -> Option<&LagEntry> {
        self.entries.iter().find(|e| e.tau == tau)
    }

    /// `(τ, r)` for every lag with a valid estimate.
    pub fn valid(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.entries
            .iter()
            .filter_map(|e| e.estimate.as_ref().ok().map(|est| (e.tau, est.r)))
    }

    pub fn tau_max(&self) -> i64 {
        self.entries.iter().map(|e| e.tau.abs()).max().unwrap_or(0)
    }

    pub fn label(&self) -> String {
        format!("{}->{}", self.names.0, self.names.1)
    }
}

/// Estimates at every lag in `-tau_max..=tau_max`, in increasing order.
pub fn correlation_profile(
    field: &SpatioTemporalField,
    a: usize,
    b: usize,
    tau_max: usize,
    level: f64,
) -> Result<CorrelationProfile, CorrError> {
    let dims = field.dims();
    for j in [a, b] {
        if j >= dims.variables {
            return Err(CorrError::UnknownVariable(j));
        }
    }
    if tau_max >= dims.times {
        return Err(CorrError::LagRange {
            tau_max,
            times: dims.times,
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CorrError::InvalidLevel(level));
    }
    let tm = tau_max as i64;
    let entries = (-tm..=tm)
        .map(|tau| LagEntry {
            tau,
            estimate: lagged_correlation_at_level(field, a, b, tau, level),
        })
        .collect();
    let names = field.variable_names();
    Ok(CorrelationProfile {
        pair: (a, b),
        names: (names[a].clone(), names[b].clone()),
        entries,
    })
}

/// Profiles for every unordered pair `a < b`; negative lags cover the reverse direction.
pub fn all_pair_profiles(
    field: &SpatioTemporalField,
    tau_max: usize,
    level: f64,
) -> Result<Vec<CorrelationProfile>, CorrError> {
    let j = field.dims().variables;
    let mut out = Vec::with_capacity(j * (j - 1) / 2);
    for a in 0..j {
        for b in a + 1..j {
            out.push(correlation_profile(field, a, b, tau_max, level)?);
        }
    }
    Ok(out)
}

/// Replaces `r` by zero wherever `p_value >= alpha`, flagging the entry.
pub fn gated_profile(profile: &CorrelationProfile, alpha: f64) -> CorrelationProfile {
    let mut out = profile.clone();
    for entry in &mut out.entries {
        if let Ok(est) = &mut entry.estimate {
            if est.p_value >= alpha {
                est.r = 0.0;
                est.gated = true;
            }
        }
    }
    out
}

/// One line of the profile CSV `j1,j2,tau,r,n,p,ci_low,ci_high,gated`.
/// Failed estimates leave the numeric columns and `gated` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub j1: String,
    pub j2: String,
    pub tau: i64,
    pub r: Option<f64>,
    pub n: usize,
    pub p: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub gated: Option<bool>,
}

impl CorrelationProfile {
    pub fn rows(&self) -> Vec<ProfileRow> {
        self.entries
            .iter()
            .map(|e| match &e.estimate {
                Ok(est) => ProfileRow {
                    j1: self.names.0.clone(),
                    j2: self.names.1.clone(),
                    tau: e.tau,
                    r: Some(est.r),
                    n: est.n,
                    p: Some(est.p_value),
                    ci_low: Some(est.ci_low),
                    ci_high: Some(est.ci_high),
                    gated: Some(est.gated),
                },
                Err(err) => ProfileRow {
                    j1: self.names.0.clone(),
                    j2: self.names.1.clone(),
                    tau: e.tau,
                    r: None,
                    n: match err {
                        CorrError::InsufficientData { n } | CorrError::Degenerate { n } => *n,
                        _ => 0,
                    },
                    p: None,
                    ci_low: None,
                    ci_high: None,
                    gated: None,
                },
            })
            .collect()
    }

    /// Rebuilds profiles from rows grouped by `(j1, j2)` in first-seen order.
    /// Variable indices are positions in `variable_names`.
    pub fn from_rows(
        rows: &[ProfileRow],
        variable_names: &[String],
        level: f64,
    ) -> Result<Vec<Self>, CorrError> {
        let index = |name: &str| {
            variable_names
                .iter()
                .position(|v| v == name)
                .ok_or(CorrError::UnknownVariable(usize::MAX))
        };
        let mut out: Vec<CorrelationProfile> = Vec::new();
        for row in rows {
            let pair = (index(&row.j1)?, index(&row.j2)?);
            let estimate = match (row.r, row.p, row.ci_low, row.ci_high) {
                (Some(r), Some(p_value), Some(ci_low), Some(ci_high)) => Ok(CorrelationEstimate {
                    r,
                    n: row.n,
                    p_value,
                    ci_low,
                    ci_high,
                    level,
                    gated: row.gated.unwrap_or(false),
                }),
                _ if row.n < 3 => Err(CorrError::InsufficientData { n: row.n }),
                _ => Err(CorrError::Degenerate { n: row.n }),
            };
            let entry = LagEntry {
                tau: row.tau,
                estimate,
            };
            match out.iter_mut().find(|p| p.pair == pair) {
                Some(p) => p.entries.push(entry),
                None => out.push(CorrelationProfile {
                    pair,
                    names: (row.j1.clone(), row.j2.clone()),
                    entries: vec![entry],
                }),
            }
        }
        for p in &mut out {
            p.entries.sort_by_key(|e| e.tau);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stfield::Dims;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn perfect_correlations() {
        assert!(close(
            pearson(&[1., 2., 3.], &[1., 2., 3.]).unwrap().r,
            1.0,
            1e-15
        ));
        assert!(close(
            pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap().r,
            -1.0,
            1e-15
        ));
    }

    #[test]
    fn hand_computed_correlation() {
        // deviations (-2,-1,1,2) and (-1,-2,2,1): Σdxdy = 8, Σdx² = Σdy² = 10
        let est = pearson(&[1., 2., 4., 5.], &[2., 1., 5., 4.]).unwrap();
        assert!(close(est.r, 0.8, 1e-14));
        assert_eq!(est.n, 4);
    }

    #[test]
    fn too_few_pairs() {
        assert_eq!(
            pearson(&[1., 2.], &[1., 2.]).unwrap_err(),
            CorrError::InsufficientData { n: 2 }
        );
        let nan = f64::NAN;
        assert_eq!(
            pearson(&[1., 2., nan, 4.], &[1., 2., 3., nan]).unwrap_err(),
            CorrError::InsufficientData { n: 2 }
        );
        assert!(matches!(
            pearson(&[1., 2.], &[1., 2., 3.]),
            Err(CorrError::LengthMismatch(2, 3))
        ));
    }

    #[test]
    fn constant_input_is_degenerate_not_zero() {
        assert_eq!(
            pearson(&[0.1; 5], &[1., 2., 3., 4., 5.]).unwrap_err(),
            CorrError::Degenerate { n: 5 }
        );
        assert_eq!(
            pearson(&[1., 2., 3.], &[7.3, 7.3, 7.3]).unwrap_err(),
            CorrError::Degenerate { n: 3 }
        );
    }

    #[test]
    fn pairwise_deletion() {
        let nan = f64::NAN;
        let with_gaps = pearson(&[1., nan, 2., 4., 5., 9.], &[2., 3., 1., 5., 4., nan]).unwrap();
        let clean = pearson(&[1., 2., 4., 5.], &[2., 1., 5., 4.]).unwrap();
        assert_eq!(with_gaps.n, 4);
        assert!(close(with_gaps.r, clean.r, 1e-15));
    }

    #[test]
    fn significance_edge_values() {
        assert_eq!(significance(0.0, 100).unwrap(), 1.0);
        assert_eq!(significance(1.0, 10).unwrap(), 0.0);
        assert_eq!(significance(-1.0, 10).unwrap(), 0.0);
        assert!(significance(0.5, 2).is_err());
    }

    /// Two-sided Student tail by composite Simpson quadrature of the density.
    fn student_two_sided_tail(t: f64, df: f64) -> f64 {
        let ln_norm = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let density = |x: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        // substitute x = t / u on (0, 1] to integrate the infinite tail
        let g = |u: f64| {
            if u == 0.0 {
                0.0
            } else {
                density(t / u) * t / (u * u)
            }
        };
        let m = 200_000;
        let h = 1.0 / m as f64;
        let mut s = g(0.0) + g(1.0);
        for i in 1..m {
            s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        2.0 * s * h / 3.0
    }

    #[test]
    fn significance_matches_quadrature_oracle() {
        let (r, n) = (0.8_f64, 30);
        let t = r * ((n - 2) as f64).sqrt() / (1.0 - r * r).sqrt();
        assert!(close(t, 7.0553, 1e-3));
        let oracle = student_two_sided_tail(t, (n - 2) as f64);
        let p = significance(r, n).unwrap();
        assert!(
            (p - oracle).abs() / oracle < 1e-6,
            "p={p:e} oracle={oracle:e}"
        );
        // frozen oracle value
        assert!(close(p, 1.1e-7, 0.1e-7), "p={p:e}");
        for &(r, n) in &[(0.1_f64, 50usize), (0.3, 20), (-0.45, 12), (0.05, 1000)] {
            let t = r.abs() * ((n - 2) as f64).sqrt() / (1.0 - r * r).sqrt();
            let oracle = student_two_sided_tail(t, (n - 2) as f64);
            let p = significance(r, n).unwrap();
            assert!((p - oracle).abs() < 1e-8, "r={r} n={n}: {p} vs {oracle}");
        }
    }

    #[test]
    fn fisher_interval_examples() {
        let (lo, hi) = confidence_interval(0.0, 103, 0.95).unwrap();
        assert!(close(lo, -(0.196_f64).tanh(), 1e-4) && close(hi, (0.196_f64).tanh(), 1e-4));
        assert!(close(lo, -hi, 1e-15));
        assert!(close(lo, -0.192, 2e-3));
        let (lo, hi) = confidence_interval(0.5, 103, 0.95).unwrap();
        assert!(
            close(lo, 0.339, 1e-3) && close(hi, 0.632, 1e-3),
            "{lo} {hi}"
        );
        let (lo, hi) = confidence_interval(0.3, 10, 1.0 - 1e-15).unwrap();
        assert!(lo < -0.98 && hi > 0.99, "{lo} {hi}");
        assert_eq!(confidence_interval(1.0, 10, 0.95).unwrap(), (1.0, 1.0));
        assert!(matches!(
            confidence_interval(0.2, 3, 0.95),
            Err(CorrError::InsufficientData { n: 3 })
        ));
        assert!(confidence_interval(0.2, 30, 1.0).is_err());
    }

    #[test]
    fn estimate_bounds_hold() {
        let est = pearson(&[1., 2., 4., 5., 3.], &[2., 1., 5., 4., 2.5]).unwrap();
        assert!(
            -1.0 <= est.ci_low && est.ci_low <= est.r && est.r <= est.ci_high && est.ci_high <= 1.0
        );
        assert!((0.0..=1.0).contains(&est.p_value));
    }

    fn field_from(series: &[Vec<f64>]) -> SpatioTemporalField {
        let t = series[0].len();
        let names = (0..series.len()).map(|j| format!("x{j}")).collect();
        SpatioTemporalField::from_fn(Dims::new(1, series.len(), t, 1), names, |_, j, t, _| {
            series[j][t]
        })
        .unwrap()
    }

    #[test]
    fn self_correlation_at_zero_lag() {
        let f = field_from(&[vec![1., 4., 2., 8., 5., 7.], vec![0.; 6]]);
        assert!(close(
            lagged_correlation(&f, 0, 0, 0).unwrap().r,
            1.0,
            1e-15
        ));
    }

    #[test]
    fn shifted_copy_peaks_at_its_shift() {
        let base = [3., 1., 4., 1., 5., 9., 2., 6., 5., 3., 5., 8., 9., 7.];
        let shifted: Vec<f64> = (0..base.len())
            .map(|t| if t >= 2 { base[t - 2] } else { 0.0 })
            .collect();
        let f = field_from(&[base.to_vec(), shifted]);
        assert!(close(
            lagged_correlation(&f, 0, 1, 2).unwrap().r,
            1.0,
            1e-14
        ));
        let profile = correlation_profile(&f, 0, 1, 4, 0.95).unwrap();
        let best = profile
            .valid()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert_eq!(best.0, 2);
    }

    #[test]
    fn swapping_variables_negates_the_lag() {
        let f = field_from(&[
            vec![0.3, 1.2, -0.4, 2.2, 0.9, -1.1, 0.5, 1.7],
            vec![1.0, -0.2, 0.8, 0.1, 1.9, 0.4, -0.6, 0.7],
        ]);
        for tau in -4..=4 {
            let ab = lagged_correlation(&f, 0, 1, tau).unwrap().r;
            let ba = lagged_correlation(&f, 1, 0, -tau).unwrap().r;
            assert!(close(ab, ba, 1e-12));
        }
    }

    #[test]
    fn lag_beyond_series_is_empty_overlap() {
        let f = field_from(&[vec![1., 2., 3.], vec![2., 1., 3.]]);
        assert!(matches!(
            lagged_correlation(&f, 0, 1, 3),
            Err(CorrError::EmptyOverlap { tau: 3, times: 3 })
        ));
        assert!(matches!(
            lagged_correlation(&f, 0, 1, -3),
            Err(CorrError::EmptyOverlap { .. })
        ));
    }

    #[test]
    fn all_missing_is_insufficient() {
        let f = SpatioTemporalField::empty(Dims::new(2, 2, 4, 1), vec!["a".into(), "b".into()])
            .unwrap();
        assert_eq!(
            lagged_correlation(&f, 0, 1, 0).unwrap_err(),
            CorrError::InsufficientData { n: 0 }
        );
    }

    #[test]
    fn profile_boundaries_and_per_lag_failures() {
        let f = field_from(&[vec![1., 2., 3., 5., 4.], vec![2., 2., 2., 2., 2.]]);
        let p = correlation_profile(&f, 0, 1, 0, 0.95).unwrap();
        assert_eq!(p.lags().collect::<Vec<_>>(), vec![0]);
        // constant second variable: every lag fails, profile still built
        let p = correlation_profile(&f, 0, 1, 2, 0.95).unwrap();
        assert_eq!(p.entries.len(), 5);
        assert!(p
            .entries
            .iter()
            .all(|e| matches!(e.estimate, Err(CorrError::Degenerate { .. }))));
        assert!(correlation_profile(&f, 0, 1, 5, 0.95).is_err());
    }

    fn est(r: f64, p_value: f64) -> CorrelationEstimate {
        CorrelationEstimate {
            r,
            n: 50,
            p_value,
            ci_low: r - 0.1,
            ci_high: r + 0.1,
            level: 0.95,
            gated: false,
        }
    }

    fn profile_of(estimates: &[(i64, CorrelationEstimate)]) -> CorrelationProfile {
        CorrelationProfile {
            pair: (0, 1),
            names: ("a".into(), "b".into()),
            entries: estimates
                .iter()
                .map(|&(tau, e)| LagEntry {
                    tau,
                    estimate: Ok(e),
                })
                .collect(),
        }
    }

    #[test]
    fn gate_zeroes_insignificant_entries_only() {
        let p = profile_of(&[
            (-1, est(0.4, 0.30)),
            (0, est(0.4, 0.001)),
            (1, est(-0.2, 0.05)),
        ]);
        let g = gated_profile(&p, 0.05);
        let rs: Vec<_> = g
            .entries
            .iter()
            .map(|e| e.estimate.clone().unwrap())
            .collect();
        assert_eq!((rs[0].r, rs[0].gated), (0.0, true));
        assert_eq!((rs[1].r, rs[1].gated), (0.4, false));
        assert_eq!((rs[2].r, rs[2].gated), (0.0, true));
        for (a, b) in p.entries.iter().zip(&g.entries) {
            assert_eq!(a.tau, b.tau);
            assert_eq!(
                a.estimate.as_ref().unwrap().p_value,
                b.estimate.as_ref().unwrap().p_value
            );
        }
        let loose = gated_profile(
            &profile_of(&[(0, est(0.4, 0.3)), (1, est(0.1, 1.0))]),
            1.0 - 1e-12,
        );
        assert_eq!(loose.entries[0].estimate.as_ref().unwrap().r, 0.4);
        assert_eq!(loose.entries[1].estimate.as_ref().unwrap().r, 0.0);
    }

    #[test]
    fn profile_rows_round_trip() {
        let f = field_from(&[
            vec![1., 4., 2., 8., 5., 7., 3.],
            vec![2., 2., 2., 2., 2., 2., 2.],
        ]);
        let mut profiles = vec![correlation_profile(&f, 0, 1, 2, 0.95).unwrap()];
        let g = field_from(&[
            vec![1., 4., 2., 8., 5., 7., 3.],
            vec![0.5, 3., 2., 6., 6., 7., 1.],
        ]);
        profiles.push(gated_profile(
            &correlation_profile(&g, 1, 0, 2, 0.95).unwrap(),
            0.05,
        ));
        let rows: Vec<_> = profiles.iter().flat_map(|p| p.rows()).collect();
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in &rows {
                w.serialize(r).unwrap();
            }
        }
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("j1,j2,tau,r,n,p,ci_low,ci_high,gated\n"));
        let back: Vec<ProfileRow> = csv::Reader::from_reader(buf.as_slice())
            .deserialize()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, rows);
        let names = vec!["x0".to_string(), "x1".to_string()];
        let rebuilt = CorrelationProfile::from_rows(&back, &names, 0.95).unwrap();
        assert_eq!(rebuilt, profiles);
    }

    /// Plain two-pass covariance / variance oracle.
    fn naive_r(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        len.prop_flat_map(|n| {
            (
                prop::collection::vec(-1e3f64..1e3, n),
                prop::collection::vec(-1e3f64..1e3, n),
            )
        })
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_two_pass_oracle((x, y) in paired(10..400)) {
            let r = pearson(&x, &y).unwrap().r;
            prop_assert!((r - naive_r(&x, &y)).abs() < 1e-12);
        }

        #[test]
        fn affine_invariance((x, y) in paired(10..200), a in 0.1f64..50.0, b in -100f64..100.0) {
            let r = pearson(&x, &y).unwrap().r;
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&scaled, &y).unwrap().r - r).abs() < 1e-12);
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&flipped, &y).unwrap().r + r).abs() < 1e-12);
        }

        #[test]
        fn lag_antisymmetry(values in prop::collection::vec(-10f64..10.0, 3 * 2 * 12 * 2), tau in -5i64..=5) {
            let f = SpatioTemporalField::from_fn(Dims::new(3, 2, 12, 2), vec!["a".into(), "b".into()], |i, j, t, k| {
                values[((k * 2 + j) * 12 + t) * 3 + i]
            }).unwrap();
            let ab = lagged_correlation(&f, 0, 1, tau).unwrap().r;
            let ba = lagged_correlation(&f, 1, 0, -tau).unwrap().r;
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn merged_replications_equal_pooled(values in prop::collection::vec(-10f64..10.0, 4 * 2 * 8 * 3), tau in -3i64..=3) {
            let f = SpatioTemporalField::from_fn(Dims::new(4, 2, 8, 3), vec!["a".into(), "b".into()], |i, j, t, k| {
                values[((k * 2 + j) * 8 + t) * 4 + i]
            }).unwrap();
            let merged = (0..3)
                .map(|k| replication_comoments(&f, 0, 1, tau, k).unwrap())
                .fold(CoMoments::default(), |acc, m| acc.merge(&m));
            let pooled = lagged_correlation(&f, 0, 1, tau).unwrap();
            prop_assert_eq!(merged.n, pooled.n);
            prop_assert!((merged.estimate(0.95).unwrap().r - pooled.r).abs() < 1e-12);
        }
    }
}
