//! Causality regimes: extremal-lag features, restart-robust k-means, elbow
//! selection of the cluster count and phase diagrams over a parameter grid.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lagcorr::CorrelationProfile;

/// Model weights `(w_d, w_c, w_r)` of one grid point.
pub type ParamPoint = [f64; 3];

/// Mean profile values below this magnitude count as zero in the gating ratio.
pub const ZERO_MEAN_EPS: f64 = 1e-12;
pub const DEFAULT_ELBOW_RATIO: f64 = 0.25;
const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegimeError {
    #[error("incomplete input: no profile for pair {0}")]
    IncompleteInput(String),
    #[error("threshold {0} must be finite and non-negative")]
    InvalidTheta(f64),
    #[error("cannot form {k} clusters from {distinct} distinct feature vectors")]
    Infeasible { k: usize, distinct: usize },
    #[error("feature vectors differ in dimension")]
    Ragged,
    #[error("need k >= 1 and restarts >= 1")]
    InvalidArgument,
    #[error("variance curve needs at least 4 consecutive k, got {0} points")]
    InsufficientCurve(usize),
    #[error("no feature vector for grid point {0:?}")]
    IncompleteGrid(ParamPoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeature {
    /// Pair label such as `dens->ctr`.
    pub pair: String,
    pub argmax_lag: i64,
    pub argmin_lag: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeFeatureVector {
    pub parameter_point: Option<ParamPoint>,
    pub pairs: Vec<PairFeature>,
}

impl RegimeFeatureVector {
    /// `[argmax_0, argmin_0, argmax_1, argmin_1, ...]`.
    pub fn coordinates(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .flat_map(|p| [p.argmax_lag as f64, p.argmin_lag as f64])
            .collect()
    }
}

/// Thresholded extremal lags of one profile: `(argmax, argmin)`.
///
/// With `m` the mean of `r` over the profile's valid lags, the argmax lag is
/// kept when `(r_max - m) / |m| > theta` and the argmin lag when
/// `(m - r_min) / |m| > theta`; otherwise the feature is 0. A mean below
/// [`ZERO_MEAN_EPS`] in magnitude makes the ratio infinite for a nonzero gap.
pub fn extremal_lags(profile: &CorrelationProfile, theta: f64, tau_max: i64) -> (i64, i64) {
    let valid: Vec<(i64, f64)> = profile
        .valid()
        .filter(|(tau, _)| tau.abs() <= tau_max)
        .collect();
    if valid.is_empty() {
        return (0, 0);
    }
    let mean = valid.iter().map(|v| v.1).sum::<f64>() / valid.len() as f64;
    let mut max = valid[0];
    let mut min = valid[0];
    for &v in &valid[1..] {
        if v.1 > max.1 {
            max = v;
        }
        if v.1 < min.1 {
            min = v;
        }
    }
    let passes = |gap: f64| {
        if gap <= 0.0 {
            return false;
        }
        if mean.abs() < ZERO_MEAN_EPS {
            return true;
        }
        gap / mean.abs() > theta
    };
    (
        if passes(max.1 - mean) { max.0 } else { 0 },
        if passes(mean - min.1) { min.0 } else { 0 },
    )
}

/// One feature vector from the profiles of every expected pair.
pub fn extract_features(
    profiles: &[CorrelationProfile],
    pairs: &[(usize, usize)],
    theta: f64,
    tau_max: i64,
) -> Result<RegimeFeatureVector, RegimeError> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(RegimeError::InvalidTheta(theta));
    }
    let features = pairs
        .iter()
        .map(|&pair| {
            let profile = profiles
                .iter()
                .find(|p| p.pair == pair)
                .ok_or_else(|| RegimeError::IncompleteInput(format!("{pair:?}")))?;
            let (argmax_lag, argmin_lag) = extremal_lags(profile, theta, tau_max);
            Ok(PairFeature {
                pair: profile.label(),
                argmax_lag,
                argmin_lag,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(RegimeFeatureVector {
        parameter_point: None,
        pairs: features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// Barycenters of the assigned points.
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub objective: f64,
    pub inter_cluster_variance_fraction: f64,
    /// Objective reached by each random restart, in restart order.
    pub restart_objectives: Vec<f64>,
}

/// Feature vectors collapsed to distinct points with multiplicities.
struct Distinct {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    index_of: Vec<usize>,
}

impl Distinct {
    fn new(points: &[Vec<f64>]) -> Result<Self, RegimeError> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        let mut seen: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let mut out = Distinct {
            points: Vec::new(),
            weights: Vec::new(),
            index_of: Vec::with_capacity(points.len()),
        };
        for p in points {
            if p.len() != dim {
                return Err(RegimeError::Ragged);
            }
            let key: Vec<u64> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
            let idx = *seen.entry(key).or_insert_with(|| {
                out.points.push(p.clone());
                out.weights.push(0.0);
                out.points.len() - 1
            });
            out.weights[idx] += 1.0;
            out.index_of.push(idx);
        }
        Ok(out)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Weighted k-means++ seeding.
fn plus_plus<R: Rng>(data: &Distinct, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.points.len();
    let pick = |weights: &[f64], rng: &mut R| -> usize {
        let total: f64 = weights.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                return i;
            }
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1)
    };
    let mut centroids = vec![data.points[pick(&data.weights, rng)].clone()];
    let mut d2: Vec<f64> = data
        .points
        .iter()
        .map(|p| sq_dist(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(&data.weights).map(|(d, w)| d * w).collect();
        let next = data.points[pick(&scores, rng)].clone();
        for (d, p) in d2.iter_mut().zip(&data.points) {
            *d = d.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

struct LloydOutcome {
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    objective: f64,
}

/// Weighted Lloyd iterations. Empty clusters take the point farthest from its centroid.
fn lloyd(data: &Distinct, mut centroids: Vec<Vec<f64>>) -> LloydOutcome {
    let n = data.points.len();
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut assignments = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, p) in data.points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            dists[i] = d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i] && counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("distinct points exceed k");
            taken[far] = true;
            counts[assignments[far]] -= 1;
            assignments[far] = c;
            counts[c] = 1;
            changed = true;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut mass = vec![0.0; k];
        for (i, p) in data.points.iter().enumerate() {
            let w = data.weights[i];
            mass[assignments[i]] += w;
            for (s, v) in sums[assignments[i]].iter_mut().zip(p) {
                *s += w * v;
            }
        }
        for c in 0..k {
            centroids[c] = sums[c].iter().map(|s| s / mass[c]).collect();
        }
        if !changed {
            break;
        }
    }
    let objective = data
        .points
        .iter()
        .zip(&assignments)
        .zip(&data.weights)
        .map(|((p, &a), w)| w * sq_dist(p, &centroids[a]))
        .sum();
    LloydOutcome {
        assignments,
        centroids,
        objective,
    }
}

fn finish(
    points: &[Vec<f64>],
    data: &Distinct,
    best: LloydOutcome,
    restart_objectives: Vec<f64>,
) -> ClusteringResult {
    let k = best.centroids.len();
    let dim = best.centroids[0].len();
    let assignments: Vec<usize> = data.index_of.iter().map(|&d| best.assignments[d]).collect();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(&assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let grand: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| p[d]).sum::<f64>() / points.len() as f64)
        .collect();
    let within: f64 = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    let between: f64 = centroids
        .iter()
        .zip(&counts)
        .map(|(c, &n)| n as f64 * sq_dist(c, &grand))
        .sum();
    let total = within + between;
    let fraction = if total > 0.0 {
        (between / total).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ClusteringResult {
        k,
        assignments,
        centroids,
        objective: within,
        inter_cluster_variance_fraction: fraction,
        restart_objectives,
    }
}

fn cluster_distinct(
    points: &[Vec<f64>],
    data: &Distinct,
    k: usize,
    restarts: usize,
    base_seed: u64,
    warm_start: Option<Vec<Vec<f64>>>,
) -> Result<ClusteringResult, RegimeError> {
    if k == 0 || restarts == 0 {
        return Err(RegimeError::InvalidArgument);
    }
    if k > data.points.len() {
        return Err(RegimeError::Infeasible {
            k,
            distinct: data.points.len(),
        });
    }
    let outcomes: Vec<LloydOutcome> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
            rng.set_stream(r as u64);
            lloyd(data, plus_plus(data, k, &mut rng))
        })
        .collect();
    let restart_objectives: Vec<f64> = outcomes.iter().map(|o| o.objective).collect();
    let mut best: Option<LloydOutcome> = None;
    for o in outcomes
        .into_iter()
        .chain(warm_start.map(|init| lloyd(data, init)))
    {
        if best.as_ref().is_none_or(|b| o.objective < b.objective) {
            best = Some(o);
        }
    }
    Ok(finish(
        points,
        data,
        best.expect("restarts >= 1"),
        restart_objectives,
    ))
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
/// within-cluster sum of squares (ties keep the earliest restart).
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<ClusteringResult, RegimeError> {
    let data = Distinct::new(points)?;
    cluster_distinct(points, &data, k, restarts, rng.random(), None)
}

/// Best clustering for each `k` in the range, in increasing `k`.
///
/// Besides the random restarts, each `k > k_min` also runs Lloyd from the
/// best `(k-1)` centroids plus the point farthest from them. That start
/// cannot raise the objective, so the variance fraction is non-decreasing.
pub fn variance_curve_results<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k_range: std::ops::RangeInclusive<usize>,
    restarts: usize,
    rng: &mut R,
) -> Result<Vec<ClusteringResult>, RegimeError> {
    let data = Distinct::new(points)?;
    let mut out: Vec<ClusteringResult> = Vec::new();
    for k in k_range {
        let warm = out.last().map(|prev: &ClusteringResult| {
            let mut init = prev.centroids.clone();
            let far = data
                .points
                .iter()
                .map(|p| nearest(p, &init).1)
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            init.push(data.points[far].clone());
            init
        });
        out.push(cluster_distinct(
            points,
            &data,
            k,
            restarts,
            rng.random(),
            warm,
        )?);
    }
    Ok(out)
}

/// `(k, inter-cluster variance fraction)` of the best clustering per `k`.
pub fn variance_curve<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k_range: std::ops::RangeInclusive<usize>,
    restarts: usize,
    rng: &mut R,
) -> Result<Vec<(usize, f64)>, RegimeError> {
    Ok(variance_curve_results(points, k_range, restarts, rng)?
        .iter()
        .map(|r| (r.k, r.inter_cluster_variance_fraction))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elbow {
    pub k: usize,
    /// False when no derivative dropped below the threshold and `k` is the largest tried.
    pub found: bool,
}

/// Smallest `k` whose forward difference falls below `ratio` times the first one.
pub fn select_k(curve: &[(usize, f64)], ratio: f64) -> Result<Elbow, RegimeError> {
    if curve.len() < 4 || curve.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(RegimeError::InsufficientCurve(curve.len()));
    }
    let derivative: Vec<f64> = curve.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let threshold = ratio * derivative[0];
    for (i, d) in derivative.iter().enumerate() {
        if *d < threshold {
            return Ok(Elbow {
                k: curve[i].0,
                found: true,
            });
        }
    }
    Ok(Elbow {
        k: curve[curve.len() - 1].0,
        found: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub w_d: f64,
    pub w_c: f64,
    pub w_r: f64,
    pub cluster: usize,
}

/// Cluster of every grid point, in grid order.
pub fn phase_diagram(
    result: &ClusteringResult,
    features: &[RegimeFeatureVector],
    grid: &[ParamPoint],
) -> Result<Vec<PhaseCell>, RegimeError> {
    let key = |p: &ParamPoint| p.map(|v| (v + 0.0).to_bits());
    let by_point: HashMap<[u64; 3], usize> = features
        .iter()
        .zip(&result.assignments)
        .filter_map(|(f, &c)| f.parameter_point.map(|p| (key(&p), c)))
        .collect();
    grid.iter()
        .map(|p| {
            by_point
                .get(&key(p))
                .map(|&cluster| PhaseCell {
                    w_d: p[0],
                    w_c: p[1],
                    w_r: p[2],
                    cluster,
                })
                .ok_or(RegimeError::IncompleteGrid(*p))
        })
        .collect()
}

/// Connected regions per cluster on the lattice of the diagram (6-neighbourhood, spacing `step`).
pub fn region_counts(cells: &[PhaseCell], step: f64) -> BTreeMap<usize, usize> {
    let lattice = |v: f64| (v / step).round() as i64;
    let index: HashMap<[i64; 3], usize> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| ([lattice(c.w_d), lattice(c.w_c), lattice(c.w_r)], i))
        .collect();
    let mut seen = vec![false; cells.len()];
    let mut counts = BTreeMap::new();
    for start in 0..cells.len() {
        if seen[start] {
            continue;
        }
        *counts.entry(cells[start].cluster).or_insert(0) += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let c = &cells[i];
            let at = [lattice(c.w_d), lattice(c.w_c), lattice(c.w_r)];
            for axis in 0..3 {
                for delta in [-1, 1] {
                    let mut n = at;
                    n[axis] += delta;
                    if let Some(&j) = index.get(&n) {
                        if !seen[j] && cells[j].cluster == c.cluster {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidProfileRow {
    pub cluster: usize,
    pub pair: String,
    pub tau: i64,
    pub r_mean: f64,
}

/// Barycenter of the member profiles of each cluster, lag by lag.
/// `profiles[i]` are the profiles behind feature vector `i`.
pub fn centroid_profiles(
    result: &ClusteringResult,
    profiles: &[Vec<CorrelationProfile>],
) -> Vec<CentroidProfileRow> {
    let mut acc: BTreeMap<(usize, String, i64), (f64, usize)> = BTreeMap::new();
    for (set, &cluster) in profiles.iter().zip(&result.assignments) {
        for profile in set {
            for (tau, r) in profile.valid() {
                let e = acc
                    .entry((cluster, profile.label(), tau))
                    .or_insert((0.0, 0));
                e.0 += r;
                e.1 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|((cluster, pair, tau), (sum, n))| CentroidProfileRow {
            cluster,
            pair,
            tau,
            r_mean: sum / n as f64,
        })
        .collect()
}
