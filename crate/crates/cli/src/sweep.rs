//! Parameter sweep over the morphogenesis model and regime classification.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stcausal::lagcorr::{
    gated_profile, replication_comoments, CoMoments, CorrelationProfile, LagEntry, ProfileRow,
    DEFAULT_LEVEL,
};
use stcausal::rbd::{self, VARIABLES};
use stcausal::regimes::{
    centroid_profiles, extract_features, phase_diagram, region_counts, select_k,
    variance_curve_results, CentroidProfileRow, ClusteringResult, Elbow, ParamPoint, PhaseCell,
    RegimeFeatureVector, DEFAULT_ELBOW_RATIO,
};

use crate::config::SweepConfig;
use crate::{
    create_dir, derive_seed, manifest, stage_seed, with_pool, write_json, write_rows,
    write_rows_with_header, CliError, Outcome, Timings, MANIFEST, TIMINGS,
};

/// Ordered variable pairs `a < b` of the model, in profile order.
pub fn model_pairs() -> Vec<(usize, usize)> {
    let j = VARIABLES.len();
    (0..j)
        .flat_map(|a| (a + 1..j).map(move |b| (a, b)))
        .collect()
}

/// Lag moments of one replication, indexed `[pair][tau + tau_max]`.
pub fn replication_moments(
    cfg: &SweepConfig,
    point: ParamPoint,
    rep: usize,
) -> Result<Vec<Vec<CoMoments>>, String> {
    let params = cfg
        .rbd
        .params(point, derive_seed(cfg.master_seed, point, rep));
    let field = rbd::run(&params)
        .and_then(|f| f.variations().map_err(Into::into))
        .map_err(|e| format!("replication {rep}: {e}"))?;
    let tm = cfg.tau_max as i64;
    model_pairs()
        .into_iter()
        .map(|(a, b)| {
            (-tm..=tm)
                .map(|tau| {
                    replication_comoments(&field, a, b, tau, 0)
                        .map_err(|e| format!("replication {rep}: {e}"))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointProfiles {
    pub point: ParamPoint,
    /// Pooled over replications, significance-gated.
    pub profiles: Vec<CorrelationProfile>,
    pub spread: Vec<SpreadRow>,
}

/// Extent of the per-replication estimates at one lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadRow {
    pub w_d: f64,
    pub w_c: f64,
    pub w_r: f64,
    pub pair: String,
    pub tau: i64,
    pub r_min: f64,
    pub r_max: f64,
    pub r_mean: f64,
    pub replications: usize,
}

/// Pools replication moments of one grid point into profiles plus spread.
pub fn reduce_point(
    cfg: &SweepConfig,
    point: ParamPoint,
    reps: &[Vec<Vec<CoMoments>>],
) -> PointProfiles {
    let tm = cfg.tau_max as i64;
    let mut profiles = Vec::new();
    let mut spread = Vec::new();
    for (p, &(a, b)) in model_pairs().iter().enumerate() {
        let names = (VARIABLES[a].to_string(), VARIABLES[b].to_string());
        let label = format!("{}->{}", names.0, names.1);
        let mut entries = Vec::new();
        for (l, tau) in (-tm..=tm).enumerate() {
            let pooled = reps
                .iter()
                .fold(CoMoments::default(), |acc, r| acc.merge(&r[p][l]));
            entries.push(LagEntry {
                tau,
                estimate: pooled.estimate(DEFAULT_LEVEL),
            });
            let rs: Vec<f64> = reps
                .iter()
                .filter_map(|r| r[p][l].estimate(DEFAULT_LEVEL).ok().map(|e| e.r))
                .collect();
            if !rs.is_empty() {
                spread.push(SpreadRow {
                    w_d: point[0],
                    w_c: point[1],
                    w_r: point[2],
                    pair: label.clone(),
                    tau,
                    r_min: rs.iter().copied().fold(f64::INFINITY, f64::min),
                    r_max: rs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    r_mean: rs.iter().sum::<f64>() / rs.len() as f64,
                    replications: rs.len(),
                });
            }
        }
        let profile = CorrelationProfile {
            pair: (a, b),
            names,
            entries,
        };
        profiles.push(gated_profile(&profile, cfg.alpha));
    }
    PointProfiles {
        point,
        profiles,
        spread,
    }
}

/// Runs every `(grid point, replication)` task, then pools per point.
/// A point fails when any of its replications fails.
pub fn run_profiles(cfg: &SweepConfig, grid: &[ParamPoint]) -> Vec<Result<PointProfiles, String>> {
    let reps = cfg.replications;
    let tasks: Vec<Result<Vec<Vec<CoMoments>>, String>> = (0..grid.len() * reps)
        .into_par_iter()
        .map(|t| replication_moments(cfg, grid[t / reps], t % reps))
        .collect();
    tasks
        .chunks(reps)
        .zip(grid)
        .map(|(chunk, &point)| {
            let moments: Vec<Vec<Vec<CoMoments>>> =
                chunk.iter().cloned().collect::<Result<_, _>>()?;
            Ok(reduce_point(cfg, point, &moments))
        })
        .collect()
}

/// Clustering of one threshold over all grid points.
#[derive(Debug, Clone)]
pub struct RegimeAnalysis {
    pub theta: f64,
    pub features: Vec<RegimeFeatureVector>,
    pub distinct: usize,
    pub curve: Vec<ClusteringResult>,
    pub elbow: Option<Elbow>,
    pub diagram: Vec<PhaseCell>,
    pub centroids: Vec<CentroidProfileRow>,
    pub note: Option<String>,
}

impl RegimeAnalysis {
    pub fn chosen(&self) -> Option<&ClusteringResult> {
        self.elbow
            .and_then(|e| self.curve.iter().find(|c| c.k == e.k))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn classify(
    points: &[ParamPoint],
    profiles: &[Vec<CorrelationProfile>],
    pairs: &[(usize, usize)],
    theta: f64,
    tau_max: usize,
    k_range: (usize, usize),
    restarts: usize,
    seed: u64,
) -> Result<RegimeAnalysis, CliError> {
    let features: Vec<RegimeFeatureVector> = points
        .iter()
        .zip(profiles)
        .map(|(p, set)| {
            extract_features(set, pairs, theta, tau_max as i64).map(|mut f| {
                f.parameter_point = Some(*p);
                f
            })
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    cluster_features(theta, features, Some(profiles), k_range, restarts, seed)
}

/// Variance curve, elbow, diagram and (given profiles) centroid profiles.
/// The upper end of `k_range` is clamped to the number of distinct feature vectors.
pub fn cluster_features(
    theta: f64,
    features: Vec<RegimeFeatureVector>,
    profiles: Option<&[Vec<CorrelationProfile>]>,
    k_range: (usize, usize),
    restarts: usize,
    seed: u64,
) -> Result<RegimeAnalysis, CliError> {
    let points: Vec<ParamPoint> = features
        .iter()
        .map(|f| f.parameter_point.unwrap_or([f64::NAN; 3]))
        .collect();
    let coords: Vec<Vec<f64>> = features.iter().map(|f| f.coordinates()).collect();
    let mut distinct = coords.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("lags are finite"));
    distinct.dedup();
    let distinct = distinct.len();
    let mut out = RegimeAnalysis {
        theta,
        features,
        distinct,
        curve: Vec::new(),
        elbow: None,
        diagram: Vec::new(),
        centroids: Vec::new(),
        note: None,
    };
    if coords.is_empty() {
        out.note = Some("no grid point to classify".into());
        return Ok(out);
    }
    let (lo, hi) = (k_range.0, k_range.1.min(distinct));
    if lo > hi {
        out.note = Some(format!(
            "only {distinct} distinct feature vectors for k >= {lo}"
        ));
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.curve = variance_curve_results(&coords, lo..=hi, restarts, &mut rng)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let curve: Vec<(usize, f64)> = out
        .curve
        .iter()
        .map(|c| (c.k, c.inter_cluster_variance_fraction))
        .collect();
    out.elbow = Some(match select_k(&curve, DEFAULT_ELBOW_RATIO) {
        Ok(e) => e,
        Err(e) => {
            out.note = Some(e.to_string());
            Elbow {
                k: hi,
                found: false,
            }
        }
    });
    let chosen = out.chosen().expect("elbow lies on the curve").clone();
    out.diagram = phase_diagram(&chosen, &out.features, &points)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(profiles) = profiles {
        out.centroids = centroid_profiles(&chosen, profiles);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointProfileRow {
    pub w_d: f64,
    pub w_c: f64,
    pub w_r: f64,
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

impl PointProfileRow {
    pub fn new(point: ParamPoint, row: ProfileRow) -> Self {
        Self {
            w_d: point[0],
            w_c: point[1],
            w_r: point[2],
            j1: row.j1,
            j2: row.j2,
            tau: row.tau,
            r: row.r,
            n: row.n,
            p: row.p,
            ci_low: row.ci_low,
            ci_high: row.ci_high,
            gated: row.gated,
        }
    }

    pub fn point(&self) -> ParamPoint {
        [self.w_d, self.w_c, self.w_r]
    }

    pub fn profile_row(&self) -> ProfileRow {
        ProfileRow {
            j1: self.j1.clone(),
            j2: self.j2.clone(),
            tau: self.tau,
            r: self.r,
            n: self.n,
            p: self.p,
            ci_low: self.ci_low,
            ci_high: self.ci_high,
            gated: self.gated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub w_d: f64,
    pub w_c: f64,
    pub w_r: f64,
    pub pair: String,
    pub argmax_lag: i64,
    pub argmin_lag: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub w_d: f64,
    pub w_c: f64,
    pub w_r: f64,
    pub error: String,
}

pub fn feature_rows(features: &[RegimeFeatureVector]) -> Vec<FeatureRow> {
    features
        .iter()
        .flat_map(|f| {
            let p = f.parameter_point.unwrap_or([f64::NAN; 3]);
            f.pairs.iter().map(move |pf| FeatureRow {
                w_d: p[0],
                w_c: p[1],
                w_r: p[2],
                pair: pf.pair.clone(),
                argmax_lag: pf.argmax_lag,
                argmin_lag: pf.argmin_lag,
            })
        })
        .collect()
}

/// Directory name of one threshold, e.g. `theta_0.5`.
pub fn theta_dir(theta: f64) -> String {
    format!("theta_{theta}")
}

#[derive(Debug, Serialize)]
pub struct ThetaSummary {
    pub theta: f64,
    pub distinct_feature_vectors: usize,
    pub k: Option<usize>,
    pub elbow_found: Option<bool>,
    /// Connected regions per cluster on the weight lattice.
    pub regions: Vec<(usize, usize)>,
    pub note: Option<String>,
}

/// Writes the per-threshold tables under `dir/theta_<θ>/`.
pub fn write_analysis(
    dir: &Path,
    analysis: &RegimeAnalysis,
    step: f64,
) -> Result<ThetaSummary, CliError> {
    let sub = dir.join(theta_dir(analysis.theta));
    create_dir(&sub)?;
    write_rows_with_header(
        &sub.join("features.csv"),
        &["w_d", "w_c", "w_r", "pair", "argmax_lag", "argmin_lag"],
        feature_rows(&analysis.features),
    )?;
    let curve: Vec<CurveRow> = analysis
        .curve
        .iter()
        .map(|c| CurveRow {
            k: c.k,
            fraction: c.inter_cluster_variance_fraction,
        })
        .collect();
    write_rows_with_header(&sub.join("variance_curve.csv"), &["k", "fraction"], curve)?;
    write_rows_with_header(
        &sub.join("diagram.csv"),
        &["w_d", "w_c", "w_r", "cluster"],
        analysis.diagram.clone(),
    )?;
    write_rows_with_header(
        &sub.join("centroids.csv"),
        &["cluster", "pair", "tau", "r_mean"],
        analysis.centroids.clone(),
    )?;
    Ok(ThetaSummary {
        theta: analysis.theta,
        distinct_feature_vectors: analysis.distinct,
        k: analysis.elbow.map(|e| e.k),
        elbow_found: analysis.elbow.map(|e| e.found),
        regions: region_counts(&analysis.diagram, step).into_iter().collect(),
        note: analysis.note.clone(),
    })
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    grid_points: usize,
    replications: usize,
    failed_points: usize,
    thetas: Vec<ThetaSummary>,
}

/// Full sweep: simulations, pooled profiles, features and regimes per θ.
pub fn cmd_sweep(cfg: &SweepConfig, workers: usize) -> Result<Outcome, CliError> {
    let grid = cfg.validate()?;
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    let mut timings = Timings::start(workers);
    let results = with_pool(workers, || run_profiles(cfg, &grid))?;
    timings.lap("simulate_and_profile");

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (point, r) in grid.iter().zip(results) {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => failures.push(FailureRow {
                w_d: point[0],
                w_c: point[1],
                w_r: point[2],
                error: e,
            }),
        }
    }
    write_rows(
        &dir.join("profiles.csv"),
        ok.iter().flat_map(|p| {
            p.profiles
                .iter()
                .flat_map(|pr| pr.rows())
                .map(|row| PointProfileRow::new(p.point, row))
        }),
    )?;
    write_rows(
        &dir.join("spread.csv"),
        ok.iter().flat_map(|p| p.spread.iter().cloned()),
    )?;
    write_rows_with_header(
        &dir.join("failures.csv"),
        &["w_d", "w_c", "w_r", "error"],
        failures.clone(),
    )?;
    timings.lap("write_profiles");

    let points: Vec<ParamPoint> = ok.iter().map(|p| p.point).collect();
    let profiles: Vec<Vec<CorrelationProfile>> = ok.into_iter().map(|p| p.profiles).collect();
    let step = cfg
        .weight_grid
        .w_d
        .step
        .min(cfg.weight_grid.w_c.step)
        .min(cfg.weight_grid.w_r.step);
    let mut thetas = Vec::new();
    for &theta in &cfg.theta_list {
        let seed = stage_seed(cfg.master_seed, "regimes", theta);
        let analysis = with_pool(workers, || {
            classify(
                &points,
                &profiles,
                &model_pairs(),
                theta,
                cfg.tau_max,
                cfg.k_range,
                cfg.restarts,
                seed,
            )
        })??;
        thetas.push(write_analysis(&dir, &analysis, step)?);
        timings.lap(&format!("regimes_{theta}"));
    }

    let summary = SweepSummary {
        grid_points: grid.len(),
        replications: cfg.replications,
        failed_points: failures.len(),
        thetas,
    };
    let mut recorded = cfg.clone();
    recorded.worker_count = None;
    write_json(
        &dir.join(MANIFEST),
        &manifest("sweep", cfg.master_seed, &recorded, &summary),
    )?;
    write_json(&dir.join(TIMINGS), &timings)?;
    Ok(Outcome {
        out_dir: dir,
        failures: failures
            .iter()
            .map(|f| format!("{:?}: {}", [f.w_d, f.w_c, f.w_r], f.error))
            .collect(),
    })
}
