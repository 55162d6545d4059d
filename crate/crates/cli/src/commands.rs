//! Single simulation, profile and regime re-analysis commands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stcausal::lagcorr::{
    all_pair_profiles, gated_profile, CorrelationProfile, ProfileRow, DEFAULT_LEVEL,
};
use stcausal::rbd::{self, RbdParams};
use stcausal::regimes::{PairFeature, ParamPoint, RegimeFeatureVector};
use stcausal::stfield::{FieldMetadata, SpatioTemporalField};

use crate::config::check_k_range;
use crate::sweep::{
    classify, cluster_features, write_analysis, FeatureRow, PointProfileRow, ThetaSummary,
};
use crate::{
    create_dir, manifest, stage_seed, with_pool, write_json, write_rows, CliError, Outcome,
    Timings, MANIFEST, TIMINGS,
};

pub const TRAJECTORY: &str = "trajectory.csv";
pub const TRAJECTORY_META: &str = "trajectory.json";

/// One realization of the growth model, as a field CSV plus its metadata.
pub fn cmd_simulate(params: &RbdParams, out: &Path) -> Result<Outcome, CliError> {
    params
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    create_dir(out)?;
    let mut timings = Timings::start(1);
    let field = rbd::run(params).map_err(|e| CliError::Runtime(e.to_string()))?;
    timings.lap("simulate");
    let path = out.join(TRAJECTORY);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    field
        .write_csv(BufWriter::new(file))
        .map_err(|e| CliError::io(&path, e))?;
    write_json(&out.join(TRAJECTORY_META), &field.metadata())?;
    write_json(
        &out.join(MANIFEST),
        &manifest("simulate", params.seed, params, field.dims()),
    )?;
    timings.lap("write");
    write_json(&out.join(TIMINGS), &timings)?;
    Ok(Outcome {
        out_dir: out.to_path_buf(),
        failures: Vec::new(),
    })
}

pub fn load_field(csv_path: &Path, meta_path: &Path) -> Result<SpatioTemporalField, CliError> {
    let text = std::fs::read_to_string(meta_path).map_err(|e| CliError::io(meta_path, e))?;
    let meta = FieldMetadata::from_json(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", meta_path.display())))?;
    let file = File::open(csv_path).map_err(|e| CliError::io(csv_path, e))?;
    SpatioTemporalField::read_csv(std::io::BufReader::new(file), &meta)
        .map_err(|e| CliError::Validation(format!("{}: {e}", csv_path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileArgs {
    pub field: PathBuf,
    pub meta: PathBuf,
    pub tau_max: usize,
    pub alpha: f64,
    /// Correlate levels instead of first differences.
    pub levels: bool,
}

/// Gated all-pair profiles of a field CSV, written to `profiles.csv`.
pub fn cmd_profile(args: &ProfileArgs, out: &Path) -> Result<Outcome, CliError> {
    crate::config::check_alpha(args.alpha)?;
    let field = load_field(&args.field, &args.meta)?;
    let field = if args.levels {
        field
    } else {
        field
            .variations()
            .map_err(|e| CliError::Validation(e.to_string()))?
    };
    let profiles = all_pair_profiles(&field, args.tau_max, DEFAULT_LEVEL)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    create_dir(out)?;
    let rows: Vec<ProfileRow> = profiles
        .iter()
        .flat_map(|p| gated_profile(p, args.alpha).rows())
        .collect();
    write_rows(&out.join("profiles.csv"), rows)?;
    write_json(
        &out.join(MANIFEST),
        &manifest("profile", 0, args, field.dims()),
    )?;
    Ok(Outcome {
        out_dir: out.to_path_buf(),
        failures: Vec::new(),
    })
}

/// Point-keyed profiles as written by a sweep.
pub fn read_point_profiles(
    path: &Path,
) -> Result<(Vec<ParamPoint>, Vec<Vec<CorrelationProfile>>), CliError> {
    let rows: Vec<PointProfileRow> = crate::read_rows(path)?;
    let mut names: Vec<String> = Vec::new();
    let mut order: Vec<[u64; 3]> = Vec::new();
    let mut groups: BTreeMap<[u64; 3], (ParamPoint, Vec<ProfileRow>)> = BTreeMap::new();
    for row in &rows {
        for n in [&row.j1, &row.j2] {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        let point = row.point();
        let key = point.map(|v| (v + 0.0).to_bits());
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                (point, Vec::new())
            })
            .1
            .push(row.profile_row());
    }
    let mut points = Vec::new();
    let mut profiles = Vec::new();
    for key in order {
        let (point, rows) = &groups[&key];
        points.push(*point);
        profiles.push(
            CorrelationProfile::from_rows(rows, &names, DEFAULT_LEVEL)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
        );
    }
    Ok((points, profiles))
}

pub fn read_features(path: &Path) -> Result<Vec<RegimeFeatureVector>, CliError> {
    let rows: Vec<FeatureRow> = crate::read_rows(path)?;
    let mut out: Vec<RegimeFeatureVector> = Vec::new();
    for row in rows {
        let point = [row.w_d, row.w_c, row.w_r];
        let feature = PairFeature {
            pair: row.pair,
            argmax_lag: row.argmax_lag,
            argmin_lag: row.argmin_lag,
        };
        match out.iter_mut().find(|f| f.parameter_point == Some(point)) {
            Some(f) => f.pairs.push(feature),
            None => out.push(RegimeFeatureVector {
                parameter_point: Some(point),
                pairs: vec![feature],
            }),
        }
    }
    if out.iter().any(|f| f.pairs.len() != out[0].pairs.len()) {
        return Err(CliError::Validation(format!(
            "{}: points list different pair sets",
            path.display()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub enum RegimeInput {
    Profiles(PathBuf),
    Features(PathBuf),
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeArgs {
    pub input: RegimeInput,
    pub theta_list: Vec<f64>,
    pub tau_max: usize,
    pub k_range: (usize, usize),
    pub restarts: usize,
    pub seed: u64,
    /// Lattice spacing used to count connected regions.
    pub step: f64,
}

/// Features, variance curves and diagrams from saved profiles or features.
/// A features table carries one threshold already, so `theta_list` is ignored.
pub fn cmd_regimes(args: &RegimeArgs, workers: usize, out: &Path) -> Result<Outcome, CliError> {
    check_k_range(args.k_range)?;
    if args.restarts == 0 {
        return Err(CliError::Validation("restarts must be at least 1".into()));
    }
    create_dir(out)?;
    let mut timings = Timings::start(workers);
    let mut summaries: Vec<ThetaSummary> = Vec::new();
    match &args.input {
        RegimeInput::Profiles(path) => {
            let (points, profiles) = read_point_profiles(path)?;
            let pairs: Vec<(usize, usize)> = profiles
                .first()
                .map(|set| set.iter().map(|p| p.pair).collect())
                .unwrap_or_default();
            for &theta in &args.theta_list {
                if !(theta >= 0.0 && theta.is_finite()) {
                    return Err(CliError::Validation(format!(
                        "theta {theta} must be finite and non-negative"
                    )));
                }
                let seed = stage_seed(args.seed, "regimes", theta);
                let analysis = with_pool(workers, || {
                    classify(
                        &points,
                        &profiles,
                        &pairs,
                        theta,
                        args.tau_max,
                        args.k_range,
                        args.restarts,
                        seed,
                    )
                })??;
                summaries.push(write_analysis(out, &analysis, args.step)?);
                timings.lap(&format!("regimes_{theta}"));
            }
        }
        RegimeInput::Features(path) => {
            let features = read_features(path)?;
            let theta = args.theta_list.first().copied().unwrap_or(0.0);
            let seed = stage_seed(args.seed, "regimes", theta);
            let analysis = with_pool(workers, || {
                cluster_features(theta, features, None, args.k_range, args.restarts, seed)
            })??;
            summaries.push(write_analysis(out, &analysis, args.step)?);
            timings.lap("regimes");
        }
    }
    write_json(
        &out.join(MANIFEST),
        &manifest("regimes", args.seed, args, &summaries),
    )?;
    write_json(&out.join(TIMINGS), &timings)?;
    Ok(Outcome {
        out_dir: out.to_path_buf(),
        failures: Vec::new(),
    })
}
