//! Accessibility pipeline: graphs, travel times, differentials and their
//! lagged correlation with indicator variations, one scenario per project.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stcausal::access::{
    build_graph, decay_accessibility, differential, empirical_lagged_analysis, read_edges,
    read_nodes, read_zones, travel_times, AccessError, EmpiricalProfile, Node, Zone,
};
use stcausal::SpatioTemporalField;

use crate::commands::load_field;
use crate::config::{AccessConfig, ProjectConfig};
use crate::{
    create_dir, manifest, with_pool, write_json, write_rows, write_rows_with_header, CliError,
    Outcome, Timings, MANIFEST, TIMINGS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityRow {
    pub zone: String,
    pub scenario: String,
    pub t0: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialRow {
    pub zone: String,
    pub t0: f64,
    #[serde(rename = "dT")]
    pub dt: f64,
}

/// Empty `r`, bounds and `gated` mark lags without a valid estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRow {
    pub project: String,
    pub indicator: String,
    pub t0: f64,
    pub tau: i64,
    pub r: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub gated: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectFailure {
    pub project: String,
    pub error: String,
}

pub fn empirical_rows(project: &str, profiles: &[EmpiricalProfile]) -> Vec<EmpiricalRow> {
    profiles
        .iter()
        .flat_map(|p| {
            p.profile.entries.iter().map(move |e| {
                let est = e.estimate.as_ref().ok();
                EmpiricalRow {
                    project: project.to_string(),
                    indicator: p.indicator.clone(),
                    t0: p.t0,
                    tau: e.tau,
                    r: est.map(|x| x.r),
                    ci_low: est.map(|x| x.ci_low),
                    ci_high: est.map(|x| x.ci_high),
                    gated: est.map(|x| x.gated),
                }
            })
        })
        .collect()
}

struct Inputs {
    nodes: Vec<Node>,
    origins: Vec<Zone>,
    destinations: Vec<Zone>,
    indicators: SpatioTemporalField,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn load_inputs(cfg: &AccessConfig) -> Result<Inputs, CliError> {
    let invalid =
        |path: &Path, e: AccessError| CliError::Validation(format!("{}: {e}", path.display()));
    let nodes = read_nodes(open(&cfg.nodes)?).map_err(|e| invalid(&cfg.nodes, e))?;
    let (origins, destinations) =
        read_zones(open(&cfg.zones)?).map_err(|e| invalid(&cfg.zones, e))?;
    let indicators = load_field(&cfg.indicators, &cfg.indicators_meta)?;
    Ok(Inputs {
        nodes,
        origins,
        destinations,
        indicators,
    })
}

#[derive(Debug, Serialize)]
struct ProjectSummary {
    project: String,
    date: i64,
    zones: usize,
    valid_estimates: usize,
    failed_estimates: usize,
    surviving_gate: usize,
}

fn run_project(
    cfg: &AccessConfig,
    inputs: &Inputs,
    project: &ProjectConfig,
    out: &Path,
) -> Result<(Vec<EmpiricalRow>, ProjectSummary), String> {
    let fail = |e: &dyn std::fmt::Display| e.to_string();
    let load = |path: &Path| -> Result<_, String> {
        read_edges(open(path).map_err(|e| fail(&e))?)
            .map_err(|e| format!("{}: {e}", path.display()))
    };
    let graph = |edges: Vec<stcausal::access::Edge>| {
        build_graph(
            &inputs.nodes,
            &edges,
            &cfg.mode_speeds,
            &inputs.origins,
            &inputs.destinations,
            cfg.connector_speed,
        )
        .map_err(|e| fail(&e))
    };
    let base = graph(load(&project.baseline_edges)?)?;
    let with = graph(load(&project.project_edges)?)?;
    let base_times = travel_times(&base).map_err(|e| fail(&e))?;
    let with_times = travel_times(&with).map_err(|e| fail(&e))?;
    let mut access_rows = Vec::new();
    let mut diff_rows = Vec::new();
    let mut diffs = Vec::new();
    for &t0 in &cfg.t0_list {
        let a = decay_accessibility(&with_times, t0, "project").map_err(|e| fail(&e))?;
        let b = decay_accessibility(&base_times, t0, "baseline").map_err(|e| fail(&e))?;
        for r in [&b, &a] {
            access_rows.extend(r.zones.iter().zip(&r.t).map(|(z, &t)| AccessibilityRow {
                zone: z.clone(),
                scenario: r.scenario.clone(),
                t0,
                t,
            }));
        }
        let d = differential(&a, &b);
        diff_rows.extend(d.zones.iter().zip(&d.dt).map(|(z, &dt)| DifferentialRow {
            zone: z.clone(),
            t0,
            dt,
        }));
        diffs.push(d);
    }
    let profiles = empirical_lagged_analysis(
        &diffs,
        &inputs.indicators,
        project.date,
        cfg.tau_max,
        cfg.alpha,
    )
    .map_err(|e| fail(&e))?;
    let sub = out.join(&project.name);
    create_dir(&sub).map_err(|e| fail(&e))?;
    write_rows(&sub.join("accessibility.csv"), access_rows).map_err(|e| fail(&e))?;
    write_rows(&sub.join("differentials.csv"), diff_rows).map_err(|e| fail(&e))?;
    let rows = empirical_rows(&project.name, &profiles);
    let valid = rows.iter().filter(|r| r.r.is_some()).count();
    let summary = ProjectSummary {
        project: project.name.clone(),
        date: project.date,
        zones: inputs.origins.len(),
        valid_estimates: valid,
        failed_estimates: rows.len() - valid,
        surviving_gate: rows.iter().filter(|r| r.gated == Some(false)).count(),
    };
    Ok((rows, summary))
}

/// Runs every project; a failing project is recorded and skipped.
pub fn cmd_access(cfg: &AccessConfig, workers: usize, out: &Path) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let mut names: Vec<&str> = cfg.projects.iter().map(|p| p.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != cfg.projects.len() {
        return Err(CliError::Validation("project names must be unique".into()));
    }
    if let Some(p) = cfg.projects.iter().find(|p| {
        p.name.is_empty()
            || !p
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    }) {
        return Err(CliError::Validation(format!(
            "project name {:?} must be non-empty [A-Za-z0-9_-]",
            p.name
        )));
    }
    let inputs = load_inputs(cfg)?;
    create_dir(out)?;
    let mut timings = Timings::start(workers);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for project in &cfg.projects {
        match with_pool(workers, || run_project(cfg, &inputs, project, out))? {
            Ok((r, s)) => {
                rows.extend(r);
                summaries.push(s);
            }
            Err(error) => failures.push(ProjectFailure {
                project: project.name.clone(),
                error,
            }),
        }
        timings.lap(&project.name);
    }
    write_rows_with_header(
        &out.join("empirical.csv"),
        &[
            "project",
            "indicator",
            "t0",
            "tau",
            "r",
            "ci_low",
            "ci_high",
            "gated",
        ],
        rows,
    )?;
    write_rows_with_header(
        &out.join("failures.csv"),
        &["project", "error"],
        failures.clone(),
    )?;
    write_json(&out.join(MANIFEST), &manifest("access", 0, cfg, &summaries))?;
    write_json(&out.join(TIMINGS), &timings)?;
    Ok(Outcome {
        out_dir: out.to_path_buf(),
        failures: failures
            .into_iter()
            .map(|f| format!("{}: {}", f.project, f.error))
            .collect(),
    })
}
