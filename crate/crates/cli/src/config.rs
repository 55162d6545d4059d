use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stcausal::rbd::RbdParams;
use stcausal::regimes::ParamPoint;

use crate::CliError;

/// Worker cap read from the environment, applied after flags and config.
pub const MAX_WORKERS_ENV: &str = "STCAUSAL_MAX_WORKERS";

/// Rounds to 12 decimals so that `min + i * step` lands on the intended decimal.
pub fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for GridAxis {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 1.0,
            step: 0.1,
        }
    }
}

impl GridAxis {
    pub fn single(v: f64) -> Self {
        Self {
            min: v,
            max: v,
            step: 1.0,
        }
    }

    pub fn values(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let bad = |m: String| Err(CliError::Validation(format!("weight_grid.{name}: {m}")));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step {} must be positive", self.step));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return bad(format!("range {}..{} is empty", self.min, self.max));
        }
        let span = (self.max - self.min) / self.step;
        if (span - span.round()).abs() > 1e-9 {
            return bad(format!(
                "step {} does not divide {}..{}",
                self.step, self.min, self.max
            ));
        }
        let count = span.round() as usize + 1;
        Ok((0..count)
            .map(|i| round12(self.min + i as f64 * self.step))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightGrid {
    pub w_d: GridAxis,
    pub w_c: GridAxis,
    pub w_r: GridAxis,
}

impl WeightGrid {
    pub fn single(point: ParamPoint) -> Self {
        Self {
            w_d: GridAxis::single(point[0]),
            w_c: GridAxis::single(point[1]),
            w_r: GridAxis::single(point[2]),
        }
    }

    /// Grid points with `w_d` outermost and `w_r` innermost.
    pub fn points(&self) -> Result<Vec<ParamPoint>, CliError> {
        let (d, c, r) = (
            self.w_d.values("w_d")?,
            self.w_c.values("w_c")?,
            self.w_r.values("w_r")?,
        );
        let mut out = Vec::with_capacity(d.len() * c.len() * r.len());
        for &wd in &d {
            for &wc in &c {
                for &wr in &r {
                    out.push([wd, wc, wr]);
                }
            }
        }
        Ok(out)
    }
}

/// Model settings shared by every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub grid_size: usize,
    pub steps: usize,
    pub patches_per_step: usize,
    pub density_radius: usize,
    pub network_connect_interval: usize,
    pub connection_threshold: f64,
    pub selection_exponent: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let p = RbdParams::default();
        Self {
            grid_size: p.grid_size,
            steps: p.steps,
            patches_per_step: p.patches_per_step,
            density_radius: p.density_radius,
            network_connect_interval: p.network_connect_interval,
            connection_threshold: p.connection_threshold,
            selection_exponent: p.selection_exponent,
        }
    }
}

impl ModelSettings {
    pub fn params(&self, point: ParamPoint, seed: u64) -> RbdParams {
        RbdParams {
            w_d: point[0],
            w_c: point[1],
            w_r: point[2],
            grid_size: self.grid_size,
            steps: self.steps,
            patches_per_step: self.patches_per_step,
            density_radius: self.density_radius,
            network_connect_interval: self.network_connect_interval,
            connection_threshold: self.connection_threshold,
            selection_exponent: self.selection_exponent,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub weight_grid: WeightGrid,
    pub replications: usize,
    pub rbd: ModelSettings,
    pub tau_max: usize,
    pub theta_list: Vec<f64>,
    pub k_range: (usize, usize),
    pub restarts: usize,
    pub alpha: f64,
    /// Not recorded in manifests, so identical runs into different directories match.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub worker_count: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            weight_grid: WeightGrid::default(),
            replications: 10,
            rbd: ModelSettings::default(),
            tau_max: 5,
            theta_list: vec![0.5, 1.0, 2.0, 3.0],
            k_range: (1, 10),
            restarts: 5000,
            alpha: 0.05,
            output_dir: PathBuf::from("sweep_out"),
            master_seed: 0,
            worker_count: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<Vec<ParamPoint>, CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let grid = self.weight_grid.points()?;
        for p in [grid[0], grid[grid.len() - 1]] {
            self.rbd
                .params(p, 0)
                .validate()
                .map_err(|e| CliError::Validation(e.to_string()))?;
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.tau_max + 1 >= self.rbd.steps {
            return bad(format!(
                "tau_max {} needs more than {} steps",
                self.tau_max,
                self.tau_max + 1
            ));
        }
        if self.theta_list.is_empty()
            || self
                .theta_list
                .iter()
                .any(|t| !(*t >= 0.0 && t.is_finite()))
        {
            return bad("theta_list must hold finite non-negative thresholds".into());
        }
        check_k_range(self.k_range)?;
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        check_alpha(self.alpha)?;
        Ok(grid)
    }
}

pub fn check_k_range((lo, hi): (usize, usize)) -> Result<(), CliError> {
    if lo == 0 || lo > hi {
        return Err(CliError::Validation(format!(
            "k_range {lo}..{hi} must satisfy 1 <= min <= max"
        )));
    }
    Ok(())
}

pub fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Validation(format!(
            "alpha {alpha} must lie in (0, 1)"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub name: String,
    pub baseline_edges: PathBuf,
    pub project_edges: PathBuf,
    /// Announcement year.
    pub date: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessConfig {
    pub nodes: PathBuf,
    pub zones: PathBuf,
    pub indicators: PathBuf,
    pub indicators_meta: PathBuf,
    pub projects: Vec<ProjectConfig>,
    #[serde(default = "default_t0_list")]
    pub t0_list: Vec<f64>,
    #[serde(default = "default_access_tau_max")]
    pub tau_max: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_connector_speed")]
    pub connector_speed: f64,
    #[serde(default = "stcausal::access::default_mode_speeds")]
    pub mode_speeds: BTreeMap<String, f64>,
}

fn default_t0_list() -> Vec<f64> {
    stcausal::access::DEFAULT_T0_LIST.to_vec()
}

fn default_access_tau_max() -> usize {
    3
}

fn default_alpha() -> f64 {
    stcausal::access::DEFAULT_ALPHA
}

fn default_connector_speed() -> f64 {
    stcausal::access::CONNECTOR_SPEED
}

impl AccessConfig {
    /// Resolves relative input paths against `base`.
    pub fn rebase(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.nodes);
        fix(&mut self.zones);
        fix(&mut self.indicators);
        fix(&mut self.indicators_meta);
        for p in &mut self.projects {
            fix(&mut p.baseline_edges);
            fix(&mut p.project_edges);
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.projects.is_empty() {
            return Err(CliError::Validation("no project listed".into()));
        }
        if self.t0_list.is_empty() || self.t0_list.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(CliError::Validation(
                "t0_list must hold positive decay times".into(),
            ));
        }
        check_alpha(self.alpha)
    }
}

pub fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Parses `a..b`, `a..=b` or `a-b` as an inclusive range.
pub fn parse_k_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .or_else(|| s.split_once('-'))
        .ok_or_else(|| format!("expected MIN..MAX, got {s}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((parse(a)?, parse(b)?))
}
