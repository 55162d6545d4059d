//! Pipelines behind the `stcausal` binary: single simulations, parameter
//! sweeps with regime classification, profile and regime re-analysis, and
//! the accessibility pipeline.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub mod access_cmd;
pub mod commands;
pub mod config;
pub mod sweep;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

pub const MANIFEST: &str = "manifest.json";
/// Wall-clock data lives apart from the manifest so reruns stay byte-identical.
pub const TIMINGS: &str = "timings.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

/// What a command produced; `failures` non-empty means partial success.
#[derive(Debug, Default)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

/// Seed of one replication, stable under reordering or subsetting of the grid.
pub fn derive_seed(master_seed: u64, point: [f64; 3], replication: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    for w in point {
        h.update((w + 0.0).to_bits().to_le_bytes());
    }
    h.update((replication as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed of a named stage keyed by a real parameter.
pub fn stage_seed(master_seed: u64, stage: &str, key: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update((key + 0.0).to_bits().to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest has 32 bytes"))
}

/// Requested workers (flag, then config, then all cores), capped by the environment.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    let cap = std::env::var(config::MAX_WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&c| c > 0);
    let n = requested.filter(|&n| n > 0).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    cap.map_or(n, |c| n.min(c))
}

pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_rows<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes a header line even when there are no rows.
pub fn write_rows_with_header<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: Vec<T>,
) -> Result<(), CliError> {
    if rows.is_empty() {
        return std::fs::write(path, format!("{}\n", header.join(",")))
            .map_err(|e| CliError::io(path, e));
    }
    write_rows(path, rows)
}

pub fn read_rows<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(std::io::BufReader::new(file))
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Named wall-clock stages, written to [`TIMINGS`].
#[derive(Debug, Serialize)]
pub struct Timings {
    pub workers: usize,
    pub stages: Vec<(String, f64)>,
    #[serde(skip)]
    last: Option<Instant>,
}

impl Timings {
    pub fn start(workers: usize) -> Self {
        Self {
            workers,
            stages: Vec::new(),
            last: Some(Instant::now()),
        }
    }

    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        let secs = self.last.map_or(0.0, |t| (now - t).as_secs_f64());
        self.stages.push((stage.to_string(), secs));
        self.last = Some(now);
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|s| s.1).sum()
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize, S: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub seed: u64,
    pub config: C,
    pub summary: S,
}

pub fn manifest<C: Serialize, S: Serialize>(
    command: &'static str,
    seed: u64,
    config: C,
    summary: S,
) -> Manifest<C, S> {
    Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        core_version: stcausal::VERSION,
        seed,
        config,
        summary,
    }
}
