use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use stcausal::rbd::RbdParams;
use stcausal_cli::access_cmd::cmd_access;
use stcausal_cli::commands::{
    cmd_profile, cmd_regimes, cmd_simulate, ProfileArgs, RegimeArgs, RegimeInput,
};
use stcausal_cli::config::{load_toml, parse_k_range, AccessConfig, SweepConfig};
use stcausal_cli::sweep::cmd_sweep;
use stcausal_cli::{resolve_workers, CliError, Outcome, EXIT_VALIDATION};

#[derive(Parser)]
#[command(
    name = "stcausal",
    version,
    about = "Lagged-correlation causality analysis of spatio-temporal data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one realization of the growth model.
    Simulate(SimulateArgs),
    /// Sweep the weight grid, pool profiles and classify regimes.
    Sweep(SweepArgs),
    /// Lagged correlation profiles of a field CSV.
    Profile(ProfileCmd),
    /// Regime clustering of saved sweep profiles or features.
    Regimes(RegimesCmd),
    /// Accessibility differentials and their lagged correlation with indicators.
    Access(AccessCmd),
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, capped by STCAUSAL_MAX_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML document of model parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    w_d: Option<f64>,
    #[arg(long)]
    w_c: Option<f64>,
    #[arg(long)]
    w_r: Option<f64>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML sweep configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    tau_max: Option<usize>,
    /// Inclusive cluster-count range, `MIN..MAX`.
    #[arg(long, value_parser = parse_k_range)]
    k_range: Option<(usize, usize)>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
struct ProfileCmd {
    /// Field CSV `unit,variable,time,replication,value`.
    #[arg(long)]
    field: PathBuf,
    /// Field metadata JSON.
    #[arg(long)]
    meta: PathBuf,
    #[arg(long, default_value_t = 5)]
    tau_max: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Correlate levels rather than first differences.
    #[arg(long)]
    levels: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegimesCmd {
    /// Sweep `profiles.csv`.
    #[arg(
        long,
        conflicts_with = "features",
        required_unless_present = "features"
    )]
    profiles: Option<PathBuf>,
    /// A `features.csv` of one threshold.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 3.0])]
    theta: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    tau_max: usize,
    #[arg(long, value_parser = parse_k_range, default_value = "1..10")]
    k_range: (usize, usize),
    #[arg(long, default_value_t = 5000)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight grid spacing, for region counts.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AccessCmd {
    /// TOML access configuration; relative paths resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated decay times in minutes.
    #[arg(long, value_delimiter = ',')]
    t0: Option<Vec<f64>>,
    #[arg(long)]
    tau_max: Option<usize>,
    #[command(flatten)]
    common: Common,
}

fn out_or(out: Option<PathBuf>, default: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(default))
}

fn simulate(args: SimulateArgs) -> Result<Outcome, CliError> {
    let mut params: RbdParams = match &args.config {
        Some(path) => load_toml(path)?,
        None => RbdParams::default(),
    };
    if let Some(s) = args.seed {
        params.seed = s;
    }
    params.w_d = args.w_d.unwrap_or(params.w_d);
    params.w_c = args.w_c.unwrap_or(params.w_c);
    params.w_r = args.w_r.unwrap_or(params.w_r);
    params.grid_size = args.grid_size.unwrap_or(params.grid_size);
    params.steps = args.steps.unwrap_or(params.steps);
    cmd_simulate(&params, &out_or(args.out, "simulate_out"))
}

fn sweep(args: SweepArgs) -> Result<Outcome, CliError> {
    let mut cfg: SweepConfig = match &args.config {
        Some(path) => load_toml(path)?,
        None => SweepConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = args.common.out {
        cfg.output_dir = o;
    }
    if let Some(t) = args.theta {
        cfg.theta_list = t;
    }
    cfg.tau_max = args.tau_max.unwrap_or(cfg.tau_max);
    cfg.k_range = args.k_range.unwrap_or(cfg.k_range);
    cfg.replications = args.replications.unwrap_or(cfg.replications);
    cfg.restarts = args.restarts.unwrap_or(cfg.restarts);
    let workers = resolve_workers(args.common.workers.or(cfg.worker_count));
    cmd_sweep(&cfg, workers)
}

fn profile(args: ProfileCmd) -> Result<Outcome, CliError> {
    let out = out_or(args.out, "profile_out");
    let p = ProfileArgs {
        field: args.field,
        meta: args.meta,
        tau_max: args.tau_max,
        alpha: args.alpha,
        levels: args.levels,
    };
    cmd_profile(&p, &out)
}

fn regimes(args: RegimesCmd) -> Result<Outcome, CliError> {
    let input = match (args.profiles, args.features) {
        (Some(p), _) => RegimeInput::Profiles(p),
        (None, Some(f)) => RegimeInput::Features(f),
        (None, None) => {
            return Err(CliError::Validation(
                "--profiles or --features is required".into(),
            ))
        }
    };
    let r = RegimeArgs {
        input,
        theta_list: args.theta,
        tau_max: args.tau_max,
        k_range: args.k_range,
        restarts: args.restarts,
        seed: args.seed,
        step: args.step,
    };
    cmd_regimes(
        &r,
        resolve_workers(args.common.workers),
        &out_or(args.common.out, "regimes_out"),
    )
}

fn access(args: AccessCmd) -> Result<Outcome, CliError> {
    let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut cfg: AccessConfig = load_toml::<AccessConfig>(&args.config)?.rebase(&base);
    if let Some(t0) = args.t0 {
        cfg.t0_list = t0;
    }
    cfg.tau_max = args.tau_max.unwrap_or(cfg.tau_max);
    cmd_access(
        &cfg,
        resolve_workers(args.common.workers),
        &out_or(args.common.out, "access_out"),
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_VALIDATION as u8),
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Profile(a) => profile(a),
        Command::Regimes(a) => regimes(a),
        Command::Access(a) => access(a),
    };
    match result {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
            println!("{}", outcome.out_dir.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
