//! Run configuration: command-line flags over an optional TOML file over
//! built-in defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use flexagg::uncertainty::{DayType, RiskConfig};
use serde::Deserialize;

use crate::error::CliError;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with any of the options below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub feeder: Option<PathBuf>,
    #[arg(long)]
    pub fleet: Option<PathBuf>,
    /// Load and PV forecast profiles (CSV).
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Error mixtures (JSON table) or error history (CSV, fitted on load).
    #[arg(long)]
    pub errors: Option<PathBuf>,
    /// Number of search directions.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub eps_p: Option<f64>,
    #[arg(long)]
    pub eps_v: Option<f64>,
    #[arg(long)]
    pub eps_i: Option<f64>,
    #[arg(long)]
    pub day_type: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated HH:MM snapshot times; default every 30 minutes.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<String>>,
    /// Load forecast standard deviation as a share of scheduled power.
    #[arg(long)]
    pub load_std: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    feeder: Option<PathBuf>,
    fleet: Option<PathBuf>,
    profiles: Option<PathBuf>,
    errors: Option<PathBuf>,
    k: Option<usize>,
    eps_p: Option<f64>,
    eps_v: Option<f64>,
    eps_i: Option<f64>,
    day_type: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    times: Option<Vec<String>>,
    load_std: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub feeder: Option<PathBuf>,
    pub fleet: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub errors: Option<PathBuf>,
    pub k_total: usize,
    pub risk: RiskConfig,
    pub day_type: DayType,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub times: Option<Vec<String>>,
    pub load_std: f64,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let (file, dir) = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let cfg: FileConfig = toml::from_str(&text).map_err(|e| CliError::Parse {
                    path: path.clone(),
                    message: e.message().to_string(),
                    byte_offset: e.span().map(|s| s.start),
                })?;
                (cfg, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let rel = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { dir.join(p) });
        let pick_path = |flag: &Option<PathBuf>, from_file: Option<PathBuf>| flag.clone().or_else(|| rel(from_file));

        let k_total = args.k.or(file.k).unwrap_or(32);
        if k_total < 3 {
            return Err(CliError::Config(format!("k = {k_total}: at least 3 directions are needed")));
        }
        let eps = |flag: Option<f64>, f: Option<f64>, default: f64, name: &str| -> Result<f64, CliError> {
            let e = flag.or(f).unwrap_or(default);
            if e > 0.0 && e < 1.0 {
                Ok(e)
            } else {
                Err(CliError::Config(format!("{name} = {e} is outside (0, 1)")))
            }
        };
        let risk = RiskConfig::new(
            eps(args.eps_p, file.eps_p, 0.5, "eps_p")?,
            eps(args.eps_v, file.eps_v, 0.05, "eps_v")?,
            eps(args.eps_i, file.eps_i, 0.05, "eps_i")?,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        let day_type = match args.day_type.clone().or(file.day_type) {
            Some(s) => s.parse().map_err(CliError::Config)?,
            None => DayType::Cloudy,
        };
        let jobs = args.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        let load_std = args.load_std.or(file.load_std).unwrap_or(flexagg::drcc::DEFAULT_LOAD_STD_FRAC);
        if !(load_std >= 0.0 && load_std.is_finite()) {
            return Err(CliError::Config(format!("load_std = {load_std} must be a nonnegative number")));
        }
        let cfg = RunConfig {
            feeder: pick_path(&args.feeder, file.feeder),
            fleet: pick_path(&args.fleet, file.fleet),
            profiles: pick_path(&args.profiles, file.profiles),
            errors: pick_path(&args.errors, file.errors),
            k_total,
            risk,
            day_type,
            seed: args.seed.or(file.seed).unwrap_or(1),
            out: pick_path(&args.out, file.out).unwrap_or_else(|| PathBuf::from("out")),
            jobs,
            times: args.times.clone().or(file.times),
            load_std,
        };
        for p in [&cfg.feeder, &cfg.fleet, &cfg.profiles, &cfg.errors].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("{}: no such file", p.display())));
            }
        }
        Ok(cfg)
    }
}
