//! `oocchol`: generate covariance problems, run out-of-core factorizations,
//! sweep parameter grids and render precision maps.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod render;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oocchol::memdev::BandwidthModel;
use oocchol::scheduler::EvictionKind;
use oocchol::{PrecisionMode, Variant};

use commands::{CliError, CliResult};
use config::{RunConfig, SweepConfig};

/// Environment variable holding the log filter (`error`, `warn`, `info`, ...).
const LOG_ENV: &str = "OOCCHOL_LOG";

#[derive(Parser)]
#[command(name = "oocchol", version, about = "Out-of-core mixed-precision tile Cholesky")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Factorize one problem and write a JSON report.
    Factor(RunArgs),
    /// Run a cartesian grid of configurations and write a CSV summary.
    Sweep {
        /// Sweep file: `{"base": {...}, "axes": {...}}`.
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a precision map as ASCII (and optionally a PPM image).
    RenderMap {
        /// Precision map JSON, as written by `factor --precision-map`.
        map: PathBuf,
        #[arg(long)]
        ppm: Option<PathBuf>,
        /// PPM pixels per tile.
        #[arg(long, default_value_t = 8)]
        cell: usize,
    },
    /// Write a locations CSV and/or a covariance matrix dump.
    Gen {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        locations: Option<PathBuf>,
        #[arg(long = "matrix-out")]
        matrix_out: Option<PathBuf>,
    },
}

/// A JSON config file plus flag overrides; flags win.
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    nb: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    streams: Option<usize>,
    #[arg(long, conflicts_with = "capacity_fraction")]
    capacity_bytes: Option<u64>,
    #[arg(long)]
    capacity_fraction: Option<f64>,
    /// fp64, 2p, 3p or 4p.
    #[arg(long)]
    precision_mode: Option<PrecisionMode>,
    #[arg(long)]
    eps_target: Option<f64>,
    /// Matérn parameters `sigma_sq,range,smoothness`.
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    nugget: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated link bandwidth in bytes per second.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Simulated per-transfer latency in seconds (with --bandwidth).
    #[arg(long, requires = "bandwidth", default_value_t = 0.0)]
    latency: f64,
    /// lru or fifo.
    #[arg(long)]
    eviction: Option<EvictionKind>,
    /// Factorize this tile dump instead of a generated covariance.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[arg(long)]
    precision_map: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            n => c.n,
            nb => c.nb,
            variant => c.variant,
            devices => c.devices,
            streams => c.streams_per_device,
            precision_mode => c.precision_mode,
            eps_target => c.eps_target,
            nugget => c.nugget,
            seed => c.seed,
            eviction => c.eviction,
        }
        if let Some(b) = self.capacity_bytes {
            c.capacity_bytes = Some(b);
            c.capacity_fraction = None;
        }
        if let Some(f) = self.capacity_fraction {
            c.capacity_fraction = Some(f);
            c.capacity_bytes = None;
        }
        if let Some(t) = self.theta {
            c.theta = t.try_into().map_err(|t: Vec<f64>| {
                oocchol::Error::InvalidParameter(format!("--theta needs 3 values, got {}", t.len()))
            })?;
        }
        if let Some(bytes_per_second) = self.bandwidth {
            c.bandwidth_model = Some(BandwidthModel { bytes_per_second, latency_seconds: self.latency });
        }
        if self.matrix.is_some() {
            c.matrix = self.matrix;
        }
        let o = &mut c.output;
        for (flag, slot) in [
            (self.report, &mut o.report),
            (self.trace, &mut o.trace),
            (self.ledger, &mut o.ledger),
            (self.precision_map, &mut o.precision_map),
        ] {
            if flag.is_some() {
                *slot = flag;
            }
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Factor(args) => {
            commands::factor(&args.resolve()?)?;
        }
        Command::Sweep { config, out } => {
            let sweep = SweepConfig::from_file(&config)?;
            let failed = commands::sweep(&sweep, &out)?;
            if failed > 0 {
                return Err(CliError {
                    kind: "SweepIncomplete",
                    message: format!("{failed} sweep run(s) failed; see the status column of {}", out.display()),
                });
            }
        }
        Command::RenderMap { map, ppm, cell } => {
            let text = commands::render_map(&map, ppm.as_deref(), cell)?;
            std::io::stdout().lock().write_all(text.as_bytes())?;
        }
        Command::Gen { run, locations, matrix_out } => {
            commands::gen(&run.resolve()?, locations.as_deref(), matrix_out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let obj = serde_json::json!({ "error": { "kind": e.kind, "message": e.message } });
            eprintln!("{obj}");
            ExitCode::FAILURE
        }
    }
}
