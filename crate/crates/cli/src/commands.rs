use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use oocchol::kernels::KernelKind;
use oocchol::tile::lower_indices;
use oocchol::{
    build_covariance, factorization_residual, gen_locations, kl_divergence, log_likelihood, plan_precisions,
    run_factorization, ClusterConfig, Error, Factorization, PrecisionMap, SpatialLocations, TiledSymmetricMatrix,
    Variant,
};
use serde::Serialize;

use crate::config::{RunConfig, SweepConfig};
use crate::render;

/// Failure reported to the user as a JSON error object.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError { kind: e.kind(), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError { kind: "Io", message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_matrix(cfg: &RunConfig) -> CliResult<TiledSymmetricMatrix> {
    match &cfg.matrix {
        Some(path) => {
            let a = TiledSymmetricMatrix::read_dump(BufReader::new(File::open(path)?))?;
            if a.n() != cfg.n || a.nb() != cfg.nb {
                warn!("matrix dump has n={} nb={}; overriding the configured n={} nb={}", a.n(), a.nb(), cfg.n, cfg.nb);
            }
            Ok(a)
        }
        None => {
            let locs = gen_locations(cfg.n, cfg.seed);
            Ok(build_covariance(&locs, &cfg.matern(), cfg.nb)?)
        }
    }
}

#[derive(Debug, Serialize)]
struct DeviceTraffic {
    device: usize,
    c2g_bytes: u64,
    g2c_bytes: u64,
    peak_bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Report {
    n: usize,
    nb: usize,
    nt: usize,
    variant: Variant,
    devices: usize,
    streams_per_device: usize,
    capacity_bytes: u64,
    precision_mode: oocchol::PrecisionMode,
    eps_target: f64,
    theta: [f64; 3],
    nugget: f64,
    seed: u64,
    residual: f64,
    log_det: f64,
    loglik: f64,
    wall_seconds: f64,
    c2g_bytes: u64,
    g2c_bytes: u64,
    total_bytes: u64,
    per_device: Vec<DeviceTraffic>,
    tile_counts: BTreeMap<String, usize>,
    diagonal_tile_counts: BTreeMap<String, usize>,
    kernel_counts: BTreeMap<String, usize>,
    /// Nominal Cholesky flop count `n³/3`.
    flop_count: f64,
    /// `flop_count / wall_seconds`, in units of 10⁹.
    effective_gflops: f64,
}

fn tile_counts(pmap: &PrecisionMap, diagonal_only: bool) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = pmap.allowed().iter().map(|p| (p.to_string(), 0)).collect();
    for (idx, p) in pmap.iter() {
        if !diagonal_only || idx.is_diagonal() {
            *counts.entry(p.to_string()).or_default() += 1;
        }
    }
    counts
}

fn build_report(
    cfg: &RunConfig,
    cluster: &ClusterConfig,
    a: &TiledSymmetricMatrix,
    pmap: &PrecisionMap,
    out: &Factorization,
) -> CliResult<Report> {
    let ll = log_likelihood(&out.factor, None)?;
    let n = a.n();
    let flop_count = (n as f64).powi(3) / 3.0;
    let wall = out.stats.wall_seconds;
    Ok(Report {
        n,
        nb: a.nb(),
        nt: a.nt(),
        variant: cfg.variant,
        devices: cfg.devices,
        streams_per_device: cluster.effective_streams(),
        capacity_bytes: cluster.capacity_bytes,
        precision_mode: cfg.precision_mode,
        eps_target: cfg.eps_target,
        theta: cfg.theta,
        nugget: cfg.nugget,
        seed: cfg.seed,
        residual: factorization_residual(a, &out.factor)?,
        log_det: ll.log_det,
        loglik: ll.loglik,
        wall_seconds: wall,
        c2g_bytes: out.c2g_bytes(),
        g2c_bytes: out.g2c_bytes(),
        total_bytes: out.total_bytes(),
        per_device: out
            .ledgers
            .iter()
            .zip(&out.stats.peak_device_bytes)
            .enumerate()
            .map(|(device, (l, &peak_bytes))| DeviceTraffic {
                device,
                c2g_bytes: l.c2g_bytes(),
                g2c_bytes: l.g2c_bytes(),
                peak_bytes,
            })
            .collect(),
        tile_counts: tile_counts(pmap, false),
        diagonal_tile_counts: tile_counts(pmap, true),
        kernel_counts: KernelKind::ALL.iter().map(|&k| (k.name().to_string(), out.stats.kernel_count(k))).collect(),
        flop_count,
        effective_gflops: if wall > 0.0 { flop_count / wall / 1e9 } else { 0.0 },
    })
}

pub fn factor(cfg: &RunConfig) -> CliResult<Report> {
    cfg.validate()?;
    let cluster = cfg.cluster()?;
    let a = load_matrix(cfg)?;
    let pmap = plan_precisions(&a, cfg.eps_target, &cfg.precision_mode.allowed())?;
    info!("planned {} tiles: {:?}", pmap.iter().count(), pmap.counts());
    let out = run_factorization(a.clone(), &pmap, &cluster)?;
    info!("factorized n={} in {:.3}s, {} bytes moved", a.n(), out.stats.wall_seconds, out.total_bytes());
    let report = build_report(cfg, &cluster, &a, &pmap, &out)?;

    let o = &cfg.output;
    if let Some(path) = &o.trace {
        let mut w = create(path)?;
        out.trace.write_jsonl(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &o.ledger {
        let mut w = create(path)?;
        for l in &out.ledgers {
            l.write_jsonl(&mut w)?;
        }
        w.flush()?;
    }
    if let Some(path) = &o.precision_map {
        std::fs::write(path, pmap.to_json())?;
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &o.report {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{json}")?;
            w.flush()?;
        }
        None => writeln!(std::io::stdout().lock(), "{json}")?,
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    n: usize,
    nb: usize,
    variant: Variant,
    devices: usize,
    eps_target: f64,
    theta: String,
    c2g: Option<u64>,
    g2c: Option<u64>,
    total_bytes: Option<u64>,
    kl: Option<f64>,
    wall_seconds: Option<f64>,
    precision_mode: oocchol::PrecisionMode,
    streams_per_device: usize,
    status: String,
}

/// Problems are identified by everything that determines the matrix.
type ProblemKey = (usize, usize, [u64; 3], u64, u64);

/// Matrices and their exact (all-FP64) log-likelihoods, shared by sweep rows
/// that differ only in how they are factorized.
#[derive(Default)]
struct ProblemCache {
    problems: HashMap<ProblemKey, (TiledSymmetricMatrix, f64)>,
}

impl ProblemCache {
    fn get(&mut self, cfg: &RunConfig) -> CliResult<&(TiledSymmetricMatrix, f64)> {
        let key = (cfg.n, cfg.nb, cfg.theta.map(f64::to_bits), cfg.nugget.to_bits(), cfg.seed);
        match self.problems.entry(key) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => {
                let a = load_matrix(cfg)?;
                let exact_map = PrecisionMap::uniform(a.nt(), oocchol::Precision::Fp64);
                let reference = ClusterConfig::new(1, 1, u64::MAX, Variant::V1);
                let l = run_factorization(a.clone(), &exact_map, &reference)?.factor;
                let exact = log_likelihood(&l, None)?.loglik;
                Ok(e.insert((a, exact)))
            }
        }
    }
}

fn sweep_run(cache: &mut ProblemCache, cfg: &RunConfig) -> CliResult<(Factorization, f64)> {
    cfg.validate()?;
    let cluster = cfg.cluster()?;
    let (a, exact) = cache.get(cfg)?;
    let pmap = plan_precisions(a, cfg.eps_target, &cfg.precision_mode.allowed())?;
    let out = run_factorization(a.clone(), &pmap, &cluster)?;
    let kl = kl_divergence(*exact, log_likelihood(&out.factor, None)?.loglik);
    Ok((out, kl))
}

/// Runs every grid point and writes one CSV row each. Returns the number of
/// failed runs; failures are recorded in the `status` column.
pub fn sweep(sweep: &SweepConfig, out: &Path) -> CliResult<usize> {
    let runs = sweep.expand();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(out)?);
    w.write_record([
        "n",
        "nb",
        "variant",
        "devices",
        "eps_target",
        "theta",
        "c2g",
        "g2c",
        "total_bytes",
        "kl",
        "wall_seconds",
        "precision_mode",
        "streams_per_device",
        "status",
    ])?;
    let mut cache = ProblemCache::default();
    let mut failed = 0;
    for (i, cfg) in runs.iter().enumerate() {
        info!("sweep run {}/{}: n={} variant={} devices={}", i + 1, runs.len(), cfg.n, cfg.variant, cfg.devices);
        let mut row = SweepRow {
            n: cfg.n,
            nb: cfg.nb,
            variant: cfg.variant,
            devices: cfg.devices,
            eps_target: cfg.eps_target,
            theta: cfg.theta.map(|t| t.to_string()).join(";"),
            c2g: None,
            g2c: None,
            total_bytes: None,
            kl: None,
            wall_seconds: None,
            precision_mode: cfg.precision_mode,
            streams_per_device: cfg.streams_per_device,
            status: "ok".into(),
        };
        match sweep_run(&mut cache, cfg) {
            Ok((f, kl)) => {
                row.c2g = Some(f.c2g_bytes());
                row.g2c = Some(f.g2c_bytes());
                row.total_bytes = Some(f.total_bytes());
                row.kl = Some(kl);
                row.wall_seconds = Some(f.stats.wall_seconds);
            }
            Err(e) => {
                warn!("sweep run {} failed: {}", i + 1, e.message);
                failed += 1;
                row.status = format!("error:{}", e.kind);
            }
        }
        w.serialize(&row)?;
    }
    w.flush()?;
    Ok(failed)
}

pub fn render_map(map_path: &Path, ppm: Option<&Path>, cell: usize) -> CliResult<String> {
    let text = std::fs::read_to_string(map_path)?;
    let map = PrecisionMap::from_json(&text)?;
    if let Some(path) = ppm {
        if cell == 0 {
            return Err(Error::InvalidParameter("cell size must be positive".into()).into());
        }
        std::fs::write(path, render::ppm_map(&map, cell))?;
    }
    Ok(format!("{}{}\n", render::ascii_map(&map), render::legend(&map)))
}

pub fn gen(cfg: &RunConfig, locations: Option<&Path>, matrix: Option<&Path>) -> CliResult<()> {
    if locations.is_none() && matrix.is_none() {
        return Err(Error::InvalidParameter("gen needs --locations and/or --matrix".into()).into());
    }
    if cfg.n == 0 || cfg.nb == 0 {
        return Err(Error::InvalidParameter("n and nb must be positive".into()).into());
    }
    let locs: SpatialLocations = gen_locations(cfg.n, cfg.seed);
    if let Some(path) = locations {
        let mut w = create(path)?;
        locs.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = matrix {
        let a = build_covariance(&locs, &cfg.matern(), cfg.nb)?;
        let mut w = create(path)?;
        a.write_dump(&mut w)?;
        w.flush()?;
        info!("wrote {} tiles ({} bytes of matrix data)", lower_indices(a.nt()).count(), a.stored_bytes());
    }
    Ok(())
}
