use std::path::{Path, PathBuf};

use oocchol::memdev::BandwidthModel;
use oocchol::scheduler::{working_set_bytes, EvictionKind};
use oocchol::{ClusterConfig, Error, MaternParams, PrecisionMode, Result, Variant};
use serde::{Deserialize, Serialize};

/// One factorization run. Every field has a default, so a config file only
/// needs the keys it changes; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub nb: usize,
    pub variant: Variant,
    pub devices: usize,
    pub streams_per_device: usize,
    /// Per-device capacity in bytes. Exclusive with `capacity_fraction`.
    pub capacity_bytes: Option<u64>,
    /// Per-device capacity as a fraction of the dense FP64 matrix (`8 n²` bytes).
    pub capacity_fraction: Option<f64>,
    pub precision_mode: PrecisionMode,
    pub eps_target: f64,
    /// Matérn `(σ², range, smoothness)`.
    pub theta: [f64; 3],
    pub nugget: f64,
    pub seed: u64,
    pub bandwidth_model: Option<BandwidthModel>,
    pub eviction: EvictionKind,
    /// Load the matrix from a tile dump instead of generating a covariance.
    pub matrix: Option<PathBuf>,
    pub output: OutputPaths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub precision_map: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 1024,
            nb: 128,
            variant: Variant::V3,
            devices: 1,
            streams_per_device: 2,
            capacity_bytes: None,
            capacity_fraction: None,
            precision_mode: PrecisionMode::Fp64,
            eps_target: 1e-8,
            theta: [1.0, 0.02627, 0.5],
            nugget: 0.0,
            seed: 42,
            bandwidth_model: None,
            eviction: EvictionKind::Lru,
            matrix: None,
            output: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn matern(&self) -> MaternParams {
        MaternParams::new(self.theta[0], self.theta[1], self.theta[2]).with_nugget(self.nugget)
    }

    pub fn dense_bytes(&self) -> u64 {
        (self.n * self.n * 8) as u64
    }

    pub fn resolved_capacity(&self) -> Result<u64> {
        match (self.capacity_bytes, self.capacity_fraction) {
            (Some(_), Some(_)) => {
                Err(Error::InvalidParameter("capacity_bytes and capacity_fraction are mutually exclusive".into()))
            }
            (Some(b), None) => Ok(b),
            (None, Some(f)) if f > 0.0 && f.is_finite() => Ok((self.dense_bytes() as f64 * f) as u64),
            (None, Some(f)) => Err(Error::InvalidParameter(format!("capacity_fraction must be positive, got {f}"))),
            (None, None) => Ok(self.dense_bytes()),
        }
    }

    pub fn cluster(&self) -> Result<ClusterConfig> {
        let mut cfg =
            ClusterConfig::new(self.devices, self.streams_per_device, self.resolved_capacity()?, self.variant);
        cfg.bandwidth = self.bandwidth_model;
        cfg.eviction = self.eviction;
        Ok(cfg)
    }

    /// Checks everything that can be checked before building the matrix.
    /// The working-set bound is checked against FP64 tiles, the worst case
    /// of every precision mode.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.nb == 0 {
            return Err(Error::InvalidParameter("n and nb must be positive".into()));
        }
        if self.devices == 0 || self.streams_per_device == 0 {
            return Err(Error::ConfigInfeasible("need at least one device and one stream per device".into()));
        }
        if !(self.eps_target > 0.0) {
            return Err(Error::InvalidParameter(format!("eps_target must be positive, got {}", self.eps_target)));
        }
        self.matern().validate()?;
        let cfg = self.cluster()?;
        let needed = working_set_bytes(self.nb, self.precision_mode.allowed()[0]) * cfg.effective_streams() as u64;
        if cfg.capacity_bytes < needed {
            return Err(Error::ConfigInfeasible(format!(
                "device capacity {} bytes is below the working set of {} bytes",
                cfg.capacity_bytes, needed
            )));
        }
        Ok(())
    }
}

/// Cartesian-product parameter sweep over a base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub axes: SweepAxes,
}

/// Absent axes keep the base value; an empty axis yields no runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub n: Option<Vec<usize>>,
    pub nb: Option<Vec<usize>>,
    pub variant: Option<Vec<Variant>>,
    pub devices: Option<Vec<usize>>,
    pub precision_mode: Option<Vec<PrecisionMode>>,
    pub eps_target: Option<Vec<f64>>,
    pub theta: Option<Vec<[f64; 3]>>,
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Expands the grid in a fixed order: n, nb, theta, precision_mode,
    /// eps_target, variant, devices (last varies fastest).
    pub fn expand(&self) -> Vec<RunConfig> {
        fn axis<T: Clone>(values: &Option<Vec<T>>, base: T) -> Vec<T> {
            values.clone().unwrap_or_else(|| vec![base])
        }
        let b = &self.base;
        let a = &self.axes;
        let mut out = Vec::new();
        for &n in &axis(&a.n, b.n) {
            for &nb in &axis(&a.nb, b.nb) {
                for &theta in &axis(&a.theta, b.theta) {
                    for &precision_mode in &axis(&a.precision_mode, b.precision_mode) {
                        for &eps_target in &axis(&a.eps_target, b.eps_target) {
                            for &variant in &axis(&a.variant, b.variant) {
                                for &devices in &axis(&a.devices, b.devices) {
                                    out.push(RunConfig {
                                        n,
                                        nb,
                                        theta,
                                        precision_mode,
                                        eps_target,
                                        variant,
                                        devices,
                                        ..b.clone()
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
