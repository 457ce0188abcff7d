//! Static 1D block-cyclic scheduling of the left-looking tile Cholesky
//! factorization over simulated devices and streams.
//!
//! Every lower-triangular tile is one task: its pending updates (SYRK or
//! GEMM, one per column to its left) followed by its factorization kernel
//! (POTRF or TRSM). Tasks are enumerated column by column and dealt to
//! global streams round-robin; global stream `g` lives on device `g % D`.
//! Dependencies are enforced with a write-once progress table.

mod progress;
mod run;
mod tasks;
mod trace;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memdev::BandwidthModel;

pub use progress::{await_ready, ProgressTable};
pub use run::{run_factorization, working_set_bytes, Factorization, RunStats};
pub use tasks::{enumerate_tasks, TaskDescriptor, TaskKind};
pub use trace::{EventKind, EventTrace, TraceEvent};

/// Data-movement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One stream per device; every kernel stages its inputs and writes its
    /// output back.
    Sync,
    /// Like `Sync`, but with several streams per device.
    Async,
    /// `Async`, with the accumulator staged once per task and written back once.
    V1,
    /// `V1`, with accumulators and update operands served from a per-device
    /// LRU cache. The TRSM diagonal is still fetched once per task.
    V2,
    /// `V2`, with the TRSM diagonal cached too and pinned until every TRSM
    /// of its column on the device has finished.
    V3,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Sync, Variant::Async, Variant::V1, Variant::V2, Variant::V3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sync => "Sync",
            Variant::Async => "Async",
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
        }
    }

    pub(crate) fn uses_cache(self) -> bool {
        matches!(self, Variant::V2 | Variant::V3)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionKind {
    #[default]
    Lru,
    Fifo,
}

impl FromStr for EvictionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lru" => Ok(EvictionKind::Lru),
            "fifo" => Ok(EvictionKind::Fifo),
            _ => Err(Error::InvalidParameter(format!("unknown eviction policy {s:?}"))),
        }
    }
}

pub const DEFAULT_WATCHDOG: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub devices: usize,
    pub streams_per_device: usize,
    /// Per-device capacity.
    pub capacity_bytes: u64,
    pub variant: Variant,
    pub bandwidth: Option<BandwidthModel>,
    pub eviction: EvictionKind,
    pub watchdog: Duration,
}

impl ClusterConfig {
    pub fn new(devices: usize, streams_per_device: usize, capacity_bytes: u64, variant: Variant) -> Self {
        ClusterConfig {
            devices,
            streams_per_device,
            capacity_bytes,
            variant,
            bandwidth: None,
            eviction: EvictionKind::Lru,
            watchdog: DEFAULT_WATCHDOG,
        }
    }

    /// Streams actually used per device (`Sync` always runs one).
    pub fn effective_streams(&self) -> usize {
        if self.variant == Variant::Sync {
            1
        } else {
            self.streams_per_device
        }
    }

    pub fn total_streams(&self) -> usize {
        self.devices * self.effective_streams()
    }
}
