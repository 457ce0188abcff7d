use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::precision::Precision;
use crate::tile::TileIndex;

/// Process-wide monotonic clock; timestamps are seconds since creation.
#[derive(Debug, Clone, Copy)]
pub struct TraceClock {
    origin: Instant,
}

impl TraceClock {
    pub fn start() -> Self {
        TraceClock { origin: Instant::now() }
    }

    pub fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Host to device.
    C2G,
    /// Device to host.
    G2C,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferEvent {
    pub direction: Direction,
    pub tile: TileIndex,
    pub precision: Precision,
    pub bytes: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub device: usize,
    pub stream: usize,
}

/// Per-device transfer counters and event log.
#[derive(Debug, Clone, Default)]
pub struct TransferLedger {
    c2g_bytes: u64,
    g2c_bytes: u64,
    events: Vec<TransferEvent>,
}

#[derive(Serialize)]
struct EventLine {
    dir: Direction,
    row: usize,
    col: usize,
    bytes: u64,
    t0: f64,
    t1: f64,
    dev: usize,
}

impl TransferLedger {
    pub fn record(&mut self, event: TransferEvent) {
        match event.direction {
            Direction::C2G => self.c2g_bytes += event.bytes,
            Direction::G2C => self.g2c_bytes += event.bytes,
        }
        self.events.push(event);
    }

    pub fn c2g_bytes(&self) -> u64 {
        self.c2g_bytes
    }

    pub fn g2c_bytes(&self) -> u64 {
        self.g2c_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.c2g_bytes + self.g2c_bytes
    }

    pub fn events(&self) -> &[TransferEvent] {
        &self.events
    }

    /// One JSON object per line:
    /// `{"dir","row","col","bytes","t0","t1","dev"}`.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.events {
            let line = EventLine {
                dir: e.direction,
                row: e.tile.row,
                col: e.tile.col,
                bytes: e.bytes,
                t0: e.t_start,
                t1: e.t_end,
                dev: e.device,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
