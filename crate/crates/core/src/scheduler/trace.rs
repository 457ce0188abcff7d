use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::kernels::KernelKind;
use crate::memdev::{Direction, TransferEvent};
use crate::precision::Precision;
use crate::tile::TileIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventKind {
    #[serde(rename = "POTRF")]
    Potrf,
    #[serde(rename = "TRSM")]
    Trsm,
    #[serde(rename = "SYRK")]
    Syrk,
    #[serde(rename = "GEMM")]
    Gemm,
    C2G,
    G2C,
}

impl From<KernelKind> for EventKind {
    fn from(k: KernelKind) -> Self {
        match k {
            KernelKind::Potrf => EventKind::Potrf,
            KernelKind::Trsm => EventKind::Trsm,
            KernelKind::Syrk => EventKind::Syrk,
            KernelKind::Gemm => EventKind::Gemm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub tile: TileIndex,
    pub device: usize,
    /// Global stream id.
    pub stream: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub precision: Precision,
}

impl From<&TransferEvent> for TraceEvent {
    fn from(e: &TransferEvent) -> Self {
        TraceEvent {
            kind: match e.direction {
                Direction::C2G => EventKind::C2G,
                Direction::G2C => EventKind::G2C,
            },
            tile: e.tile,
            device: e.device,
            stream: e.stream,
            t_start: e.t_start,
            t_end: e.t_end,
            precision: e.precision,
        }
    }
}

#[derive(Serialize)]
struct EventLine {
    kind: EventKind,
    row: usize,
    col: usize,
    dev: usize,
    stream: usize,
    t0: f64,
    t1: f64,
    prec: Precision,
}

/// Timestamped kernel and transfer events of one run, ordered by start time.
#[derive(Debug, Clone, Default)]
pub struct EventTrace {
    events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn new(mut events: Vec<TraceEvent>) -> Self {
        events.sort_by(|a, b| {
            a.t_start.total_cmp(&b.t_start).then(a.stream.cmp(&b.stream)).then(a.t_end.total_cmp(&b.t_end))
        });
        EventTrace { events }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// `{"kind","row","col","dev","stream","t0","t1","prec"}` per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.events {
            let line = EventLine {
                kind: e.kind,
                row: e.tile.row,
                col: e.tile.col,
                dev: e.device,
                stream: e.stream,
                t0: e.t_start,
                t1: e.t_end,
                prec: e.precision,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
