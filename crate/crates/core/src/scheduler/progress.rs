use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::tile::{lower_tile_count, packed_index, TileIndex};

/// Write-once readiness flags for every lower-triangular tile.
///
/// Setting a flag publishes the tile with release ordering; a waiter that
/// observes it (acquire) sees the producer's host write-back.
#[derive(Debug)]
pub struct ProgressTable {
    nt: usize,
    flags: Vec<AtomicBool>,
    aborted: AtomicBool,
    lock: Mutex<()>,
    cond: Condvar,
}

impl ProgressTable {
    pub fn new(nt: usize) -> Self {
        ProgressTable {
            nt,
            flags: (0..lower_tile_count(nt)).map(|_| AtomicBool::new(false)).collect(),
            aborted: AtomicBool::new(false),
            lock: Mutex::new(()),
            cond: Condvar::new(),
        }
    }

    pub fn is_ready(&self, idx: TileIndex) -> bool {
        self.flags[packed_index(self.nt, idx)].load(Ordering::Acquire)
    }

    /// Marks `idx` final. Panics if it was already set.
    pub fn set_ready(&self, idx: TileIndex) {
        let was = self.flags[packed_index(self.nt, idx)].swap(true, Ordering::AcqRel);
        assert!(!was, "ready flag of tile {idx:?} set twice");
        let _guard = self.lock.lock().expect("progress lock poisoned");
        self.cond.notify_all();
    }

    /// Wakes every waiter with [`Error::Aborted`].
    pub fn abort(&self) {
        self.aborted.store(true, Ordering::Release);
        let _guard = self.lock.lock().expect("progress lock poisoned");
        self.cond.notify_all();
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.load(Ordering::Acquire)
    }

    pub fn ready_count(&self) -> usize {
        self.flags.iter().filter(|f| f.load(Ordering::Acquire)).count()
    }
}

/// Blocks until `idx` is ready, the run is aborted, or `watchdog` elapses.
pub fn await_ready(table: &ProgressTable, idx: TileIndex, watchdog: Duration) -> Result<()> {
    if table.is_ready(idx) {
        return Ok(());
    }
    let start = Instant::now();
    let mut guard = table.lock.lock().expect("progress lock poisoned");
    loop {
        if table.is_ready(idx) {
            return Ok(());
        }
        if table.is_aborted() {
            return Err(Error::Aborted);
        }
        let elapsed = start.elapsed();
        if elapsed >= watchdog {
            return Err(Error::DeadlineExceeded(idx));
        }
        guard = table.cond.wait_timeout(guard, watchdog - elapsed).expect("progress lock poisoned").0;
    }
}
