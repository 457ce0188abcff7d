use std::sync::Arc;

use super::arena::{simulate_transfer_delay, DeviceArena};
use super::cache::{CacheTable, SlotHandle};
use super::host::HostTiles;
use super::ledger::{Direction, TraceClock, TransferEvent, TransferLedger};
use crate::error::{Error, Result};
use crate::precision::Precision;
use crate::tile::{convert_tile, TileBuffer, TileIndex};

/// Everything one simulated device owns. Callers serialize access (one
/// mutex per device); all methods assume exclusive use.
///
/// Arena usage is the cache's bytes plus any private staging buffers that
/// streams hold outside the cache.
#[derive(Debug)]
pub struct DeviceState {
    pub arena: DeviceArena,
    pub cache: CacheTable,
    pub ledger: TransferLedger,
    private_bytes: u64,
}

impl DeviceState {
    pub fn new(arena: DeviceArena, cache: CacheTable) -> Self {
        DeviceState { arena, cache, ledger: TransferLedger::default(), private_bytes: 0 }
    }

    pub fn device_id(&self) -> usize {
        self.arena.device_id
    }

    pub fn private_bytes(&self) -> u64 {
        self.private_bytes
    }

    /// Capacity and accounting invariants; checked after every mutation in
    /// debug builds.
    pub fn check_invariants(&self) {
        assert!(self.arena.used_bytes() <= self.arena.capacity_bytes());
        assert_eq!(self.cache.bytes() + self.private_bytes, self.arena.used_bytes());
    }

    fn debug_check(&self) {
        if cfg!(debug_assertions) {
            self.check_invariants();
        }
    }

    fn transfer(
        &mut self,
        direction: Direction,
        tile: TileIndex,
        precision: Precision,
        bytes: u64,
        stream: usize,
        clock: &TraceClock,
    ) {
        let t_start = clock.now();
        simulate_transfer_delay(self.arena.bandwidth.as_ref(), bytes);
        let t_end = clock.now();
        self.ledger.record(TransferEvent {
            direction,
            tile,
            precision,
            bytes,
            t_start,
            t_end,
            device: self.arena.device_id,
            stream,
        });
    }

    /// Evicts unpinned entries until `bytes` fit, then reserves them.
    fn make_room(&mut self, bytes: u64) -> Result<()> {
        while self.arena.free_bytes() < bytes {
            let Some(victim) = self.cache.select_victim() else {
                return Err(Error::CapacityExhausted {
                    device: self.arena.device_id,
                    requested: bytes,
                    capacity: self.arena.capacity_bytes(),
                    pinned: self.cache.pinned_bytes() + self.private_bytes,
                });
            };
            let entry = self.cache.remove(victim).expect("victim is cached");
            self.arena.release(entry.bytes);
        }
        let ok = self.arena.reserve(bytes);
        debug_assert!(ok);
        Ok(())
    }

    fn host_copy(host: &HostTiles, idx: TileIndex, prec: Precision) -> Arc<TileBuffer> {
        let t = host.read(idx);
        if t.precision() == prec {
            t
        } else {
            Arc::new(convert_tile(&t, prec))
        }
    }

    /// Returns the cached slot of `idx`, copying it from the host (and
    /// evicting least-recently-used unpinned tiles) on a miss.
    pub fn load_tile(
        &mut self,
        host: &HostTiles,
        idx: TileIndex,
        prec: Precision,
        stream: usize,
        clock: &TraceClock,
    ) -> Result<SlotHandle> {
        if let Some(slot) = self.cache.touch(idx) {
            return Ok(slot);
        }
        let bytes = (host.nb() * host.nb()) as u64 * prec.bytes_per_element();
        self.make_room(bytes)?;
        let data = Self::host_copy(host, idx, prec);
        self.transfer(Direction::C2G, idx, prec, bytes, stream, clock);
        let slot = self.cache.insert(idx, data);
        self.debug_check();
        Ok(slot)
    }

    pub fn pin(&mut self, idx: TileIndex) -> Result<()> {
        self.cache.pin(idx)
    }

    pub fn unpin(&mut self, idx: TileIndex) -> Result<()> {
        self.cache.unpin(idx)
    }

    pub fn cached_data(&self, idx: TileIndex) -> Result<Arc<TileBuffer>> {
        self.cache.get(idx).map(|e| e.data.clone()).ok_or(Error::NotCached(idx))
    }

    pub fn update(&mut self, idx: TileIndex, data: Arc<TileBuffer>) -> Result<()> {
        self.cache.update(idx, data)
    }

    /// Copies the cached device tile back to the host.
    pub fn writeback(&mut self, host: &HostTiles, idx: TileIndex, stream: usize, clock: &TraceClock) -> Result<()> {
        let entry = self.cache.get(idx).ok_or(Error::NotCached(idx))?;
        let (data, bytes) = (entry.data.clone(), entry.bytes);
        self.transfer(Direction::G2C, idx, data.precision(), bytes, stream, clock);
        host.write(idx, data);
        Ok(())
    }

    /// Copies a tile into a stream-private device buffer outside the cache.
    pub fn stage_private(
        &mut self,
        host: &HostTiles,
        idx: TileIndex,
        prec: Precision,
        stream: usize,
        clock: &TraceClock,
    ) -> Result<Arc<TileBuffer>> {
        let bytes = (host.nb() * host.nb()) as u64 * prec.bytes_per_element();
        self.make_room(bytes)?;
        self.private_bytes += bytes;
        let data = Self::host_copy(host, idx, prec);
        self.transfer(Direction::C2G, idx, prec, bytes, stream, clock);
        self.debug_check();
        Ok(data)
    }

    pub fn release_private(&mut self, bytes: u64) {
        assert!(bytes <= self.private_bytes, "releasing more private bytes than staged");
        self.private_bytes -= bytes;
        self.arena.release(bytes);
        self.debug_check();
    }

    /// Writes a stream-private buffer back to the host.
    pub fn writeback_private(
        &mut self,
        host: &HostTiles,
        idx: TileIndex,
        data: Arc<TileBuffer>,
        stream: usize,
        clock: &TraceClock,
    ) {
        self.transfer(Direction::G2C, idx, data.precision(), data.bytes(), stream, clock);
        host.write(idx, data);
    }
}
