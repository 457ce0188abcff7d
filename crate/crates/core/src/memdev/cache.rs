use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::precision::Precision;
use crate::tile::{TileBuffer, TileIndex};

/// Opaque handle of a device-resident tile copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotHandle(pub u64);

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub slot: SlotHandle,
    pub data: Arc<TileBuffer>,
    pub precision: Precision,
    pub bytes: u64,
    pub pins: u32,
    pub last_use: u64,
    pub inserted: u64,
}

/// Chooses which unpinned entry to evict.
pub trait EvictionPolicy: fmt::Debug + Send + Sync {
    fn select_victim(&self, candidates: &mut dyn Iterator<Item = (TileIndex, &CacheEntry)>) -> Option<TileIndex>;
}

/// Least recently used.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lru;

impl EvictionPolicy for Lru {
    fn select_victim(&self, candidates: &mut dyn Iterator<Item = (TileIndex, &CacheEntry)>) -> Option<TileIndex> {
        candidates.min_by_key(|(_, e)| e.last_use).map(|(idx, _)| idx)
    }
}

/// Oldest insertion first.
#[derive(Debug, Clone, Copy, Default)]
pub struct Fifo;

impl EvictionPolicy for Fifo {
    fn select_victim(&self, candidates: &mut dyn Iterator<Item = (TileIndex, &CacheEntry)>) -> Option<TileIndex> {
        candidates.min_by_key(|(_, e)| e.inserted).map(|(idx, _)| idx)
    }
}

/// Device-resident tiles by index. Byte accounting lives in the owning
/// arena; the table only tracks which tiles are present and their state.
#[derive(Debug)]
pub struct CacheTable {
    entries: HashMap<TileIndex, CacheEntry>,
    tick: u64,
    next_slot: u64,
    policy: Box<dyn EvictionPolicy>,
}

impl Default for CacheTable {
    fn default() -> Self {
        Self::new(Box::new(Lru))
    }
}

impl CacheTable {
    pub fn new(policy: Box<dyn EvictionPolicy>) -> Self {
        CacheTable { entries: HashMap::new(), tick: 0, next_slot: 0, policy }
    }

    fn bump(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, idx: TileIndex) -> bool {
        self.entries.contains_key(&idx)
    }

    pub fn get(&self, idx: TileIndex) -> Option<&CacheEntry> {
        self.entries.get(&idx)
    }

    pub fn entries(&self) -> impl Iterator<Item = (TileIndex, &CacheEntry)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// Sum of entry sizes.
    pub fn bytes(&self) -> u64 {
        self.entries.values().map(|e| e.bytes).sum()
    }

    pub fn pinned_bytes(&self) -> u64 {
        self.entries.values().filter(|e| e.pins > 0).map(|e| e.bytes).sum()
    }

    /// Marks a hit: refreshes recency and returns the slot.
    pub fn touch(&mut self, idx: TileIndex) -> Option<SlotHandle> {
        let t = self.bump();
        self.entries.get_mut(&idx).map(|e| {
            e.last_use = t;
            e.slot
        })
    }

    pub fn insert(&mut self, idx: TileIndex, data: Arc<TileBuffer>) -> SlotHandle {
        assert!(!self.entries.contains_key(&idx), "tile {idx:?} cached twice");
        let t = self.bump();
        let slot = SlotHandle(self.next_slot);
        self.next_slot += 1;
        let entry = CacheEntry {
            slot,
            precision: data.precision(),
            bytes: data.bytes(),
            data,
            pins: 0,
            last_use: t,
            inserted: t,
        };
        self.entries.insert(idx, entry);
        slot
    }

    pub fn remove(&mut self, idx: TileIndex) -> Option<CacheEntry> {
        self.entries.remove(&idx)
    }

    /// Unpinned entry the policy would evict next.
    pub fn select_victim(&self) -> Option<TileIndex> {
        let mut unpinned = self.entries.iter().filter(|(_, e)| e.pins == 0).map(|(k, v)| (*k, v));
        self.policy.select_victim(&mut unpinned)
    }

    pub fn pin(&mut self, idx: TileIndex) -> Result<()> {
        let e = self.entries.get_mut(&idx).ok_or(Error::NotCached(idx))?;
        e.pins += 1;
        Ok(())
    }

    pub fn unpin(&mut self, idx: TileIndex) -> Result<()> {
        let e = self.entries.get_mut(&idx).ok_or(Error::NotCached(idx))?;
        if e.pins == 0 {
            return Err(Error::InvalidParameter(format!("tile {idx:?} is not pinned")));
        }
        e.pins -= 1;
        Ok(())
    }

    pub fn pin_count(&self, idx: TileIndex) -> u32 {
        self.entries.get(&idx).map_or(0, |e| e.pins)
    }

    /// Replaces the device copy of a cached tile (a kernel wrote it).
    pub fn update(&mut self, idx: TileIndex, data: Arc<TileBuffer>) -> Result<()> {
        let e = self.entries.get_mut(&idx).ok_or(Error::NotCached(idx))?;
        assert_eq!(e.bytes, data.bytes(), "tile size changed in place");
        e.data = data;
        Ok(())
    }
}
