//! Simulated device memory: capacity-bounded arenas, the tile cache table,
//! pinning and eviction, and exact host/device transfer accounting.
//!
//! A device is ordinary host memory. A "transfer" shares or copies a tile
//! buffer, optionally waits out a modeled bandwidth delay, and is always
//! recorded in the device's [`TransferLedger`].

mod arena;
mod cache;
mod device;
mod host;
mod ledger;

pub use arena::{simulate_transfer_delay, BandwidthModel, DeviceArena};
pub use cache::{CacheEntry, CacheTable, EvictionPolicy, Fifo, Lru, SlotHandle};
pub use device::DeviceState;
pub use host::HostTiles;
pub use ledger::{Direction, TraceClock, TransferEvent, TransferLedger};
