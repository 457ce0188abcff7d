use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Affine transfer-time model: `latency + bytes / bandwidth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthModel {
    pub bytes_per_second: f64,
    pub latency_seconds: f64,
}

impl BandwidthModel {
    pub fn seconds_for(&self, bytes: u64) -> f64 {
        self.latency_seconds + bytes as f64 / self.bytes_per_second
    }
}

/// Waits out the modeled duration of a `bytes`-sized transfer and returns it.
/// Without a model the delay is zero.
pub fn simulate_transfer_delay(model: Option<&BandwidthModel>, bytes: u64) -> f64 {
    let Some(model) = model else { return 0.0 };
    let secs = model.seconds_for(bytes);
    if secs > 0.0 {
        let deadline = Instant::now() + Duration::from_secs_f64(secs);
        // Coarse sleep, then yield until the deadline for sub-millisecond accuracy.
        if secs > 2e-3 {
            std::thread::sleep(Duration::from_secs_f64(secs - 1e-3));
        }
        while Instant::now() < deadline {
            std::thread::yield_now();
        }
    }
    secs
}

/// Byte-accounted device memory.
#[derive(Debug, Clone)]
pub struct DeviceArena {
    pub device_id: usize,
    capacity_bytes: u64,
    used_bytes: u64,
    peak_bytes: u64,
    pub bandwidth: Option<BandwidthModel>,
}

impl DeviceArena {
    pub fn new(device_id: usize, capacity_bytes: u64, bandwidth: Option<BandwidthModel>) -> Self {
        DeviceArena { device_id, capacity_bytes, used_bytes: 0, peak_bytes: 0, bandwidth }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    /// High-water mark of `used_bytes`.
    pub fn peak_bytes(&self) -> u64 {
        self.peak_bytes
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity_bytes - self.used_bytes
    }

    /// Claims `bytes`; false (and no change) if they do not fit.
    pub fn reserve(&mut self, bytes: u64) -> bool {
        if bytes > self.free_bytes() {
            return false;
        }
        self.used_bytes += bytes;
        self.peak_bytes = self.peak_bytes.max(self.used_bytes);
        true
    }

    pub fn release(&mut self, bytes: u64) {
        assert!(bytes <= self.used_bytes, "releasing more bytes than reserved");
        self.used_bytes -= bytes;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserve_and_release() {
        let mut a = DeviceArena::new(0, 100, None);
        assert!(a.reserve(60));
        assert!(!a.reserve(41));
        assert_eq!(a.used_bytes(), 60);
        assert!(a.reserve(40));
        assert_eq!(a.free_bytes(), 0);
        a.release(100);
        assert_eq!(a.used_bytes(), 0);
    }

    #[test]
    fn delay_model() {
        assert_eq!(simulate_transfer_delay(None, 1 << 30), 0.0);
        let gb = BandwidthModel { bytes_per_second: 1e9, latency_seconds: 0.0 };
        assert_eq!(gb.seconds_for(1_000_000_000), 1.0);

        let fast = BandwidthModel { bytes_per_second: 64e9, latency_seconds: 10e-6 };
        let bytes = 64_000_000;
        let expected = 1.01e-3;
        assert!((fast.seconds_for(bytes) - expected).abs() < 1e-12);
        let start = Instant::now();
        let modeled = simulate_transfer_delay(Some(&fast), bytes);
        let measured = start.elapsed().as_secs_f64();
        assert!((modeled - expected).abs() < 1e-12);
        assert!(measured >= expected && measured <= expected * 1.2 + 2e-3, "measured {measured}");
    }
}
