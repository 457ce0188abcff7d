use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use super::progress::{await_ready, ProgressTable};
use super::tasks::{enumerate_tasks, TaskDescriptor, TaskKind};
use super::trace::{EventTrace, TraceEvent};
use super::{ClusterConfig, EvictionKind, Variant};
use crate::error::{Error, Result};
use crate::kernels::{gemm_in_place, potrf_in_place, syrk_in_place, trsm_in_place, KernelKind};
use crate::memdev::{CacheTable, DeviceArena, DeviceState, Fifo, HostTiles, Lru, TraceClock, TransferLedger};
use crate::planner::PrecisionMap;
use crate::precision::Precision;
use crate::tile::{TileBuffer, TileIndex, TiledSymmetricMatrix};

/// Result of a factorization run.
#[derive(Debug)]
pub struct Factorization {
    pub factor: TiledSymmetricMatrix,
    pub ledgers: Vec<TransferLedger>,
    pub trace: EventTrace,
    pub stats: RunStats,
}

impl Factorization {
    pub fn c2g_bytes(&self) -> u64 {
        self.ledgers.iter().map(TransferLedger::c2g_bytes).sum()
    }

    pub fn g2c_bytes(&self) -> u64 {
        self.ledgers.iter().map(TransferLedger::g2c_bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.c2g_bytes() + self.g2c_bytes()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub wall_seconds: f64,
    /// Indexed like [`KernelKind::ALL`].
    pub kernel_counts: [usize; 4],
    /// Kernels that started while an input tile from an earlier column was
    /// not yet marked ready. Always zero in a correct run.
    pub dependency_violations: usize,
    /// V3 TRSMs that finished without their column's diagonal hold in place.
    pub diagonal_hold_violations: usize,
    pub peak_device_bytes: Vec<u64>,
}

impl RunStats {
    pub fn kernel_count(&self, kind: KernelKind) -> usize {
        self.kernel_counts[KernelKind::ALL.iter().position(|&k| k == kind).unwrap()]
    }
}

/// Per-stream device memory needed in the worst case: the accumulator, two
/// GEMM operands and a held diagonal tile.
pub fn working_set_bytes(nb: usize, max_precision: Precision) -> u64 {
    4 * (nb * nb) as u64 * max_precision.bytes_per_element()
}

/// Factorizes `a` (overwritten by its Cholesky factor) under the storage
/// precisions of `pmap` and the execution strategy of `cfg`.
pub fn run_factorization(a: TiledSymmetricMatrix, pmap: &PrecisionMap, cfg: &ClusterConfig) -> Result<Factorization> {
    check_config(&a, pmap, cfg)?;
    let start = Instant::now();
    let mut a = a;
    for (idx, p) in pmap.iter() {
        let t = a.tile_mut(idx);
        if t.precision() != p {
            t.quantize_to(p);
        }
    }
    let nt = a.nt();
    let tasks = enumerate_tasks(nt, cfg.total_streams());
    let run = Run::new(a, pmap, cfg, &tasks);

    let results: Vec<std::result::Result<WorkerOutput, WorkerError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.total_streams())
            .map(|stream| {
                let run = &run;
                let tasks = &tasks;
                scope.spawn(move || run.worker(stream, tasks))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });

    let mut events = Vec::new();
    let mut kernel_counts = [0usize; 4];
    let mut failure: Option<(usize, Error)> = None;
    for r in results {
        match r {
            Ok(out) => {
                events.extend(out.events);
                for (c, k) in kernel_counts.iter_mut().zip(out.kernel_counts) {
                    *c += k;
                }
            }
            Err(WorkerError { position, error }) => {
                if error != Error::Aborted && failure.as_ref().is_none_or(|(p, _)| position < *p) {
                    failure = Some((position, error));
                }
            }
        }
    }
    if let Some((_, e)) = failure {
        return Err(e);
    }

    let Run { host, devices, dependency_violations, hold_violations, .. } = run;
    let mut ledgers = Vec::with_capacity(devices.len());
    let mut peak_device_bytes = Vec::with_capacity(devices.len());
    for d in devices {
        let slot = d.into_inner().expect("device lock poisoned");
        slot.state.check_invariants();
        peak_device_bytes.push(slot.state.arena.peak_bytes());
        events.extend(slot.state.ledger.events().iter().map(TraceEvent::from));
        ledgers.push(slot.state.ledger);
    }
    Ok(Factorization {
        factor: host.into_matrix(),
        ledgers,
        trace: EventTrace::new(events),
        stats: RunStats {
            wall_seconds: start.elapsed().as_secs_f64(),
            kernel_counts,
            dependency_violations: dependency_violations.into_inner(),
            diagonal_hold_violations: hold_violations.into_inner(),
            peak_device_bytes,
        },
    })
}

fn check_config(a: &TiledSymmetricMatrix, pmap: &PrecisionMap, cfg: &ClusterConfig) -> Result<()> {
    if cfg.devices == 0 || cfg.streams_per_device == 0 {
        return Err(Error::ConfigInfeasible("need at least one device and one stream per device".into()));
    }
    if pmap.nt() != a.nt() {
        return Err(Error::DimensionMismatch { expected: a.nt(), actual: pmap.nt() });
    }
    let per_stream = working_set_bytes(a.nb(), pmap.max_precision());
    let needed = per_stream * cfg.effective_streams() as u64;
    if cfg.capacity_bytes < needed {
        return Err(Error::ConfigInfeasible(format!(
            "device capacity {} bytes is below the working set of {} streams ({} bytes)",
            cfg.capacity_bytes,
            cfg.effective_streams(),
            needed
        )));
    }
    Ok(())
}

struct WorkerOutput {
    events: Vec<TraceEvent>,
    kernel_counts: [usize; 4],
}

struct WorkerError {
    position: usize,
    error: Error,
}

/// Diagonal-tile hold of one column on one device (V3).
#[derive(Debug, Clone, Copy, Default)]
struct ColumnHold {
    /// TRSMs of the column owned by this device that have not finished.
    remaining: usize,
    held: bool,
}

struct DeviceSlot {
    state: DeviceState,
    holds: Vec<ColumnHold>,
}

struct Run<'a> {
    host: HostTiles,
    pmap: &'a PrecisionMap,
    cfg: &'a ClusterConfig,
    progress: ProgressTable,
    devices: Vec<Mutex<DeviceSlot>>,
    clock: TraceClock,
    dependency_violations: AtomicUsize,
    hold_violations: AtomicUsize,
}

/// How a device-resident input is held while a kernel uses it.
enum Staged {
    /// Stream-private buffer of the given size.
    Private(Arc<TileBuffer>, u64),
    /// Pinned cache entry.
    Cached(TileIndex, Arc<TileBuffer>),
}

impl Staged {
    fn data(&self) -> &TileBuffer {
        match self {
            Staged::Private(d, _) | Staged::Cached(_, d) => d,
        }
    }
}

impl<'a> Run<'a> {
    fn new(a: TiledSymmetricMatrix, pmap: &'a PrecisionMap, cfg: &'a ClusterConfig, tasks: &[TaskDescriptor]) -> Self {
        let nt = a.nt();
        let devices = (0..cfg.devices)
            .map(|d| {
                let policy: Box<dyn crate::memdev::EvictionPolicy> = match cfg.eviction {
                    EvictionKind::Lru => Box::new(Lru),
                    EvictionKind::Fifo => Box::new(Fifo),
                };
                let mut holds = vec![ColumnHold::default(); nt];
                for t in tasks {
                    if t.kind == TaskKind::OffDiagonal && t.owner_stream % cfg.devices == d {
                        holds[t.target.col].remaining += 1;
                    }
                }
                Mutex::new(DeviceSlot {
                    state: DeviceState::new(
                        DeviceArena::new(d, cfg.capacity_bytes, cfg.bandwidth),
                        CacheTable::new(policy),
                    ),
                    holds,
                })
            })
            .collect();
        Run {
            host: HostTiles::from_matrix(a),
            pmap,
            cfg,
            progress: ProgressTable::new(nt),
            devices,
            clock: TraceClock::start(),
            dependency_violations: AtomicUsize::new(0),
            hold_violations: AtomicUsize::new(0),
        }
    }

    fn worker(&self, stream: usize, tasks: &[TaskDescriptor]) -> std::result::Result<WorkerOutput, WorkerError> {
        let mut out = WorkerOutput { events: Vec::new(), kernel_counts: [0; 4] };
        for task in tasks.iter().filter(|t| t.owner_stream == stream) {
            if let Err(error) = self.execute(task, stream, &mut out) {
                self.progress.abort();
                return Err(WorkerError { position: task.position, error });
            }
        }
        Ok(out)
    }

    fn device(&self, stream: usize) -> MutexGuard<'_, DeviceSlot> {
        self.devices[stream % self.cfg.devices].lock().expect("device lock poisoned")
    }

    fn wait(&self, idx: TileIndex) -> Result<()> {
        await_ready(&self.progress, idx, self.cfg.watchdog)
    }

    fn check_ready(&self, inputs: &[TileIndex]) {
        for &idx in inputs {
            if !self.progress.is_ready(idx) {
                self.dependency_violations.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    /// Brings a finished input tile onto the device.
    fn acquire(&self, stream: usize, idx: TileIndex) -> Result<Staged> {
        self.acquire_as(stream, idx, self.cfg.variant.uses_cache())
    }

    fn acquire_as(&self, stream: usize, idx: TileIndex, cached: bool) -> Result<Staged> {
        let prec = self.pmap.get(idx);
        let mut dev = self.device(stream);
        if cached {
            dev.state.load_tile(&self.host, idx, prec, stream, &self.clock)?;
            dev.state.pin(idx)?;
            Ok(Staged::Cached(idx, dev.state.cached_data(idx)?))
        } else {
            let data = dev.state.stage_private(&self.host, idx, prec, stream, &self.clock)?;
            let bytes = data.bytes();
            Ok(Staged::Private(data, bytes))
        }
    }

    fn release(&self, stream: usize, staged: Staged) -> Result<()> {
        let mut dev = self.device(stream);
        match staged {
            Staged::Private(_, bytes) => dev.state.release_private(bytes),
            Staged::Cached(idx, _) => dev.state.unpin(idx)?,
        }
        Ok(())
    }

    /// Stages the accumulator and returns a working copy of it.
    fn stage_accumulator(&self, stream: usize, idx: TileIndex) -> Result<(Staged, TileBuffer)> {
        let staged = self.acquire(stream, idx)?;
        let work = staged.data().clone();
        Ok((staged, work))
    }

    /// Publishes the accumulator to host memory and frees its device slot
    /// (a cached accumulator stays resident, unpinned).
    fn retire_accumulator(&self, stream: usize, idx: TileIndex, staged: Staged, work: TileBuffer) -> Result<()> {
        let mut dev = self.device(stream);
        let data = Arc::new(work);
        match staged {
            Staged::Private(_, bytes) => {
                dev.state.writeback_private(&self.host, idx, data, stream, &self.clock);
                dev.state.release_private(bytes);
            }
            Staged::Cached(cached, _) => {
                dev.state.update(cached, data)?;
                dev.state.writeback(&self.host, cached, stream, &self.clock)?;
                dev.state.unpin(cached)?;
            }
        }
        Ok(())
    }

    fn record(
        &self,
        out: &mut WorkerOutput,
        kind: KernelKind,
        tile: TileIndex,
        stream: usize,
        t_start: f64,
        precision: Precision,
    ) {
        out.kernel_counts[KernelKind::ALL.iter().position(|&k| k == kind).unwrap()] += 1;
        out.events.push(TraceEvent {
            kind: kind.into(),
            tile,
            device: stream % self.cfg.devices,
            stream,
            t_start,
            t_end: self.clock.now(),
            precision,
        });
    }

    fn execute(&self, task: &TaskDescriptor, stream: usize, out: &mut WorkerOutput) -> Result<()> {
        let target = task.target;
        let (m, k) = (target.row, target.col);
        let per_kernel = matches!(self.cfg.variant, Variant::Sync | Variant::Async);
        let diagonal = task.kind == TaskKind::Diagonal;

        let mut acc = if per_kernel { None } else { Some(self.stage_accumulator(stream, target)?) };

        for n in 0..k {
            let row_m = TileIndex::new(m, n);
            self.wait(row_m)?;
            let a_mn = self.acquire(stream, row_m)?;
            let a_kn = if diagonal {
                None
            } else {
                let row_k = TileIndex::new(k, n);
                self.wait(row_k)?;
                Some((row_k, self.acquire(stream, row_k)?))
            };
            if per_kernel {
                acc = Some(self.stage_accumulator(stream, target)?);
            }
            let (_, work) = acc.as_mut().expect("accumulator staged");
            let t0 = self.clock.now();
            match &a_kn {
                None => {
                    self.check_ready(&[row_m]);
                    syrk_in_place(work, a_mn.data());
                    self.record(out, KernelKind::Syrk, target, stream, t0, work.precision());
                }
                Some((row_k, b)) => {
                    self.check_ready(&[row_m, *row_k]);
                    gemm_in_place(work, a_mn.data(), b.data());
                    self.record(out, KernelKind::Gemm, target, stream, t0, work.precision());
                }
            }
            self.release(stream, a_mn)?;
            if let Some((_, b)) = a_kn {
                self.release(stream, b)?;
            }
            if per_kernel {
                let (staged, work) = acc.take().expect("accumulator staged");
                self.retire_accumulator(stream, target, staged, work)?;
            }
        }

        if diagonal {
            if per_kernel {
                acc = Some(self.stage_accumulator(stream, target)?);
            }
            let (_, work) = acc.as_mut().expect("accumulator staged");
            let t0 = self.clock.now();
            potrf_in_place(work).map_err(|e| match e {
                Error::NotPositiveDefinite { pivot_index, .. } => {
                    Error::NotPositiveDefinite { pivot_index, tile: Some(target) }
                }
                other => other,
            })?;
            self.record(out, KernelKind::Potrf, target, stream, t0, work.precision());
        } else {
            let diag = TileIndex::new(k, k);
            self.wait(diag)?;
            let l_kk = self.acquire_diagonal(stream, diag)?;
            if per_kernel {
                acc = Some(self.stage_accumulator(stream, target)?);
            }
            let (_, work) = acc.as_mut().expect("accumulator staged");
            let t0 = self.clock.now();
            self.check_ready(&[diag]);
            trsm_in_place(work, l_kk.data())?;
            self.record(out, KernelKind::Trsm, target, stream, t0, work.precision());
            self.release_diagonal(stream, diag, l_kk)?;
        }

        let (staged, work) = acc.take().expect("accumulator staged");
        self.retire_accumulator(stream, target, staged, work)?;
        self.progress.set_ready(target);
        Ok(())
    }

    /// The TRSM's diagonal operand. Only V3 serves it from the cache (and
    /// holds it there for the rest of the column); other variants fetch a
    /// private copy for every task.
    fn acquire_diagonal(&self, stream: usize, diag: TileIndex) -> Result<Staged> {
        let staged = self.acquire_as(stream, diag, self.cfg.variant == Variant::V3)?;
        if self.cfg.variant == Variant::V3 {
            let mut dev = self.device(stream);
            let hold = &mut dev.holds[diag.col];
            if !hold.held {
                hold.held = true;
                dev.state.pin(diag)?;
            }
        }
        Ok(staged)
    }

    fn release_diagonal(&self, stream: usize, diag: TileIndex, staged: Staged) -> Result<()> {
        self.release(stream, staged)?;
        if self.cfg.variant == Variant::V3 {
            let mut dev = self.device(stream);
            if dev.state.cache.pin_count(diag) == 0 {
                self.hold_violations.fetch_add(1, Ordering::Relaxed);
            }
            let hold = &mut dev.holds[diag.col];
            hold.remaining -= 1;
            if hold.remaining == 0 && hold.held {
                hold.held = false;
                dev.state.unpin(diag)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_covariance, gen_locations, MaternParams};
    use crate::kernels::potrf_tile;
    use crate::memdev::Direction;
    use crate::planner::{plan_precisions, PrecisionMode};
    use crate::scheduler::EventKind;
    use crate::stats::factorization_residual;
    use crate::tile::lower_indices;

    fn matrix(n: usize, nb: usize) -> TiledSymmetricMatrix {
        build_covariance(&gen_locations(n, 3), &MaternParams::new(1.0, 0.1, 0.5), nb).unwrap()
    }

    fn fp64(a: &TiledSymmetricMatrix) -> PrecisionMap {
        PrecisionMap::uniform(a.nt(), Precision::Fp64)
    }

    fn big() -> u64 {
        1 << 40
    }

    #[test]
    fn single_tile_matches_potrf() {
        let a = matrix(50, 64);
        let want = potrf_tile(a.tile(TileIndex::new(0, 0))).unwrap();
        for v in Variant::ALL {
            let out = run_factorization(a.clone(), &fp64(&a), &ClusterConfig::new(1, 2, big(), v)).unwrap();
            assert_eq!(out.factor.tile(TileIndex::new(0, 0)), &want, "{v}");
        }
    }

    #[test]
    fn all_variants_and_device_counts_agree_bitwise() {
        let a = matrix(512, 128);
        let pm = fp64(&a);
        let reference = run_factorization(a.clone(), &pm, &ClusterConfig::new(1, 1, big(), Variant::Sync)).unwrap();
        assert!(factorization_residual(&a, &reference.factor).unwrap() < 10.0 * 512.0 * f64::EPSILON / 2.0);
        for v in Variant::ALL {
            for d in [1, 2, 4] {
                let out = run_factorization(a.clone(), &pm, &ClusterConfig::new(d, 2, big(), v)).unwrap();
                assert_eq!(out.factor, reference.factor, "{v} D={d}");
                assert_eq!(out.stats.dependency_violations, 0);
            }
        }
    }

    #[test]
    fn constrained_capacity_is_bit_exact() {
        let (n, nb) = (1024, 128);
        let a = matrix(n, nb);
        let pm = fp64(&a);
        let full = run_factorization(a.clone(), &pm, &ClusterConfig::new(2, 2, big(), Variant::V3)).unwrap();
        let cap = (n * n * 8) as u64 * 3 / 10;
        let small = run_factorization(a.clone(), &pm, &ClusterConfig::new(2, 2, cap, Variant::V3)).unwrap();
        assert_eq!(small.factor, full.factor);
        assert_eq!(small.g2c_bytes(), full.g2c_bytes());
        assert!(small.c2g_bytes() >= full.c2g_bytes());
        assert!(small.stats.peak_device_bytes.iter().all(|&p| p <= cap));
    }

    #[test]
    fn mixed_precision_results_are_variant_invariant() {
        let a = matrix(384, 64);
        let pm = plan_precisions(&a, 1e-5, &PrecisionMode::Four.allowed()).unwrap();
        let reference = run_factorization(a.clone(), &pm, &ClusterConfig::new(1, 1, big(), Variant::Sync)).unwrap();
        for v in Variant::ALL {
            let out = run_factorization(a.clone(), &pm, &ClusterConfig::new(3, 2, 1 << 20, v)).unwrap();
            assert_eq!(out.factor, reference.factor, "{v}");
            for (idx, t) in out.factor.tiles() {
                assert_eq!(t.precision(), pm.get(idx));
                assert!(t.is_representable());
            }
        }
    }

    #[test]
    fn consumers_read_producer_bytes_across_devices() {
        // Every C2G of a finished tile must carry exactly the final host bytes.
        let a = matrix(256, 32);
        let pm = fp64(&a);
        let out = run_factorization(a, &pm, &ClusterConfig::new(4, 1, big(), Variant::V1)).unwrap();
        let l = &out.factor;
        let mut cross = 0;
        for e in out.trace.events() {
            if e.kind == EventKind::C2G {
                let producer =
                    enumerate_tasks(l.nt(), 4).into_iter().find(|t| t.target == e.tile).unwrap().owner_stream % 4;
                if producer != e.device {
                    cross += 1;
                }
            }
        }
        assert!(cross > 0);
        // The factor also matches a single-device run byte for byte.
        let single = run_factorization(matrix(256, 32), &pm, &ClusterConfig::new(1, 1, big(), Variant::V1)).unwrap();
        assert_eq!(&single.factor, l);
    }

    #[test]
    fn v3_holds_diagonals() {
        let (n, nb) = (1024, 128);
        let a = matrix(n, nb);
        let pm = fp64(&a);
        let cap = (n * n * 8 / 4) as u64;
        for d in [1, 2] {
            let out = run_factorization(a.clone(), &pm, &ClusterConfig::new(d, 2, cap, Variant::V3)).unwrap();
            assert_eq!(out.stats.diagonal_hold_violations, 0);
            // After its POTRF, each diagonal tile is fetched at most once per device.
            for (dev, ledger) in out.ledgers.iter().enumerate() {
                for k in 0..a.nt() {
                    let fetches = ledger
                        .events()
                        .iter()
                        .filter(|e| e.direction == Direction::C2G && e.tile == TileIndex::new(k, k))
                        .count();
                    // One fetch as the POTRF accumulator (if owned here) plus one as the TRSM operand.
                    assert!(fetches <= 2, "D={d} dev={dev} k={k}: {fetches}");
                }
            }
        }
    }

    #[test]
    fn kernel_counts_and_triangular_writeback() {
        let a = matrix(640, 128);
        let nt = a.nt();
        let pm = plan_precisions(&a, 1e-5, &PrecisionMode::Four.allowed()).unwrap();
        let want: u64 = lower_indices(nt).map(|i| 128 * 128 * pm.get(i).bytes_per_element()).sum();
        for v in [Variant::V1, Variant::V2, Variant::V3] {
            let out = run_factorization(a.clone(), &pm, &ClusterConfig::new(2, 2, big(), v)).unwrap();
            assert_eq!(out.g2c_bytes(), want, "{v}");
            let s = &out.stats;
            assert_eq!(s.kernel_count(KernelKind::Potrf), nt);
            assert_eq!(s.kernel_count(KernelKind::Trsm), nt * (nt - 1) / 2);
            assert_eq!(s.kernel_count(KernelKind::Syrk), nt * (nt - 1) / 2);
            assert_eq!(s.kernel_count(KernelKind::Gemm), (nt - 2) * (nt - 1) * nt / 6);
            assert_eq!(out.trace.count(EventKind::Gemm), s.kernel_count(KernelKind::Gemm));
            let transfers = out.ledgers.iter().map(|l| l.events().len()).sum::<usize>();
            assert_eq!(out.trace.count(EventKind::C2G) + out.trace.count(EventKind::G2C), transfers);
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let a = matrix(256, 64);
        let pm = fp64(&a);
        let ws = working_set_bytes(64, Precision::Fp64);
        assert!(matches!(
            run_factorization(a.clone(), &pm, &ClusterConfig::new(1, 2, 2 * ws - 1, Variant::V2)),
            Err(Error::ConfigInfeasible(_))
        ));
        assert!(matches!(
            run_factorization(a.clone(), &pm, &ClusterConfig::new(0, 1, big(), Variant::V2)),
            Err(Error::ConfigInfeasible(_))
        ));
        // Sync runs a single stream, so half the bound suffices.
        assert!(run_factorization(a.clone(), &pm, &ClusterConfig::new(1, 2, ws, Variant::Sync)).is_ok());
        assert!(run_factorization(a.clone(), &pm, &ClusterConfig::new(1, 2, 2 * ws, Variant::V3)).is_ok());
        let wrong = PrecisionMap::uniform(3, Precision::Fp64);
        assert!(matches!(
            run_factorization(a, &wrong, &ClusterConfig::new(1, 1, big(), Variant::V1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn indefinite_matrix_reports_failing_tile() {
        let n = 256;
        let a = TiledSymmetricMatrix::from_fn(n, 64, |i, j| {
            if i == j {
                if i == 150 {
                    -1.0
                } else {
                    1.0
                }
            } else {
                0.0
            }
        });
        for v in Variant::ALL {
            let err = run_factorization(a.clone(), &fp64(&a), &ClusterConfig::new(2, 2, big(), v)).unwrap_err();
            assert_eq!(err, Error::NotPositiveDefinite { pivot_index: 150 - 128, tile: Some(TileIndex::new(2, 2)) });
        }
    }
}
