//! Allocation accounting for tensor buffers.
//!
//! Every [`Tensor`](super::Tensor) reports its buffer size here when it is
//! created and again when it is dropped. Counters are per thread, so a
//! measured closure only sees its own allocations. The profiler uses the
//! per-class peaks to isolate cost-volume memory from everything else.

use std::cell::Cell;
use std::sync::{Mutex, MutexGuard};

/// Accounting class of a tensor buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MemClass {
    #[default]
    General,
    /// Correlation / cost-volume storage (local, all-pairs and pooled levels).
    CostVolume,
}

impl MemClass {
    fn index(self) -> usize {
        match self {
            MemClass::General => 0,
            MemClass::CostVolume => 1,
        }
    }
}

/// Point-in-time view of the calling thread's counters, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AllocSnapshot {
    pub live: u64,
    pub peak: u64,
    pub live_cost_volume: u64,
    pub peak_cost_volume: u64,
    /// Cumulative bytes ever allocated in the cost-volume class.
    pub total_cost_volume: u64,
    pub allocations: u64,
}

#[derive(Default)]
struct Counters {
    live: [Cell<u64>; 2],
    peak: [Cell<u64>; 2],
    peak_all: Cell<u64>,
    total: [Cell<u64>; 2],
    allocations: Cell<u64>,
}

thread_local! {
    static COUNTERS: Counters = Counters::default();
}

static MEASURE_LOCK: Mutex<()> = Mutex::new(());

pub(crate) fn acquire(bytes: u64, class: MemClass) {
    COUNTERS.with(|c| {
        let i = class.index();
        let live = c.live[i].get() + bytes;
        c.live[i].set(live);
        c.total[i].set(c.total[i].get() + bytes);
        if live > c.peak[i].get() {
            c.peak[i].set(live);
        }
        let all = c.live[0].get() + c.live[1].get();
        if all > c.peak_all.get() {
            c.peak_all.set(all);
        }
        c.allocations.set(c.allocations.get() + 1);
    });
}

pub(crate) fn release(bytes: u64, class: MemClass) {
    COUNTERS.with(|c| {
        let i = class.index();
        c.live[i].set(c.live[i].get().saturating_sub(bytes));
    });
}

/// Current counters for this thread.
pub fn snapshot() -> AllocSnapshot {
    COUNTERS.with(|c| AllocSnapshot {
        live: c.live[0].get() + c.live[1].get(),
        peak: c.peak_all.get(),
        live_cost_volume: c.live[1].get(),
        peak_cost_volume: c.peak[1].get(),
        total_cost_volume: c.total[1].get(),
        allocations: c.allocations.get(),
    })
}

/// Resets peaks to the current live values and zeroes cumulative totals.
pub fn reset_peaks() {
    COUNTERS.with(|c| {
        for i in 0..2 {
            c.peak[i].set(c.live[i].get());
            c.total[i].set(0);
        }
        c.peak_all.set(c.live[0].get() + c.live[1].get());
        c.allocations.set(0);
    });
}

/// Exclusive measurement session. Only one may exist process-wide; a second
/// caller blocks until the first guard is dropped.
pub struct MeasureSession {
    _guard: MutexGuard<'static, ()>,
}

impl MeasureSession {
    pub fn begin() -> Self {
        let guard = MEASURE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
        reset_peaks();
        MeasureSession { _guard: guard }
    }

    /// Peak counters observed since `begin` or the last `restart`.
    pub fn peaks(&self) -> AllocSnapshot {
        snapshot()
    }

    pub fn restart(&mut self) {
        reset_peaks();
    }
}
