//! Byte-exact accounting of live tensor payloads.
//!
//! Every [`Tensor`](super::Tensor) registers its payload with a tracker on
//! allocation and releases it on drop. The tracker keeps the current live
//! total and the high-water mark since the last [`MemoryTracker::reset_peak`].
//! An optional ceiling turns over-budget allocations into
//! [`Error::OutOfMemory`](crate::Error::OutOfMemory), which is how the
//! benchmark reproduces out-of-memory behaviour without exhausting the host.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

const NO_CEILING: u64 = u64::MAX;

#[derive(Default)]
struct Counters {
    live: AtomicU64,
    peak: AtomicU64,
    ceiling: AtomicU64,
    disabled: AtomicBool,
}

/// Shared handle to a set of allocation counters. Cloning the handle shares
/// the counters.
#[derive(Clone)]
pub struct MemoryTracker {
    inner: Arc<Counters>,
}

impl MemoryTracker {
    pub fn new() -> Self {
        let inner = Counters::default();
        inner.ceiling.store(NO_CEILING, Ordering::Relaxed);
        Self {
            inner: Arc::new(inner),
        }
    }

    /// A tracker that refuses allocations taking live bytes above `ceiling`.
    pub fn with_ceiling(ceiling: u64) -> Self {
        let t = Self::new();
        t.set_ceiling(Some(ceiling));
        t
    }

    /// The process-wide default tracker.
    pub fn global() -> &'static MemoryTracker {
        static GLOBAL: OnceLock<MemoryTracker> = OnceLock::new();
        GLOBAL.get_or_init(MemoryTracker::new)
    }

    pub fn live_bytes(&self) -> u64 {
        self.inner.live.load(Ordering::Acquire)
    }

    pub fn peak_bytes(&self) -> u64 {
        self.inner.peak.load(Ordering::Acquire)
    }

    pub fn ceiling(&self) -> Option<u64> {
        match self.inner.ceiling.load(Ordering::Acquire) {
            NO_CEILING => None,
            c => Some(c),
        }
    }

    pub fn set_ceiling(&self, ceiling: Option<u64>) {
        self.inner
            .ceiling
            .store(ceiling.unwrap_or(NO_CEILING), Ordering::Release);
    }

    pub fn is_enabled(&self) -> bool {
        !self.inner.disabled.load(Ordering::Acquire)
    }

    /// While disabled, new allocations are neither counted nor checked
    /// against the ceiling. Tensors remember whether they were counted, so
    /// toggling never unbalances the live total.
    pub fn set_enabled(&self, enabled: bool) {
        self.inner.disabled.store(!enabled, Ordering::Release);
    }

    /// Restarts the high-water mark at the currently held bytes.
    pub fn reset_peak(&self) {
        let live = self.inner.live.load(Ordering::Acquire);
        self.inner.peak.store(live, Ordering::Release);
    }

    /// Registers `bytes`; returns whether they were counted.
    pub(crate) fn acquire(&self, bytes: u64) -> Result<bool> {
        if !self.is_enabled() {
            return Ok(false);
        }
        let ceiling = self.inner.ceiling.load(Ordering::Acquire);
        let mut live = self.inner.live.load(Ordering::Acquire);
        loop {
            let next = live.saturating_add(bytes);
            if next > ceiling {
                return Err(Error::OutOfMemory {
                    tensor: String::from("<unnamed>"),
                    requested: bytes,
                    live,
                    ceiling,
                });
            }
            match self.inner.live.compare_exchange_weak(
                live,
                next,
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => {
                    self.inner.peak.fetch_max(next, Ordering::AcqRel);
                    return Ok(true);
                }
                Err(actual) => live = actual,
            }
        }
    }

    pub(crate) fn release(&self, bytes: u64) {
        let prev = self.inner.live.fetch_sub(bytes, Ordering::AcqRel);
        debug_assert!(prev >= bytes, "tracker underflow");
    }

    /// True when both handles share the same counters.
    pub fn same_as(&self, other: &MemoryTracker) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

impl Default for MemoryTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for MemoryTracker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryTracker")
            .field("live_bytes", &self.live_bytes())
            .field("peak_bytes", &self.peak_bytes())
            .field("ceiling", &self.ceiling())
            .field("enabled", &self.is_enabled())
            .finish()
    }
}
