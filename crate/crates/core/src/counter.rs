use std::sync::atomic::{AtomicU64, Ordering};

/// Multiply/add tally shared by the convolution kernels.
///
/// Counts are accumulated atomically, so one counter can be handed to a
/// parallel convolution and still report exact totals.
#[derive(Debug, Default)]
pub struct OpCounter {
    multiplies: AtomicU64,
    adds: AtomicU64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, multiplies: u64, adds: u64) {
        self.multiplies.fetch_add(multiplies, Ordering::Relaxed);
        self.adds.fetch_add(adds, Ordering::Relaxed);
    }

    pub fn multiplies(&self) -> u64 {
        self.multiplies.load(Ordering::Relaxed)
    }

    pub fn adds(&self) -> u64 {
        self.adds.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.multiplies.store(0, Ordering::Relaxed);
        self.adds.store(0, Ordering::Relaxed);
    }
}
