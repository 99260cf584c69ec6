//! Per-thread accounting of live tensor elements.
//!
//! Every [`LatentTensor`](super::LatentTensor) registers its element count on
//! construction and releases it on drop. Scratch buffers that are not tensors
//! (attention score rows) register through [`Scratch`]. Workers run on their
//! own threads, so the peak read at the end of a worker is that worker's peak.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
}

pub(crate) fn acquire(n: usize) {
    LIVE.with(|live| {
        let now = live.get() + n as i64;
        live.set(now);
        PEAK.with(|p| {
            if now > p.get() {
                p.set(now)
            }
        });
    });
}

pub(crate) fn release(n: usize) {
    LIVE.with(|live| live.set(live.get() - n as i64));
}

/// Zeroes both counters for the calling thread.
pub fn reset() {
    LIVE.with(|l| l.set(0));
    PEAK.with(|p| p.set(0));
}

/// Elements currently live on this thread. Can be negative when tensors
/// created elsewhere are dropped here without being adopted.
pub fn live() -> i64 {
    LIVE.with(|l| l.get())
}

pub fn peak() -> u64 {
    PEAK.with(|p| p.get().max(0) as u64)
}

/// Accounts a tensor that was allocated on another thread and handed to this one.
pub fn adopt(t: &super::LatentTensor) {
    acquire(t.len());
}

/// Hands a tensor off to another thread: stops counting it here.
pub fn disown(t: &super::LatentTensor) {
    release(t.len());
}

/// Guard for a counted scratch allocation.
#[derive(Debug)]
pub struct Scratch {
    len: usize,
}

impl Scratch {
    pub fn new(len: usize) -> Self {
        acquire(len);
        Self { len }
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        release(self.len);
    }
}
