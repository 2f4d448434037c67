//! Per-thread counters of encoder invocations.

use std::cell::Cell;

thread_local! {
    static CAPTIONS: Cell<u64> = const { Cell::new(0) };
    static IMAGES: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EncodeCounts {
    pub captions: u64,
    pub images: u64,
}

pub fn counts() -> EncodeCounts {
    EncodeCounts {
        captions: CAPTIONS.with(Cell::get),
        images: IMAGES.with(Cell::get),
    }
}

pub fn reset() {
    CAPTIONS.with(|c| c.set(0));
    IMAGES.with(|c| c.set(0));
}

pub(crate) fn record_captions(n: u64) {
    CAPTIONS.with(|c| c.set(c.get() + n));
}

pub(crate) fn record_images(n: u64) {
    IMAGES.with(|c| c.set(c.get() + n));
}
