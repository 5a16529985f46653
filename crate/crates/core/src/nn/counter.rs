//! Per-thread count of affine passes, used to compare the cost of moment
//! matching against Monte Carlo propagation.
//!
//! One pass is one matrix-vector product of a layer's weights with a single
//! input (a batched product over `n` rows counts `n`).

use std::cell::Cell;

thread_local! {
    static AFFINE_PASSES: Cell<u64> = const { Cell::new(0) };
}

pub fn add_affine_passes(n: u64) {
    AFFINE_PASSES.with(|c| c.set(c.get() + n));
}

pub fn affine_passes() -> u64 {
    AFFINE_PASSES.with(Cell::get)
}

pub fn reset_affine_passes() {
    AFFINE_PASSES.with(|c| c.set(0));
}
