//! Call counters for numerically interesting code paths.
//!
//! Tests use these to assert structural properties that are invisible in
//! return values, e.g. that the inverse-dynamics loss never performs a
//! linear solve or an eigendecomposition.

use std::sync::atomic::{AtomicU64, Ordering};

static EIG_CALLS: AtomicU64 = AtomicU64::new(0);
static SOLVE_CALLS: AtomicU64 = AtomicU64::new(0);

pub fn record_eig_call() {
    EIG_CALLS.fetch_add(1, Ordering::Relaxed);
}

pub fn record_solve_call() {
    SOLVE_CALLS.fetch_add(1, Ordering::Relaxed);
}

pub fn eig_calls() -> u64 {
    EIG_CALLS.load(Ordering::Relaxed)
}

pub fn solve_calls() -> u64 {
    SOLVE_CALLS.load(Ordering::Relaxed)
}
