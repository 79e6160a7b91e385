//! Shared fixtures for the benchmarks.

use pgsure::harness::{builtin, degrade, synthetic_image, Degraded};

/// A `size x size` RGB scene degraded by the named builtin scenario.
pub fn fixture(set: &str, row: usize, size: usize) -> Degraded {
    let scenario = builtin(set).expect("builtin set")[row].clone();
    degrade(&synthetic_image(size, size, 1), &scenario, 0, 4).expect("valid fixture")
}
