//! Shared fixtures for the benchmarks.

use dnn_core::simgen::simulation_spec;
use dnn_core::{Dataset, SeededRng};

/// `n` training rows and `queries` test rows from Simulation 1 in dimension `d`.
pub fn simulation_one(n: usize, queries: usize, d: usize) -> (Dataset, Dataset) {
    let spec = simulation_spec(1, d).expect("valid design");
    let train = spec.sample(n, &mut SeededRng::new(1, 0)).expect("sample");
    let test = spec.sample(queries, &mut SeededRng::new(2, 0)).expect("sample");
    (train, test)
}
