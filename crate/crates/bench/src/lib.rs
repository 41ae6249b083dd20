//! Shared fixtures for the criterion benches.

use exceed::rng::open01;
use exceed::{EmpiricalMeasure, RandomSource};
use ndarray::Array2;

/// `n` points uniform on `[0, 1)^d`, shifted by `offset` in every coordinate.
pub fn cloud(n: usize, d: usize, offset: f64, seed: u64) -> EmpiricalMeasure {
    let mut rng = RandomSource::new(seed).rng();
    EmpiricalMeasure::uniform(Array2::from_shape_fn((n, d), |_| offset + open01(&mut rng))).unwrap()
}
