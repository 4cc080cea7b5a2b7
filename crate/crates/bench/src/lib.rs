//! Shared fixtures for the benchmarks.

use spotkit::toynet::{self, Batch};
use spotkit::ToyNet;

/// Deterministic points in `[0, 1]^dims` with a smooth response.
pub fn smooth_sample(n: usize, dims: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..dims)
                .map(|k| ((i * (2 * k + 3) + k) % n) as f64 / n as f64)
                .collect()
        })
        .collect();
    let y = x
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(k, v)| (k + 1) as f64 * (v - 0.3).powi(2))
                .sum()
        })
        .collect();
    (x, y)
}

/// A network and one batch of the synthetic data.
pub fn toy_batch(batch_size: usize, l1: usize, l2: usize) -> (ToyNet, Batch) {
    let (train, _) = toynet::generate_dataset(1000, toynet::DEFAULT_INPUT_DIM, 0).expect("dataset");
    let net = ToyNet::new(train.input_dim(), l1, l2, 0).expect("network");
    let idx: Vec<usize> = (0..batch_size).collect();
    (net, train.batch(&idx))
}
