//! Shared fixtures for the benchmarks.

use dpigu_core::data::synth_classification;
use dpigu_core::{Dataset, GradBatch, ParamVector, SeededRng};

/// `rows` Gaussian gradient rows of length `dim`.
pub fn gaussian_batch(rows: usize, dim: usize, seed: u64) -> GradBatch {
    let mut rng = SeededRng::new(seed);
    let rows = (0..rows)
        .map(|_| ParamVector::new((0..dim).map(|_| rng.standard_normal()).collect()).expect("finite draws"))
        .collect();
    GradBatch::new(rows).expect("rows share a dimension")
}

/// Well-separated blobs shaped like flattened MNIST digits.
pub fn digit_like(samples: usize, seed: u64) -> Dataset {
    synth_classification(seed, samples, 784, 10, 3.0).expect("valid shape")
}
