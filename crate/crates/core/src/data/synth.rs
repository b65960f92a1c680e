use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::SeededRng;

/// Gaussian class blobs: unit-variance noise around class centers whose
/// minimum pairwise distance equals `margin`. Labels cycle `i mod classes`.
pub fn synth_classification(
    seed: u64,
    n: usize,
    features: usize,
    classes: usize,
    margin: f64,
) -> Result<Dataset> {
    if n == 0 || features == 0 || classes == 0 {
        return Err(Error::InvalidArgument(
            "sample count, feature count and class count must be >= 1".into(),
        ));
    }
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::InvalidArgument(format!("margin must be finite and >= 0, got {margin}")));
    }
    let root = SeededRng::new(seed);
    let centers = class_centers(&mut root.fork(0), features, classes, margin);
    let mut rng = root.fork(1);
    let mut xs = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        let c = &centers[y * features..(y + 1) * features];
        xs.extend(c.iter().map(|&m| m + rng.standard_normal()));
        labels.push(y);
    }
    Dataset::new(xs, labels, features, classes)
}

fn class_centers(rng: &mut SeededRng, features: usize, classes: usize, margin: f64) -> Vec<f64> {
    let mut centers: Vec<f64> = (0..classes * features).map(|_| rng.standard_normal()).collect();
    if classes < 2 {
        centers.iter_mut().for_each(|c| *c = 0.0);
        return centers;
    }
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            let d2: f64 = (0..features)
                .map(|j| {
                    let diff = centers[a * features + j] - centers[b * features + j];
                    diff * diff
                })
                .sum();
            min_dist = min_dist.min(d2.sqrt());
        }
    }
    let scale = if min_dist > 0.0 { margin / min_dist } else { 0.0 };
    centers.iter_mut().for_each(|c| *c *= scale);
    centers
}
