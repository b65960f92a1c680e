use rand::seq::index;

use crate::error::{Error, Result};
use crate::math::SeededRng;

/// Draws fixed-size mini-batches uniformly without replacement, so each
/// sample is included with probability `q = B / N` per step.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: SeededRng,
    size: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(rng: SeededRng, size: usize, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if batch > size {
            return Err(Error::BatchTooLarge { batch, size });
        }
        Ok(BatchSampler { rng, size, batch })
    }

    pub fn sampling_rate(&self) -> f64 {
        self.batch as f64 / self.size as f64
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// `B` distinct indices in `[0, N)`.
    pub fn sample(&mut self) -> Vec<usize> {
        index::sample(&mut self.rng, self.size, self.batch).into_vec()
    }
}
