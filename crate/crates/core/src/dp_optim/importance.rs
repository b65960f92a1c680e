use crate::error::{Error, Result};
use crate::math::{check_finite, check_len, rank_descending, retained_count, BinaryMask};

/// Accumulated per-coordinate gradient magnitudes from the pretraining phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceState {
    scores: Vec<f64>,
    steps: usize,
    order: Option<Vec<usize>>,
}

impl ImportanceState {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        Ok(ImportanceState {
            scores: vec![0.0; dim],
            steps: 0,
            order: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.scores.len()
    }

    /// `s_j += |g_j|`.
    pub fn accumulate(&mut self, g: &[f64]) -> Result<()> {
        if self.order.is_some() {
            return Err(Error::ScoresAlreadyFinalized);
        }
        check_len(self.scores.len(), g.len())?;
        check_finite(g)?;
        for (s, x) in self.scores.iter_mut().zip(g) {
            *s += x.abs();
        }
        self.steps += 1;
        Ok(())
    }

    /// Divides by the number of accumulated steps and fixes the ranking.
    pub fn finalize(&mut self) -> Result<()> {
        if self.order.is_some() {
            return Err(Error::ScoresAlreadyFinalized);
        }
        if self.steps == 0 {
            return Err(Error::NoImportanceSteps);
        }
        let n = self.steps as f64;
        for s in &mut self.scores {
            *s /= n;
        }
        self.order = Some(rank_descending(&self.scores));
        Ok(())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn steps_accumulated(&self) -> usize {
        self.steps
    }

    pub fn is_finalized(&self) -> bool {
        self.order.is_some()
    }

    /// Coordinates by non-increasing score, ties by ascending index.
    pub fn sorted_order(&self) -> Result<&[usize]> {
        self.order.as_deref().ok_or(Error::ScoresNotFinalized)
    }

    /// Mask over the first `max(1, ⌊r·d⌋)` coordinates of the ranking.
    pub fn build_mask(&self, r: f64) -> Result<BinaryMask> {
        let order = self.sorted_order()?;
        let k = retained_count(r, self.dim())?;
        BinaryMask::from_indices(self.dim(), &order[..k])
    }
}
