//! Private optimizers: plain SGD, DPSGD and the masked adaptive-clipping
//! pipeline.
//!
//! A masked step runs, per sample: gradient, mask, standardize, re-mask,
//! clip. The clipped rows are summed in batch order, Gaussian noise is added
//! on the mask support, the sum is divided by `B`, and the result is mapped
//! back to gradient scale, masked once more and applied. The running
//! statistics are then updated from the restored gradient.
//!
//! Per-sample gradients are produced in parallel chunks but always reduced
//! sequentially in batch order, so results do not depend on thread count.

mod clip;
mod importance;
mod schedule;

use rayon::prelude::*;

pub use clip::{clip_per_sample, ClipParams, ClipState};
pub use importance::ImportanceState;
pub use schedule::{ScheduleMode, UnfreezeSchedule};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{check_finite, check_len, gaussian_vector, norm_sq, retained_count, topk_mask, BinaryMask, ParamVector, SeededRng};
use crate::models::{sample_grad_into, GradBatch, Model};
use crate::privacy::PrivacyLedger;

const CHUNK: usize = 64;

/// Relative slack on the clip bound when validating aggregator input.
const NORM_SLACK: f64 = 1e-9;

/// How gradients are sparsified before clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruningMode {
    /// One data-independent mask from the pretraining scores; noise only on
    /// the mask support.
    #[default]
    FixedMask,
    /// Each standardized per-sample gradient keeps its own top `⌊r·d⌋`
    /// coordinates and noise covers every coordinate. The kept set depends
    /// on the data, so the masked-mechanism privacy argument does not apply.
    PerSampleTopK,
}

impl std::fmt::Display for PruningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PruningMode::FixedMask => "fixed-mask",
            PruningMode::PerSampleTopK => "per-sample-topk",
        })
    }
}

impl std::str::FromStr for PruningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed-mask" | "fixed" => Ok(PruningMode::FixedMask),
            "per-sample-topk" | "heuristic" => Ok(PruningMode::PerSampleTopK),
            other => Err(Error::InvalidArgument(format!(
                "unknown pruning mode '{other}' (expected fixed-mask or per-sample-topk)"
            ))),
        }
    }
}

/// Sparsifier for one step.
#[derive(Debug, Clone, Copy)]
pub enum Sparsity<'a> {
    Mask(&'a BinaryMask),
    PerSample { k: usize },
}

/// Where per-sample gradients come from.
#[derive(Debug, Clone, Copy)]
pub enum GradSource<'a> {
    Precomputed(&'a GradBatch),
    Model {
        model: &'a dyn Model,
        data: &'a Dataset,
        indices: &'a [usize],
    },
}

impl GradSource<'_> {
    pub fn len(&self) -> usize {
        match self {
            GradSource::Precomputed(b) => b.len(),
            GradSource::Model { indices, .. } => indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            GradSource::Precomputed(b) => check_len(dim, b.dim()),
            GradSource::Model { model, data, indices } => {
                check_len(model.param_count(), dim)?;
                check_len(model.input_len(), data.feature_len())?;
                if indices.is_empty() {
                    return Err(Error::InvalidArgument("batch must contain >= 1 sample".into()));
                }
                match indices.iter().find(|&&i| i >= data.len()) {
                    Some(&bad) => Err(Error::InvalidArgument(format!("sample index {bad} out of range"))),
                    None => Ok(()),
                }
            }
        }
    }

    /// Row `j` after `prep`, with its loss (`NaN` for precomputed rows).
    fn row(&self, params: &[f64], j: usize, prep: &(dyn Fn(&mut [f64]) + Sync)) -> Result<(Vec<f64>, f64)> {
        let (mut g, loss) = match self {
            GradSource::Precomputed(b) => (b.rows()[j].to_vec(), f64::NAN),
            GradSource::Model { model, data, indices } => {
                let mut g = vec![0.0; params.len()];
                let loss = sample_grad_into(*model, params, data, indices[j], &mut g)?;
                (g, loss)
            }
        };
        prep(&mut g);
        Ok((g, loss))
    }

    /// `Σ_j prep(g_j)` reduced in batch order, plus the summed loss.
    fn prepared_sum(&self, params: &[f64], prep: &(dyn Fn(&mut [f64]) + Sync)) -> Result<(Vec<f64>, f64)> {
        let n = self.len();
        let mut sum = vec![0.0; params.len()];
        let mut loss = 0.0;
        for start in (0..n).step_by(CHUNK) {
            let rows = (start..(start + CHUNK).min(n))
                .into_par_iter()
                .map(|j| self.row(params, j, prep))
                .collect::<Result<Vec<_>>>()?;
            for (g, l) in rows {
                for (s, x) in sum.iter_mut().zip(&g) {
                    *s += x;
                }
                loss += l;
            }
        }
        Ok((sum, loss))
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// The gradient estimate that was applied, `θ' = θ − η·update`.
    pub update: ParamVector,
    /// Mean per-sample loss at the pre-step parameters; `NaN` when the
    /// gradients were supplied precomputed.
    pub mean_loss: f64,
}

/// Left-to-right sum of the rows.
pub fn sum_rows(batch: &GradBatch) -> ParamVector {
    let mut sum = vec![0.0; batch.dim()];
    for row in batch.rows() {
        for (s, x) in sum.iter_mut().zip(row.iter()) {
            *s += x;
        }
    }
    ParamVector::from_vec_unchecked(sum)
}

/// Adds `m ⊙ N(0, σ²C²I)` (all coordinates when `mask` is `None`) and
/// divides by `b`. A zero `σ` draws nothing.
fn finish_aggregate(mut sum: Vec<f64>, mask: Option<&BinaryMask>, sigma: f64, clip: f64, rng: &mut SeededRng, b: usize) -> Result<Vec<f64>> {
    if sigma > 0.0 {
        let z = gaussian_vector(rng, sum.len(), sigma * clip)?;
        for (i, (s, n)) in sum.iter_mut().zip(z.iter()).enumerate() {
            if mask.map_or(true, |m| m.get(i)) {
                *s += n;
            }
        }
    }
    let b = b as f64;
    for s in &mut sum {
        *s /= b;
    }
    Ok(sum)
}

/// `(Σ rows + m ⊙ z) / B` with `z ~ N(0, σ²C²I)`, for rows that are already
/// masked, standardized and clipped. Rows exceeding `C` or carrying
/// off-mask mass are rejected.
pub fn noisy_aggregate(batch: &GradBatch, mask: &BinaryMask, cs: &ClipState, rng: &mut SeededRng) -> Result<ParamVector> {
    check_len(mask.dim(), batch.dim())?;
    check_len(cs.dim(), batch.dim())?;
    let clip = cs.clip();
    for (row, g) in batch.rows().iter().enumerate() {
        let norm = norm_sq(g).sqrt();
        if norm > clip * (1.0 + NORM_SLACK) {
            return Err(Error::NormBoundViolated { row, norm, clip });
        }
        if let Some(coord) = (0..g.len()).find(|&i| !mask.get(i) && g[i] != 0.0) {
            return Err(Error::OffMaskEntry { row, coord });
        }
    }
    let sum = sum_rows(batch).into_vec();
    let out = finish_aggregate(sum, Some(mask), cs.sigma(), clip, rng, batch.len())?;
    Ok(ParamVector::from_vec_unchecked(out))
}

fn apply_update(params: &mut ParamVector, update: &[f64], eta: f64) -> Result<()> {
    for (p, g) in params.iter_mut().zip(update) {
        *p -= eta * g;
    }
    check_finite(params)
}

fn report(update: Vec<f64>, loss_sum: f64, b: usize) -> StepReport {
    StepReport {
        update: ParamVector::from_vec_unchecked(update),
        mean_loss: loss_sum / b as f64,
    }
}

/// `θ' = θ − η (1/B) Σ g_i`.
pub fn sgd_step(params: &mut ParamVector, source: GradSource<'_>, eta: f64) -> Result<StepReport> {
    source.check(params.dim())?;
    let (sum, loss) = source.prepared_sum(params, &|_| {})?;
    let b = source.len();
    let update: Vec<f64> = sum.into_iter().map(|s| s / b as f64).collect();
    apply_update(params, &update, eta)?;
    Ok(report(update, loss, b))
}

/// `θ' = θ − η (1/B)(Σ clip(g_i, C) + N(0, σ²C²I))`; records one ledger step.
pub fn dpsgd_step(
    params: &mut ParamVector,
    source: GradSource<'_>,
    cs: &ClipState,
    rng: &mut SeededRng,
    eta: f64,
    ledger: Option<&mut PrivacyLedger>,
) -> Result<StepReport> {
    source.check(params.dim())?;
    check_len(params.dim(), cs.dim())?;
    let clip = cs.clip();
    let (sum, loss) = source.prepared_sum(params, &|g| clip::clip_in_place(g, clip))?;
    let b = source.len();
    let update = finish_aggregate(sum, None, cs.sigma(), clip, rng, b)?;
    if let Some(ledger) = ledger {
        ledger.record_step();
    }
    apply_update(params, &update, eta)?;
    Ok(report(update, loss, b))
}

fn keep_topk(g: &mut [f64], k: usize) {
    if k >= g.len() {
        return;
    }
    // inputs are finite here; any failure would be a caller bug on k
    let mask = topk_mask(g, k).expect("k validated by caller");
    mask.apply_in_place(g);
}

/// One masked adaptive-clipping step. Updates the running statistics in
/// `cs` and records exactly one ledger step.
pub fn adadpigu_step(
    params: &mut ParamVector,
    source: GradSource<'_>,
    sparsity: Sparsity<'_>,
    cs: &mut ClipState,
    rng: &mut SeededRng,
    eta: f64,
    ledger: Option<&mut PrivacyLedger>,
) -> Result<StepReport> {
    let d = params.dim();
    source.check(d)?;
    check_len(d, cs.dim())?;
    let clip = cs.clip();
    let state: &ClipState = cs;
    let (sum, loss, mask) = match sparsity {
        Sparsity::Mask(mask) => {
            check_len(d, mask.dim())?;
            let (sum, loss) = source.prepared_sum(params, &|g| {
                state.standardize_masked_in_place(g, mask);
                clip::clip_in_place(g, clip);
            })?;
            (sum, loss, Some(mask))
        }
        Sparsity::PerSample { k } => {
            if k == 0 || k > d {
                return Err(Error::TopKOutOfRange { k, dim: d });
            }
            let (sum, loss) = source.prepared_sum(params, &|g| {
                state.standardize_in_place(g);
                keep_topk(g, k);
                clip::clip_in_place(g, clip);
            })?;
            (sum, loss, None)
        }
    };
    let b = source.len();
    let mut update = finish_aggregate(sum, mask, cs.sigma(), clip, rng, b)?;
    if let Some(ledger) = ledger {
        ledger.record_step();
    }
    cs.restore_in_place(&mut update);
    if let Some(mask) = mask {
        mask.apply_in_place(&mut update);
    }
    apply_update(params, &update, eta)?;
    cs.ema_update(&update)?;
    Ok(report(update, loss, b))
}

/// Training-phase state: finalized scores, unfreezing schedule, running
/// statistics and the current mask.
#[derive(Debug, Clone)]
pub struct AdaDpigu {
    importance: ImportanceState,
    schedule: UnfreezeSchedule,
    clip: ClipState,
    mode: PruningMode,
    mask: BinaryMask,
}

impl AdaDpigu {
    pub fn new(importance: ImportanceState, schedule: UnfreezeSchedule, clip: ClipState, mode: PruningMode) -> Result<Self> {
        check_len(importance.dim(), clip.dim())?;
        let mask = importance.build_mask(schedule.retention_at(0)?)?;
        Ok(AdaDpigu {
            importance,
            schedule,
            clip,
            mode,
            mask,
        })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn clip_state(&self) -> &ClipState {
        &self.clip
    }

    pub fn importance(&self) -> &ImportanceState {
        &self.importance
    }

    /// Refreshes the mask for step `t` (0-based within the training phase)
    /// and returns `r_t`.
    pub fn refresh(&mut self, t: usize) -> Result<f64> {
        let r = self.schedule.retention_at(t)?;
        if retained_count(r, self.importance.dim())? != self.mask.ones_count() {
            self.mask = self.importance.build_mask(r)?;
        }
        Ok(r)
    }

    pub fn step(
        &mut self,
        params: &mut ParamVector,
        source: GradSource<'_>,
        rng: &mut SeededRng,
        eta: f64,
        t: usize,
        ledger: Option<&mut PrivacyLedger>,
    ) -> Result<StepReport> {
        self.refresh(t)?;
        let sparsity = match self.mode {
            PruningMode::FixedMask => Sparsity::Mask(&self.mask),
            PruningMode::PerSampleTopK => Sparsity::PerSample {
                k: self.mask.ones_count(),
            },
        };
        adadpigu_step(params, source, sparsity, &mut self.clip, rng, eta, ledger)
    }
}
