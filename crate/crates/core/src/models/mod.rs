//! Small differentiable classifiers with exact per-sample gradients.
//!
//! Parameters are flattened layer by layer in declaration order, weights
//! before biases, row-major within each weight tensor. Convolution weights
//! are laid out `[out_channel][in_channel][ky][kx]`, dense weights
//! `[out_unit][in_unit]`.

mod network;
mod quadratic;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use network::{Layer, Network};
pub use quadratic::Quadratic;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{check_len, ParamVector, SeededRng};

/// A model with per-sample cross-entropy loss and its exact gradient.
pub trait Model: Send + Sync + fmt::Debug {
    fn describe(&self) -> String;

    fn param_count(&self) -> usize;

    fn input_len(&self) -> usize;

    fn classes(&self) -> usize;

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer, drawn in
    /// flattening order.
    fn init_params(&self, rng: &mut SeededRng) -> ParamVector;

    /// Per-sample loss; may be non-finite if activations overflow.
    fn loss(&self, params: &[f64], x: &[f64], label: usize) -> f64;

    /// Writes `∇ℓ(params; x)` into `grad` (overwriting it) and returns the loss.
    fn loss_grad(&self, params: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64;

    fn predict(&self, params: &[f64], x: &[f64]) -> usize;
}

/// Named architectures selectable from a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// `ℓ(θ; x) = ‖θ − x‖² / 2`, a G = 1 smooth test objective.
    Quadratic,
    /// Softmax-linear classifier (multinomial logistic regression).
    Logistic,
    /// One ReLU hidden layer.
    Mlp { hidden: usize },
    /// Two conv/pool stages and a 32-unit dense layer for 28×28 grayscale input.
    CnnMnist,
    /// Three conv/pool stages and a 128-unit dense layer for 32×32 RGB input.
    CnnCifar,
}

impl Architecture {
    pub fn build(&self, input_len: usize, classes: usize) -> Result<Box<dyn Model>> {
        let model: Box<dyn Model> = match *self {
            Architecture::Quadratic => Box::new(Quadratic::new(input_len)?),
            Architecture::Logistic => Box::new(Network::dense(input_len, &[], classes)?),
            Architecture::Mlp { hidden } => Box::new(Network::dense(input_len, &[hidden], classes)?),
            Architecture::CnnMnist => {
                Box::new(Network::new((1, 28, 28), &Network::mnist_cnn_layers(classes))?)
            }
            Architecture::CnnCifar => {
                Box::new(Network::new((3, 32, 32), &Network::cifar_cnn_layers(classes))?)
            }
        };
        check_len(model.input_len(), input_len).map_err(|_| {
            Error::InvalidArgument(format!(
                "architecture {self} expects {} input features, dataset has {input_len}",
                model.input_len()
            ))
        })?;
        Ok(model)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Quadratic => write!(f, "quadratic"),
            Architecture::Logistic => write!(f, "logreg"),
            Architecture::Mlp { hidden } => write!(f, "mlp:{hidden}"),
            Architecture::CnnMnist => write!(f, "cnn-mnist"),
            Architecture::CnnCifar => write!(f, "cnn-cifar"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "quadratic" => Ok(Architecture::Quadratic),
            "logreg" | "logistic" => Ok(Architecture::Logistic),
            "cnn-mnist" => Ok(Architecture::CnnMnist),
            "cnn-cifar" => Ok(Architecture::CnnCifar),
            "mlp" => Ok(Architecture::Mlp { hidden: 64 }),
            _ => match s.strip_prefix("mlp:").map(str::parse::<usize>) {
                Some(Ok(hidden)) if hidden > 0 => Ok(Architecture::Mlp { hidden }),
                _ => Err(Error::InvalidArgument(format!(
                    "unknown model '{s}' (expected quadratic, logreg, mlp[:H], cnn-mnist, cnn-cifar)"
                ))),
            },
        }
    }
}

/// Per-sample gradients for one mini-batch, one row per sample in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBatch {
    rows: Vec<ParamVector>,
}

impl GradBatch {
    pub fn new(rows: Vec<ParamVector>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidArgument("gradient batch must have >= 1 row".into()));
        };
        let dim = first.dim();
        for row in &rows {
            check_len(dim, row.dim())?;
            crate::math::check_finite(row)?;
        }
        Ok(GradBatch { rows })
    }

    pub fn rows(&self) -> &[ParamVector] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [ParamVector] {
        &mut self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }
}

fn check_sample(model: &dyn Model, params: &[f64], x: &[f64], label: usize) -> Result<()> {
    check_len(model.param_count(), params.len())?;
    check_len(model.input_len(), x.len())?;
    if label >= model.classes() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            model.classes()
        )));
    }
    Ok(())
}

/// Cross-entropy loss of one sample.
pub fn per_sample_loss(model: &dyn Model, params: &[f64], x: &[f64], label: usize) -> Result<f64> {
    check_sample(model, params, x, label)?;
    Ok(model.loss(params, x, label))
}

/// Computes the gradient of one sample into `grad`, rejecting non-finite
/// results with the sample's dataset index.
pub(crate) fn sample_grad_into(
    model: &dyn Model,
    params: &[f64],
    data: &Dataset,
    index: usize,
    grad: &mut [f64],
) -> Result<f64> {
    let loss = model.loss_grad(params, data.features(index), data.label(index), grad);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteActivation { sample: index });
    }
    Ok(loss)
}

/// Exact per-sample gradients for the rows `indices` of `data`.
pub fn per_sample_grads(
    model: &dyn Model,
    params: &[f64],
    data: &Dataset,
    indices: &[usize],
) -> Result<GradBatch> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("batch must contain >= 1 sample".into()));
    }
    check_len(model.param_count(), params.len())?;
    check_len(model.input_len(), data.feature_len())?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!("sample index {bad} out of range")));
    }
    let rows = indices
        .par_iter()
        .map(|&i| {
            let mut g = vec![0.0; params.len()];
            sample_grad_into(model, params, data, i, &mut g)?;
            Ok(ParamVector::from_vec_unchecked(g))
        })
        .collect::<Result<Vec<_>>>()?;
    GradBatch::new(rows)
}

/// Central-difference gradient `(ℓ(θ + h e_j) − ℓ(θ − h e_j)) / 2h`.
pub fn finite_diff_grad(
    model: &dyn Model,
    params: &[f64],
    x: &[f64],
    label: usize,
    h: f64,
) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    check_sample(model, params, x, label)?;
    let mut probe = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = model.loss(&probe, x, label);
        probe[j] = orig - h;
        let down = model.loss(&probe, x, label);
        probe[j] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(ParamVector::from_vec_unchecked(out))
}

/// Stable `log Σ exp(z) − z_y`; writes softmax probabilities into `probs`.
pub(crate) fn softmax_cross_entropy(logits: &[f64], label: usize, probs: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        total += *p;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    max + total.ln() - logits[label]
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
