use super::Model;
use crate::error::{Error, Result};
use crate::math::{ParamVector, SeededRng};

/// `ℓ(θ; x) = ‖θ − x‖² / 2`. Single class; the label is ignored.
///
/// The population loss over a dataset is minimised at the feature mean and
/// its gradient is 1-Lipschitz, which makes the convergence bounds checkable
/// in closed form.
#[derive(Debug, Clone)]
pub struct Quadratic {
    dim: usize,
}

impl Quadratic {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("quadratic model needs dim >= 1".into()));
        }
        Ok(Quadratic { dim })
    }
}

impl Model for Quadratic {
    fn describe(&self) -> String {
        format!("quadratic{}", self.dim)
    }

    fn param_count(&self) -> usize {
        self.dim
    }

    fn input_len(&self) -> usize {
        self.dim
    }

    fn classes(&self) -> usize {
        1
    }

    fn init_params(&self, rng: &mut SeededRng) -> ParamVector {
        let bound = 1.0 / (self.dim as f64).sqrt();
        ParamVector::from_vec_unchecked((0..self.dim).map(|_| rng.uniform_range(-bound, bound)).collect())
    }

    fn loss(&self, params: &[f64], x: &[f64], _label: usize) -> f64 {
        0.5 * params.iter().zip(x).map(|(p, x)| (p - x) * (p - x)).sum::<f64>()
    }

    fn loss_grad(&self, params: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        for ((g, p), x) in grad.iter_mut().zip(params).zip(x) {
            *g = p - x;
        }
        self.loss(params, x, label)
    }

    fn predict(&self, _params: &[f64], _x: &[f64]) -> usize {
        0
    }
}
