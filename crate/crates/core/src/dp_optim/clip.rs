use crate::error::{Error, Result};
use crate::math::{check_finite, check_len, norm_sq, BinaryMask, ParamVector};

/// Hyperparameters of [`ClipState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParams {
    pub mu: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub clip: f64,
    pub sigma: f64,
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams {
            mu: 1e-6,
            gamma1: 0.9,
            gamma2: 0.999,
            alpha0: 0.0,
            beta0: 1.0,
            clip: 1.0,
            sigma: 0.0,
        }
    }
}

impl ClipParams {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            out.push(format!("mu must be > 0, got {}", self.mu));
        }
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(0.0..=1.0).contains(&g) {
                out.push(format!("{name} must lie in [0, 1], got {g}"));
            }
        }
        if !self.alpha0.is_finite() {
            out.push(format!("alpha0 must be finite, got {}", self.alpha0));
        }
        if !(self.beta0 >= 0.0 && self.beta0.is_finite()) {
            out.push(format!("beta0 must be >= 0, got {}", self.beta0));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            out.push(format!("clip bound C must be > 0, got {}", self.clip));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            out.push(format!("sigma must be >= 0, got {}", self.sigma));
        }
        out
    }
}

/// Coordinate-wise running mean `α` and variance `β` used to standardize
/// gradients before clipping, plus the clip bound and noise multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipState {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// `√β + μ`, kept in step with `beta`.
    scale: Vec<f64>,
    inv_scale: Vec<f64>,
    params: ClipParams,
}

impl ClipState {
    pub fn new(dim: usize, params: ClipParams) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        let problems = params.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(ClipState {
            alpha: vec![params.alpha0; dim],
            beta: vec![params.beta0; dim],
            scale: vec![params.beta0.sqrt() + params.mu; dim],
            inv_scale: vec![1.0 / (params.beta0.sqrt() + params.mu); dim],
            params,
        })
    }

    /// State with explicit statistics.
    pub fn with_statistics(alpha: Vec<f64>, beta: Vec<f64>, params: ClipParams) -> Result<Self> {
        check_len(alpha.len(), beta.len())?;
        check_finite(&alpha)?;
        check_finite(&beta)?;
        if beta.iter().any(|&b| b < 0.0) {
            return Err(Error::InvalidArgument("beta must be non-negative".into()));
        }
        let mut state = ClipState::new(alpha.len(), params)?;
        state.alpha = alpha;
        state.beta = beta;
        state.refresh_scale();
        Ok(state)
    }

    fn refresh_scale(&mut self) {
        let mu = self.params.mu;
        for ((s, inv), b) in self.scale.iter_mut().zip(self.inv_scale.iter_mut()).zip(&self.beta) {
            *s = b.sqrt() + mu;
            *inv = 1.0 / *s;
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn params(&self) -> &ClipParams {
        &self.params
    }

    pub fn clip(&self) -> f64 {
        self.params.clip
    }

    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }

    /// `(g − α) / (√β + μ)`.
    pub fn standardize(&self, g: &[f64]) -> Result<ParamVector> {
        check_len(self.dim(), g.len())?;
        let mut out = g.to_vec();
        self.standardize_in_place(&mut out);
        ParamVector::new(out)
    }

    pub(crate) fn standardize_in_place(&self, g: &mut [f64]) {
        for ((x, a), inv) in g.iter_mut().zip(&self.alpha).zip(&self.inv_scale) {
            *x = (*x - a) * inv;
        }
    }

    /// `m ⊙ standardize(m ⊙ g)` in one pass.
    pub(crate) fn standardize_masked_in_place(&self, g: &mut [f64], mask: &BinaryMask) {
        for (((x, a), inv), &on) in g.iter_mut().zip(&self.alpha).zip(&self.inv_scale).zip(mask.bits()) {
            *x = if on { (*x - a) * inv } else { 0.0 };
        }
    }

    /// `g_std ⊙ (√β + μ) + α`.
    pub fn restore(&self, g_std: &[f64]) -> Result<ParamVector> {
        check_len(self.dim(), g_std.len())?;
        let mut out = g_std.to_vec();
        self.restore_in_place(&mut out);
        ParamVector::new(out)
    }

    pub(crate) fn restore_in_place(&self, g: &mut [f64]) {
        for ((x, a), s) in g.iter_mut().zip(&self.alpha).zip(&self.scale) {
            *x = *x * s + a;
        }
    }

    /// `α ← γ1 α + (1 − γ1) ĝ`, `β ← γ2 β + (1 − γ2)(ĝ − α_old)²`.
    pub fn ema_update(&mut self, g_hat: &[f64]) -> Result<()> {
        check_len(self.dim(), g_hat.len())?;
        check_finite(g_hat)?;
        let (g1, g2) = (self.params.gamma1, self.params.gamma2);
        for ((a, b), &g) in self.alpha.iter_mut().zip(self.beta.iter_mut()).zip(g_hat) {
            let old = *a;
            *a = g1 * old + (1.0 - g1) * g;
            *b = g2 * *b + (1.0 - g2) * (g - old) * (g - old);
        }
        self.refresh_scale();
        Ok(())
    }
}

/// `g / max(1, ‖g‖/C)`.
pub fn clip_per_sample(g: &[f64], clip: f64) -> Result<ParamVector> {
    if !(clip > 0.0) {
        return Err(Error::InvalidArgument(format!("clip bound must be > 0, got {clip}")));
    }
    check_finite(g)?;
    let mut out = g.to_vec();
    clip_in_place(&mut out, clip);
    Ok(ParamVector::from_vec_unchecked(out))
}

pub(crate) fn clip_in_place(g: &mut [f64], clip: f64) {
    let factor = (norm_sq(g).sqrt() / clip).max(1.0);
    if factor > 1.0 {
        for x in g.iter_mut() {
            *x /= factor;
        }
    }
}
