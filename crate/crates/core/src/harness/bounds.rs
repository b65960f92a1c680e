//! Convergence-bound checks on quadratic objectives, where the smoothness
//! constant and the minimum are known exactly.
//!
//! The objective is `L(θ) = (1/N) Σ ½‖θ − x_i‖²`, so `∇L(θ) = θ − x̄`,
//! `G = 1` and `min L = (1/N) Σ ½‖x_i − x̄‖²`.

use serde::Serialize;

use crate::data::{BatchSampler, Dataset};
use crate::dp_optim::{adadpigu_step, dpsgd_step, ClipParams, ClipState, GradSource, Sparsity};
use crate::error::{Error, Result};
use crate::math::{dot, energy_retention, norm_sq, retained_count, topk_mask, BinaryMask, ParamVector, SeededRng};
use crate::models::Quadratic;

/// Absolute slack added to the right-hand side of the strict checks.
pub const BOUND_SLACK: f64 = 1e-9;

/// Smoothness constant of the quadratic objective.
const G: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Supporting quantities, in a fixed order.
    pub details: Vec<(String, f64)>,
}

impl BoundReport {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

impl std::fmt::Display for BoundReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: lhs = {:.6e}, rhs = {:.6e}, margin = {:.3e} [{}]",
            self.name,
            self.lhs,
            self.rhs,
            self.margin(),
            if self.holds { "holds" } else { "violated" }
        )?;
        for (k, v) in &self.details {
            write!(f, "\n  {k} = {v:.6e}")?;
        }
        Ok(())
    }
}

/// Sample cloud for the quadratic objective: `x_i = center + spread·N(0, I)`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    data: Dataset,
    mean: Vec<f64>,
    min_loss: f64,
    max_dev_sq: f64,
}

impl QuadraticProblem {
    pub fn new(dim: usize, samples: usize, spread: f64, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 || samples == 0 {
            return Err(Error::InvalidArgument("dimension and sample count must be >= 1".into()));
        }
        if !(spread >= 0.0 && spread.is_finite()) {
            return Err(Error::InvalidArgument(format!("spread must be >= 0, got {spread}")));
        }
        let features: Vec<f64> = (0..dim * samples).map(|_| spread * rng.standard_normal()).collect();
        Self::from_points(features, dim)
    }

    pub fn from_points(features: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || features.len() % dim != 0 {
            return Err(Error::InvalidArgument("points must be a whole number of rows".into()));
        }
        let n = features.len() / dim;
        let data = Dataset::new(features, vec![0; n], dim, 1)?;
        let mut mean = vec![0.0; dim];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(data.features(i)) {
                *m += x / n as f64;
            }
        }
        let devs: Vec<f64> = (0..n)
            .map(|i| data.features(i).iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum())
            .collect();
        let min_loss = 0.5 * devs.iter().sum::<f64>() / n as f64;
        let max_dev_sq = devs.iter().cloned().fold(0.0, f64::max);
        Ok(QuadraticProblem { data, mean, min_loss, max_dev_sq })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn min_loss(&self) -> f64 {
        self.min_loss
    }

    /// `max_i ‖x_i − x̄‖²`, a bound on the per-sample gradient variance.
    pub fn gradient_variance_bound(&self) -> f64 {
        self.max_dev_sq
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        self.min_loss + 0.5 * theta.iter().zip(&self.mean).map(|(t, m)| (t - m) * (t - m)).sum::<f64>()
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.mean).map(|(t, m)| t - m).collect()
    }
}

fn check_common(eta: f64, steps: usize, batch: usize, samples: usize) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {eta}")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("horizon T must be >= 1".into()));
    }
    if batch == 0 || batch > samples {
        return Err(Error::BatchTooLarge { batch, size: samples });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ClippedBoundConfig {
    pub dim: usize,
    pub samples: usize,
    pub batch: usize,
    pub spread: f64,
    pub theta1: Vec<f64>,
    pub clip: f64,
    pub sigma: f64,
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ClippedBoundConfig {
    fn default() -> Self {
        ClippedBoundConfig {
            dim: 2,
            samples: 1000,
            batch: 100,
            spread: 0.1,
            theta1: vec![1.0, 0.0],
            clip: 10.0,
            sigma: 0.0,
            eta: 0.1,
            steps: 100,
            seed: 0,
        }
    }
}

/// Right-hand side of the clipped-SGD bound,
/// `ΔL/(Tη) + ηGC²/(2T)`.
pub fn clipped_bound_rhs(delta_loss: f64, eta: f64, clip: f64, steps: usize) -> f64 {
    let t = steps as f64;
    delta_loss / (t * eta) + eta * G * clip * clip / (2.0 * t)
}

/// Runs `T` clipped, noised DPSGD steps and compares
/// `(1/T) Σ ⟨∇L(θ_t), ḡ_t⟩` with [`clipped_bound_rhs`].
///
/// The descent-lemma bound `ΔL/(Tη) + (Gη/2)·mean‖ḡ_t‖²` is reported
/// alongside; it holds for every trajectory.
pub fn check_clipped_bound(cfg: &ClippedBoundConfig) -> Result<BoundReport> {
    check_common(cfg.eta, cfg.steps, cfg.batch, cfg.samples)?;
    if cfg.theta1.len() != cfg.dim {
        return Err(Error::LengthMismatch { expected: cfg.dim, found: cfg.theta1.len() });
    }
    let root = SeededRng::new(cfg.seed);
    let problem = QuadraticProblem::new(cfg.dim, cfg.samples, cfg.spread, &mut root.fork(1))?;
    let model = Quadratic::new(cfg.dim)?;
    let cs = ClipState::new(cfg.dim, ClipParams { clip: cfg.clip, sigma: cfg.sigma, ..ClipParams::default() })?;
    let mut sampler = BatchSampler::new(root.fork(2), cfg.samples, cfg.batch)?;
    let mut noise = root.fork(3);

    let mut theta = ParamVector::new(cfg.theta1.clone())?;
    let l1 = problem.loss(&theta);
    let mut inner = 0.0;
    let mut update_sq = 0.0;
    for _ in 0..cfg.steps {
        let grad = problem.grad(&theta);
        let idx = sampler.sample();
        let src = GradSource::Model { model: &model, data: problem.data(), indices: &idx };
        let rep = dpsgd_step(&mut theta, src, &cs, &mut noise, cfg.eta, None)?;
        inner += dot(&grad, &rep.update);
        update_sq += norm_sq(&rep.update);
    }
    let t = cfg.steps as f64;
    let delta_loss = l1 - problem.min_loss();
    let lhs = inner / t;
    let rhs = clipped_bound_rhs(delta_loss, cfg.eta, cfg.clip, cfg.steps);
    let descent = delta_loss / (t * cfg.eta) + 0.5 * G * cfg.eta * update_sq / t;
    Ok(BoundReport {
        name: "clipped-sgd".into(),
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_SLACK,
        details: vec![
            ("delta_loss".into(), delta_loss),
            ("final_loss_gap".into(), problem.loss(&theta) - problem.min_loss()),
            ("descent_lemma_rhs".into(), descent),
            ("mean_update_sq".into(), update_sq / t),
        ],
    })
}

#[derive(Debug, Clone)]
pub struct MaskedBoundConfig {
    pub dim: usize,
    pub samples: usize,
    pub batch: usize,
    pub spread: f64,
    /// Starting offset from the sample mean.
    pub offset: Vec<f64>,
    pub retention: f64,
    pub sigma: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for MaskedBoundConfig {
    fn default() -> Self {
        let mut offset = vec![0.1; 10];
        offset[0] = 5.0;
        offset[1] = 1.0;
        MaskedBoundConfig {
            dim: 10,
            samples: 1000,
            batch: 16,
            spread: 0.1,
            offset,
            retention: 0.5,
            sigma: 1.0,
            steps: 400,
            seed: 0,
        }
    }
}

/// Right-hand side of the masked-SGD bound,
/// `(2G/(α√T))·ΔL + (σ_g²/B + dσ²/B²)/√T`.
pub fn masked_bound_rhs(delta_loss: f64, alpha: f64, var_bound: f64, dim: usize, sigma: f64, batch: usize, steps: usize) -> f64 {
    let rt = (steps as f64).sqrt();
    let b = batch as f64;
    2.0 * G / (alpha * rt) * delta_loss + (var_bound / b + dim as f64 * sigma * sigma / (b * b)) / rt
}

/// Runs `θ ← θ − η·m⊙((Σ g_i + z)/B)` with `z ~ N(0, σ²I)`, `η = 1/(G√T)`
/// and `m` the top-`k` coordinates of `|∇L(θ_1)|`, then compares
/// `(1/T) Σ ‖∇L(θ_t)‖²` with [`masked_bound_rhs`] at the smallest
/// observed energy retention.
pub fn check_masked_bound(cfg: &MaskedBoundConfig) -> Result<BoundReport> {
    let eta = 1.0 / (G * (cfg.steps as f64).sqrt());
    check_common(eta, cfg.steps, cfg.batch, cfg.samples)?;
    if cfg.offset.len() != cfg.dim {
        return Err(Error::LengthMismatch { expected: cfg.dim, found: cfg.offset.len() });
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", cfg.sigma)));
    }
    let k = retained_count(cfg.retention, cfg.dim)?;
    let root = SeededRng::new(cfg.seed);
    let problem = QuadraticProblem::new(cfg.dim, cfg.samples, cfg.spread, &mut root.fork(1))?;
    let mut sampler = BatchSampler::new(root.fork(2), cfg.samples, cfg.batch)?;
    let mut noise = root.fork(3);

    let mut theta: Vec<f64> = problem.mean().iter().zip(&cfg.offset).map(|(m, o)| m + o).collect();
    let mask = topk_mask(&problem.grad(&theta), k)?;
    let l1 = problem.loss(&theta);
    let b = cfg.batch as f64;
    let mut grad_sq = 0.0;
    let mut alpha_min = f64::INFINITY;
    for _ in 0..cfg.steps {
        let grad = problem.grad(&theta);
        let energy = norm_sq(&grad);
        grad_sq += energy;
        if energy > 0.0 {
            alpha_min = alpha_min.min(energy_retention(&grad, &mask)?);
        }
        let mut agg = vec![0.0; cfg.dim];
        for &i in &sampler.sample() {
            for ((a, t), x) in agg.iter_mut().zip(&theta).zip(problem.data().features(i)) {
                *a += t - x;
            }
        }
        for (j, (t, a)) in theta.iter_mut().zip(&agg).enumerate() {
            if mask.get(j) {
                *t -= eta * (a + cfg.sigma * noise.standard_normal()) / b;
            }
        }
    }
    if !alpha_min.is_finite() {
        alpha_min = 1.0;
    }
    let delta_loss = l1 - problem.min_loss();
    let lhs = grad_sq / cfg.steps as f64;
    let var_bound = problem.gradient_variance_bound();
    let rhs = masked_bound_rhs(delta_loss, alpha_min, var_bound, cfg.dim, cfg.sigma, cfg.batch, cfg.steps);
    Ok(BoundReport {
        name: "masked-sgd".into(),
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_SLACK,
        details: vec![
            ("delta_loss".into(), delta_loss),
            ("alpha_min".into(), alpha_min),
            ("variance_bound".into(), var_bound),
            ("mask_size".into(), k as f64),
            ("eta".into(), eta),
        ],
    })
}

/// Per-step right-hand side of the masked adaptive-clipping bound,
/// `(L_t − L_{t+1})/η + (Gη/2)(C² + α_t dσ²C²/B)`.
pub fn adaptive_step_rhs(
    loss_now: f64,
    loss_next: f64,
    eta: f64,
    clip: f64,
    alpha: f64,
    dim: usize,
    sigma: f64,
    batch: usize,
) -> f64 {
    (loss_now - loss_next) / eta
        + 0.5 * G * eta * (clip * clip + alpha * dim as f64 * sigma * sigma * clip * clip / batch as f64)
}

#[derive(Debug, Clone)]
pub struct AdaptiveBoundConfig {
    pub dim: usize,
    pub samples: usize,
    pub batch: usize,
    pub spread: f64,
    pub offset: Vec<f64>,
    pub retention: f64,
    pub clip: f64,
    pub sigma: f64,
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for AdaptiveBoundConfig {
    fn default() -> Self {
        let MaskedBoundConfig { dim, samples, batch, spread, offset, .. } = MaskedBoundConfig::default();
        AdaptiveBoundConfig {
            dim,
            samples,
            batch,
            spread,
            offset,
            retention: 0.5,
            clip: 1.0,
            sigma: 1.0,
            eta: 0.1,
            steps: 200,
            seed: 0,
        }
    }
}

/// Qualitative check of the masked adaptive-clipping bound.
///
/// Holds when the per-step right-hand side grows with both `σ` and `d`
/// and every observed `⟨∇L(θ_t), g̃_t⟩` is finite. `lhs` and `rhs` are
/// the step averages; the fraction of steps on which the per-step
/// inequality held is reported as a detail.
pub fn check_adaptive_bound(cfg: &AdaptiveBoundConfig) -> Result<BoundReport> {
    check_common(cfg.eta, cfg.steps, cfg.batch, cfg.samples)?;
    if cfg.offset.len() != cfg.dim {
        return Err(Error::LengthMismatch { expected: cfg.dim, found: cfg.offset.len() });
    }
    let k = retained_count(cfg.retention, cfg.dim)?;
    let root = SeededRng::new(cfg.seed);
    let problem = QuadraticProblem::new(cfg.dim, cfg.samples, cfg.spread, &mut root.fork(1))?;
    let model = Quadratic::new(cfg.dim)?;
    let params = ClipParams {
        mu: 1.0,
        gamma1: 1.0,
        gamma2: 1.0,
        alpha0: 0.0,
        beta0: 0.0,
        clip: cfg.clip,
        sigma: cfg.sigma,
    };
    let mut cs = ClipState::new(cfg.dim, params)?;
    let mut sampler = BatchSampler::new(root.fork(2), cfg.samples, cfg.batch)?;
    let mut noise = root.fork(3);

    let start: Vec<f64> = problem.mean().iter().zip(&cfg.offset).map(|(m, o)| m + o).collect();
    let mask: BinaryMask = topk_mask(&problem.grad(&start), k)?;
    let mut theta = ParamVector::new(start)?;
    let (mut lhs_sum, mut rhs_sum, mut held, mut finite) = (0.0, 0.0, 0usize, true);
    for _ in 0..cfg.steps {
        let grad = problem.grad(&theta);
        let alpha = if norm_sq(&grad) > 0.0 { energy_retention(&grad, &mask)? } else { 1.0 };
        let before = problem.loss(&theta);
        let idx = sampler.sample();
        let src = GradSource::Model { model: &model, data: problem.data(), indices: &idx };
        let rep = adadpigu_step(&mut theta, src, Sparsity::Mask(&mask), &mut cs, &mut noise, cfg.eta, None)?;
        let lhs = dot(&grad, &rep.update);
        let rhs = adaptive_step_rhs(before, problem.loss(&theta), cfg.eta, cfg.clip, alpha, cfg.dim, cfg.sigma, cfg.batch);
        finite &= lhs.is_finite();
        if lhs <= rhs + BOUND_SLACK {
            held += 1;
        }
        lhs_sum += lhs;
        rhs_sum += rhs;
    }
    let probe = |sigma: f64, dim: usize| adaptive_step_rhs(1.0, 0.5, cfg.eta, cfg.clip, 0.5, dim, sigma, cfg.batch);
    let sigma_monotone = probe(0.0, cfg.dim) < probe(1.0, cfg.dim) && probe(1.0, cfg.dim) < probe(2.0, cfg.dim);
    let dim_monotone = probe(1.0, cfg.dim) < probe(1.0, 2 * cfg.dim);
    let t = cfg.steps as f64;
    Ok(BoundReport {
        name: "masked-adaptive".into(),
        lhs: lhs_sum / t,
        rhs: rhs_sum / t,
        holds: finite && sigma_monotone && dim_monotone,
        details: vec![
            ("fraction_of_steps_held".into(), held as f64 / t),
            ("rhs_monotone_in_sigma".into(), f64::from(u8::from(sigma_monotone))),
            ("rhs_monotone_in_dim".into(), f64::from(u8::from(dim_monotone))),
            ("mask_size".into(), k as f64),
        ],
    })
}
