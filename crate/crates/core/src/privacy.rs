//! Privacy accounting for the subsampled Gaussian mechanism.
//!
//! Two accountants share one per-step moment bound, `K(λ) ≤ q²λ²/σ²`,
//! which in Rényi form is `ε_α = q²(α − 1)/σ²` per step:
//!
//! * the closed form `ε = 2q√(T ln(1/δ))/σ`, which is the exact minimum of
//!   `T·ε_α + ln(1/δ)/(α − 1)` over all real `α > 1`;
//! * a grid accountant which composes the curve over `T` steps and
//!   minimises the conversion over a fixed set of orders.
//!
//! The grid value is therefore never below the closed form; the two agree
//! to well under one percent whenever the optimal order falls inside the
//! grid.

use log::warn;

use crate::error::{Error, Result};
use crate::math::BinaryMask;

/// Relative gap between the two accountants above which a warning is logged.
pub const AGREEMENT_TOLERANCE: f64 = 0.05;

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn check_rate(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sampling rate q must lie in (0, 1], got {q}")))
    }
}

/// Classical Gaussian-mechanism calibration `σ = S √(2 ln(1.25/δ)) / ε`.
pub fn gaussian_sigma_for(sensitivity: f64, eps: f64, delta: f64) -> Result<f64> {
    positive("sensitivity", sensitivity)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    check_delta(delta)?;
    Ok(sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / eps)
}

/// Noise multiplier `σ = 2q√(T ln(1/δ))/ε` for `T` subsampled steps.
pub fn dpsgd_sigma(eps: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    positive("epsilon", eps)?;
    check_delta(delta)?;
    check_rate(q)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    Ok(2.0 * q * (steps as f64 * (1.0 / delta).ln()).sqrt() / eps)
}

/// Inverse of [`dpsgd_sigma`]: `ε = 2q√(T ln(1/δ))/σ`; zero when `T = 0`.
pub fn dpsgd_epsilon(sigma: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    check_delta(delta)?;
    check_rate(q)?;
    if steps == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * q * (steps as f64 * (1.0 / delta).ln()).sqrt() / sigma)
}

/// `(α, ε)`-RDP to `(ε + ln(1/δ)/(α − 1), δ)`-DP.
pub fn rdp_to_dp(alpha: f64, rdp_eps: f64, delta: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidArgument(format!("order alpha must exceed 1, got {alpha}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(rdp_eps + (1.0 / delta).ln() / (alpha - 1.0))
}

/// `ε' = ln(1 + q(e^ε − 1))`, `δ' = qδ`.
pub fn amplify_by_subsampling(eps: f64, delta: f64, q: f64) -> Result<(f64, f64)> {
    check_rate(q)?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {eps}")));
    }
    Ok(((q * eps.exp_m1()).ln_1p(), q * delta))
}

/// Rényi-DP guarantee tabulated on a grid of orders.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    orders: Vec<f64>,
    eps: Vec<f64>,
}

impl RdpCurve {
    /// `{1.25, 1.5, 2, 3, …, 256}`.
    pub fn default_orders() -> Vec<f64> {
        let mut orders = vec![1.25, 1.5];
        orders.extend((2..=256).map(f64::from));
        orders
    }

    pub fn new(orders: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        if orders.len() != eps.len() {
            return Err(Error::LengthMismatch {
                expected: orders.len(),
                found: eps.len(),
            });
        }
        if orders.iter().any(|&a| !(a > 1.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument("every order must be finite and > 1".into()));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("orders must be strictly increasing".into()));
        }
        if let Some(i) = eps.iter().position(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::InvalidArgument(format!("rdp epsilon at order {} is invalid", orders[i])));
        }
        Ok(RdpCurve { orders, eps })
    }

    /// Per-step bound `q²(α − 1)/σ²` of the subsampled Gaussian mechanism.
    pub fn subsampled_gaussian(q: f64, sigma: f64, orders: &[f64]) -> Result<Self> {
        check_rate(q)?;
        positive("sigma", sigma)?;
        let eps = orders.iter().map(|&a| q * q * (a - 1.0) / (sigma * sigma)).collect();
        RdpCurve::new(orders.to_vec(), eps)
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.eps
    }

    /// Sequential composition: pointwise sum on a shared grid.
    pub fn compose(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if self.orders != other.orders {
            return Err(Error::InvalidArgument("cannot compose curves on different grids".into()));
        }
        let eps = self.eps.iter().zip(&other.eps).map(|(a, b)| a + b).collect();
        Ok(RdpCurve {
            orders: self.orders.clone(),
            eps,
        })
    }

    /// `T`-fold self-composition.
    pub fn scale(&self, steps: u64) -> RdpCurve {
        RdpCurve {
            orders: self.orders.clone(),
            eps: self.eps.iter().map(|e| e * steps as f64).collect(),
        }
    }

    /// Best `(α, ε)` after conversion at `δ`.
    pub fn best_order(&self, delta: f64) -> Result<(f64, f64)> {
        if self.orders.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let mut best = (self.orders[0], f64::INFINITY);
        for (&a, &e) in self.orders.iter().zip(&self.eps) {
            let dp = rdp_to_dp(a, e, delta)?;
            if dp < best.1 {
                best = (a, dp);
            }
        }
        if self.orders.len() > 2 && (best.0 == self.orders[0] || best.0 == *self.orders.last().unwrap()) {
            warn!(
                "optimal Renyi order {} sits on the grid boundary; the reported epsilon {:.6} may be loose",
                best.0, best.1
            );
        }
        Ok(best)
    }
}

/// Composes a per-step curve over `T` steps and returns the smallest
/// converted `ε` on its grid.
pub fn compose_and_convert(curve_per_step: &RdpCurve, steps: u64, delta: f64) -> Result<f64> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    Ok(curve_per_step.scale(steps).best_order(delta)?.1)
}

/// Grid-accountant `ε` for the subsampled Gaussian over the default orders.
pub fn grid_epsilon(sigma: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if steps == 0 {
        return Ok(0.0);
    }
    let curve = RdpCurve::subsampled_gaussian(q, sigma, &RdpCurve::default_orders())?;
    compose_and_convert(&curve, steps, delta)
}

/// Smallest `σ` (to 1e-10 relative) whose grid-accountant `ε` meets `eps`.
pub fn grid_sigma_for(eps: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    let closed = dpsgd_sigma(eps, delta, q, steps)?;
    let (mut lo, mut hi) = (closed * 0.5, closed * 2.0);
    while grid_epsilon(hi, delta, q, steps)? > eps {
        hi *= 2.0;
    }
    while grid_epsilon(lo, delta, q, steps)? <= eps {
        lo *= 0.5;
    }
    while (hi - lo) > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if grid_epsilon(mid, delta, q, steps)? > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `|grid − closed| / closed`, logging a warning above [`AGREEMENT_TOLERANCE`].
pub fn accountant_gap(closed: f64, grid: f64) -> f64 {
    if closed == 0.0 {
        return if grid == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let gap = (grid - closed).abs() / closed;
    if gap > AGREEMENT_TOLERANCE {
        warn!("accountants disagree: closed-form epsilon {closed:.6}, grid epsilon {grid:.6} ({:.1}% apart)", gap * 100.0);
    }
    gap
}

/// Noise multipliers reported for each target ε, keyed by dataset.
pub const SIGMA_PRESETS: &[(&str, &[(f64, f64)])] = &[
    ("mnist", &[(2.0, 4.64), (4.0, 2.49), (6.0, 1.79), (8.0, 1.45), (10.0, 1.25), (12.0, 1.12)]),
    ("cifar", &[(2.0, 3.62), (4.0, 1.98), (6.0, 1.45), (8.0, 1.2), (10.0, 1.05), (12.0, 0.95)]),
];

/// Preset σ for `(dataset, ε)`; `fmnist` shares the MNIST column.
pub fn preset_sigma(dataset: &str, eps: f64) -> Option<f64> {
    let key = match dataset {
        "fmnist" | "fashion-mnist" => "mnist",
        "cifar10" | "cifar-10" => "cifar",
        other => other,
    };
    SIGMA_PRESETS
        .iter()
        .find(|(name, _)| *name == key)
        .and_then(|(_, rows)| rows.iter().find(|(e, _)| (e - eps).abs() < 1e-9))
        .map(|&(_, s)| s)
}

/// Running budget of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    q: f64,
    sigma: f64,
    steps: u64,
    delta: f64,
}

impl PrivacyLedger {
    pub fn new(q: f64, sigma: f64, delta: f64) -> Result<Self> {
        check_rate(q)?;
        positive("sigma", sigma)?;
        check_delta(delta)?;
        Ok(PrivacyLedger {
            q,
            sigma,
            steps: 0,
            delta,
        })
    }

    /// `q = batch / size`.
    pub fn for_sampling(batch: usize, size: usize, sigma: f64, delta: f64) -> Result<Self> {
        if batch == 0 || batch > size {
            return Err(Error::BatchTooLarge { batch, size });
        }
        PrivacyLedger::new(batch as f64 / size as f64, sigma, delta)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Records one noisy aggregation.
    pub fn record_step(&mut self) {
        self.steps += 1;
    }

    /// Closed-form `ε` spent so far.
    pub fn epsilon(&self) -> f64 {
        dpsgd_epsilon(self.sigma, self.delta, self.q, self.steps).expect("ledger parameters validated at construction")
    }

    /// Grid-accountant `ε` spent so far.
    pub fn grid_epsilon(&self) -> Result<f64> {
        grid_epsilon(self.sigma, self.delta, self.q, self.steps)
    }
}

/// Budget of the masked mechanism `m ⊙ (Σ ḡ + N(0, σ²C²I))`. Masking with a
/// data-independent mask is post-processing, so the mask does not enter.
pub fn masked_mechanism_budget(ledger: &PrivacyLedger, _mask: &BinaryMask) -> f64 {
    ledger.epsilon()
}
