//! Dense vector primitives shared by the optimizer, accountant and models.
//!
//! All reductions run left to right over coordinates so that seeded runs are
//! bit-reproducible.

use std::ops::{Deref, DerefMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Flat parameter or gradient vector of fixed dimension `d >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("vector dimension must be >= 1".into()));
        }
        check_finite(&values)?;
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        ParamVector(vec![value; dim])
    }

    /// Wraps values produced by internal arithmetic whose finiteness the
    /// caller has already established.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

/// Dense {0,1} mask over the `d` coordinates of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    bits: Vec<bool>,
    ones: usize,
}

impl BinaryMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let ones = bits.iter().filter(|&&b| b).count();
        BinaryMask { bits, ones }
    }

    pub fn ones(dim: usize) -> Self {
        BinaryMask {
            bits: vec![true; dim],
            ones: dim,
        }
    }

    /// Mask with ones exactly at `indices` (duplicates are ignored).
    pub fn from_indices(dim: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; dim];
        for &i in indices {
            if i >= dim {
                return Err(Error::InvalidArgument(format!(
                    "mask index {i} out of range for dimension {dim}"
                )));
            }
            bits[i] = true;
        }
        Ok(BinaryMask::from_bits(bits))
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn ones_count(&self) -> usize {
        self.ones
    }

    pub fn is_full(&self) -> bool {
        self.ones == self.bits.len()
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// True when every active coordinate of `other` is active here.
    pub fn is_superset_of(&self, other: &BinaryMask) -> bool {
        self.dim() == other.dim() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }

    /// In-place `v <- m ⊙ v`.
    pub(crate) fn apply_in_place(&self, v: &mut [f64]) {
        if self.is_full() {
            return;
        }
        for (x, &keep) in v.iter_mut().zip(&self.bits) {
            if !keep {
                *x = 0.0;
            }
        }
    }
}

/// Deterministic random stream keyed by a 64-bit seed and a stream id.
///
/// A single instance is single-owner mutable state; independent consumers
/// (initialisation, batch sampling, noise) should each take their own
/// [`fork`](SeededRng::fork).
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, stream, inner }
    }

    /// Fresh independent stream derived from the same seed.
    pub fn fork(&self, stream: u64) -> SeededRng {
        SeededRng::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[low, high)`.
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub(crate) fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

#[inline]
pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Euclidean norm `sqrt(Σ v_i²)`.
pub fn l2_norm(v: &[f64]) -> Result<f64> {
    check_finite(v)?;
    Ok(norm_sq(v).sqrt())
}

/// Coordinates ordered by descending `key`, ties by ascending index.
pub(crate) fn rank_descending(key: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..key.len()).collect();
    // stable sort keeps the lower index first among equal keys
    order.sort_by(|&a, &b| key[b].total_cmp(&key[a]));
    order
}

/// Mask selecting the `k` coordinates of largest magnitude; ties go to the
/// lower index.
pub fn topk_mask(v: &[f64], k: usize) -> Result<BinaryMask> {
    let dim = v.len();
    if k == 0 || k > dim {
        return Err(Error::TopKOutOfRange { k, dim });
    }
    check_finite(v)?;
    let magnitudes: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let order = rank_descending(&magnitudes);
    BinaryMask::from_indices(dim, &order[..k])
}

/// Fraction of squared norm kept by the mask, `‖m⊙v‖² / ‖v‖²`.
pub fn energy_retention(v: &[f64], mask: &BinaryMask) -> Result<f64> {
    check_len(v.len(), mask.dim())?;
    check_finite(v)?;
    let total = norm_sq(v);
    if total == 0.0 {
        return Err(Error::ZeroVector);
    }
    let kept = v
        .iter()
        .zip(mask.bits())
        .fold(0.0, |acc, (x, &m)| if m { acc + x * x } else { acc });
    Ok(kept / total)
}

/// Elementwise product `m ⊙ v`.
pub fn masked_apply(mask: &BinaryMask, v: &[f64]) -> Result<ParamVector> {
    check_len(mask.dim(), v.len())?;
    let out = v
        .iter()
        .zip(mask.bits())
        .map(|(&x, &m)| if m { x } else { 0.0 })
        .collect();
    Ok(ParamVector::from_vec_unchecked(out))
}

/// `d` independent draws from `N(0, std²)`. A zero `std` yields the zero
/// vector without consuming randomness.
pub fn gaussian_vector(rng: &mut SeededRng, dim: usize, std: f64) -> Result<ParamVector> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "standard deviation must be finite and >= 0, got {std}"
        )));
    }
    if std == 0.0 {
        return Ok(ParamVector::zeros(dim));
    }
    let out = (0..dim).map(|_| std * rng.standard_normal()).collect();
    Ok(ParamVector::from_vec_unchecked(out))
}

/// `max(1, ⌊r·d⌋)`. The product is nudged by 1e-9 first so that decimal
/// ratios such as 0.29 · 100 are not floored one short.
pub fn retained_count(r: f64, dim: usize) -> Result<usize> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("retention ratio must lie in (0, 1], got {r}")));
    }
    let k = (r * dim as f64 + 1e-9).floor() as usize;
    Ok(k.clamp(1, dim.max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::from_bits(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2_norm(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn l2_norm_rejects_non_finite() {
        assert!(matches!(
            l2_norm(&[1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(l2_norm(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn param_vector_rejects_empty_and_nan() {
        assert!(ParamVector::new(vec![]).is_err());
        assert!(ParamVector::new(vec![0.0, f64::NEG_INFINITY]).is_err());
        assert_eq!(ParamVector::new(vec![1.0]).unwrap().dim(), 1);
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_mask(&[0.1, -0.5, 0.3, 0.0], 2).unwrap(), mask(&[0, 1, 1, 0]));
        assert_eq!(topk_mask(&[7.0], 1).unwrap(), mask(&[1]));
        assert_eq!(topk_mask(&[2.0, 2.0, 1.0], 1).unwrap(), mask(&[1, 0, 0]));
    }

    #[test]
    fn topk_rejects_out_of_range_k() {
        assert!(matches!(
            topk_mask(&[1.0, 2.0], 0),
            Err(Error::TopKOutOfRange { k: 0, dim: 2 })
        ));
        assert!(topk_mask(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn energy_retention_examples() {
        let v = [1.0, 1.0, 1.0, 1.0];
        let m = topk_mask(&v, 2).unwrap();
        assert_eq!(energy_retention(&v, &m).unwrap(), 0.5);
        assert_eq!(energy_retention(&[5.0, 0.0, 0.0], &mask(&[1, 0, 0])).unwrap(), 1.0);
        assert!((energy_retention(&[3.0, 4.0], &mask(&[1, 0])).unwrap() - 0.36).abs() < 1e-15);
    }

    #[test]
    fn energy_retention_rejects_zero_vector() {
        assert!(matches!(
            energy_retention(&[0.0, 0.0], &BinaryMask::ones(2)),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn masked_apply_examples() {
        assert_eq!(masked_apply(&mask(&[1, 0]), &[2.0, 3.0]).unwrap().as_slice(), &[2.0, 0.0]);
        let v = [1.5, -2.0, 0.25];
        assert_eq!(masked_apply(&BinaryMask::ones(3), &v).unwrap().as_slice(), &v);
        assert_eq!(
            masked_apply(&mask(&[0, 1, 1]), &[9.0, -1.0, 4.0]).unwrap().as_slice(),
            &[0.0, -1.0, 4.0]
        );
        assert!(matches!(
            masked_apply(&mask(&[1]), &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_zero_std_is_exact_zero() {
        let mut rng = SeededRng::new(3);
        assert_eq!(gaussian_vector(&mut rng, 3, 0.0).unwrap().as_slice(), &[0.0; 3]);
    }

    #[test]
    fn gaussian_is_seed_deterministic() {
        let a = gaussian_vector(&mut SeededRng::new(42), 16, 1.0).unwrap();
        let b = gaussian_vector(&mut SeededRng::new(42), 16, 1.0).unwrap();
        assert_eq!(a, b);
        let c = gaussian_vector(&mut SeededRng::new(43), 16, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forked_streams_differ() {
        let root = SeededRng::new(9);
        let a = gaussian_vector(&mut root.fork(1), 8, 1.0).unwrap();
        let b = gaussian_vector(&mut root.fork(2), 8, 1.0).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, gaussian_vector(&mut root.fork(1), 8, 1.0).unwrap());
    }

    #[test]
    fn gaussian_variance_matches_std() {
        // Sample variance of 1e5 draws from N(0, 4) has std ≈ 4·sqrt(2/n) ≈ 0.018,
        // so [3.9, 4.1] is more than 5 standard errors wide.
        let v = gaussian_vector(&mut SeededRng::new(7), 100_000, 2.0).unwrap();
        let n = v.dim() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!((3.9..=4.1).contains(&var), "variance {var}");
    }

    #[test]
    fn gaussian_mean_within_four_standard_errors() {
        let sigma = 1.5;
        let n = 1_000_000;
        let v = gaussian_vector(&mut SeededRng::new(11), n, sigma).unwrap();
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn superset_relation() {
        assert!(mask(&[1, 1, 0]).is_superset_of(&mask(&[1, 0, 0])));
        assert!(!mask(&[0, 1, 0]).is_superset_of(&mask(&[1, 0, 0])));
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..16)
            .prop_filter("non-zero", |v| v.iter().any(|x| *x != 0.0))
    }

    #[test]
    fn retained_count_floors_with_minimum_one() {
        assert_eq!(retained_count(0.6, 10).unwrap(), 6);
        assert_eq!(retained_count(0.29, 100).unwrap(), 29);
        assert_eq!(retained_count(0.01, 10).unwrap(), 1);
        assert_eq!(retained_count(1.0, 7).unwrap(), 7);
        assert!(retained_count(0.0, 7).is_err());
    }

    proptest! {
        #[test]
        fn inner_product_identity(v in nonzero_vec(), kf in 0.0f64..1.0) {
            let k = 1 + (kf * (v.len() - 1) as f64) as usize;
            let m = topk_mask(&v, k).unwrap();
            let mv = masked_apply(&m, &v).unwrap();
            let lhs = dot(&v, &mv);
            let rhs = norm_sq(&mv);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }

        #[test]
        fn retention_at_least_k_over_d(v in nonzero_vec(), kf in 0.0f64..1.0) {
            let d = v.len();
            let k = 1 + (kf * (d - 1) as f64) as usize;
            let m = topk_mask(&v, k).unwrap();
            prop_assert_eq!(m.ones_count(), k);
            let a = energy_retention(&v, &m).unwrap();
            prop_assert!(a * d as f64 >= k as f64 * (1.0 - 1e-12));
        }

        #[test]
        fn equal_magnitudes_give_exact_ratio(c in 0.1f64..5.0, signs in prop::collection::vec(any::<bool>(), 1..16), kf in 0.0f64..1.0) {
            let d = signs.len();
            let v: Vec<f64> = signs.iter().map(|&s| if s { c } else { -c }).collect();
            let k = 1 + (kf * (d - 1) as f64) as usize;
            let a = energy_retention(&v, &topk_mask(&v, k).unwrap()).unwrap();
            prop_assert!((a - k as f64 / d as f64).abs() <= 4.0 * f64::EPSILON);
        }

        #[test]
        fn topk_is_permutation_consistent(v in prop::collection::vec(-100.0f64..100.0, 2..12), seed in any::<u64>(), kf in 0.0f64..1.0) {
            let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
            mags.sort_by(f64::total_cmp);
            prop_assume!(mags.windows(2).all(|w| w[0] != w[1]));
            let d = v.len();
            let k = 1 + (kf * (d - 1) as f64) as usize;
            let mut perm: Vec<usize> = (0..d).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut SeededRng::new(seed));
            let permuted: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            let m = topk_mask(&v, k).unwrap();
            let pm = topk_mask(&permuted, k).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(pm.get(j), m.get(i));
            }
        }
    }
}
