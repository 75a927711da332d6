//! Scalar and vector primitives shared by every other module.
//!
//! Everything here is `f64` and deterministic. The only stateful item is
//! [`Rng`], a seedable xorshift64* generator whose output stream is fixed
//! by its seed on every platform.

use std::ops::Deref;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

/// A real embedding vector (image feature or class text embedding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps raw coordinates without normalizing them.
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    /// Builds a unit-norm vector from raw coordinates.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        let mut fv = FeatureVector(values);
        fv.normalize_in_place()?;
        Ok(fv)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn normalize_in_place(&mut self) -> Result<f64> {
        let n = norm(&self.0);
        if !(n > MIN_NORM) {
            return Err(Error::ZeroVector { norm: n });
        }
        self.0.iter_mut().for_each(|x| *x /= n);
        Ok(n)
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates that `probs` lies on the simplex (within 1e-6).
    pub fn try_new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidSimplex { sum });
        }
        Ok(ProbabilityVector(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        ProbabilityVector(vec![1.0 / classes as f64; classes])
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        ProbabilityVector(probs)
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn l2_normalize(v: &[f64]) -> Result<FeatureVector> {
    FeatureVector::unit(v.to_vec())
}

/// Cosine similarity of two nonzero vectors of equal length.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    for n in [nu, nv] {
        if !(n > MIN_NORM) {
            return Err(Error::ZeroVector { norm: n });
        }
    }
    // Product of the norms is symmetric, so the result is exactly symmetric.
    Ok(dot(u, v) / (nu * nv))
}

/// Temperature-scaled softmax with max subtraction.
pub fn softmax(scores: &[f64], tau: f64) -> Result<ProbabilityVector> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if scores.is_empty() {
        return Err(Error::InvalidSimplex { sum: 0.0 });
    }
    Ok(ProbabilityVector(softmax_raw(scores, tau)))
}

/// Unchecked softmax used on hot paths where `tau > 0` is already known.
pub(crate) fn softmax_raw(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|x| *x < 0.0) {
        return Err(Error::InvalidSimplex { sum });
    }
    Ok(entropy_raw(p))
}

pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Shift applied by the recurrence before the asymptotic series is used.
const ASYMPTOTIC_FROM: f64 = 6.0;

/// The digamma function ψ(x) for x > 0.
///
/// Shifts x upward with ψ(x) = ψ(x + 1) − 1/x until x ≥ 6, then evaluates
/// the asymptotic expansion through the x⁻¹⁰ term.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::DomainError {
            function: "digamma",
            x,
        });
    }
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2k / (2k x^2k), k = 1..5.
    let series = inv2
        * (1.0 / 12.0
            - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    shift + x.ln() - 0.5 * inv - series
}

/// The trigamma function ψ'(x) for x > 0, needed by the gradient of the
/// Dirichlet cross-entropy.
pub fn trigamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::DomainError {
            function: "trigamma",
            x,
        });
    }
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
    shift + series
}

/// Seedable xorshift64* generator.
///
/// The seed is expanded through one SplitMix64 step so that small or zero
/// seeds still produce a well-mixed nonzero state. Output of `next_u64` is
/// `state * 0x2545F4914F6CDD1D` after the (12, 25, 27) xorshift update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub const ALGORITHM: &'static str = "xorshift64*/splitmix64-seeded";

    pub fn seed_from(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            state = 0x9E37_79B9_7F4A_7C15;
        }
        Rng { state }
    }

    /// Independent stream for a tuple of indices (epoch, sample, template...).
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut h = splitmix64(seed);
        for &p in path {
            h = splitmix64(h ^ p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        }
        Rng::seed_from(h)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal deviate (Box–Muller, one value per call).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        rand::Rng::random_range(self, 0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        rand::seq::SliceRandom::shuffle(items, self);
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}
