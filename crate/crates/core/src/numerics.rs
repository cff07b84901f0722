//! Scalar and vector primitives shared by every other module.
//!
//! All training math runs in `f64`. Matrices are row-major [`ndarray::Array2`].

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
pub type Mat = Array2<f64>;

/// Floor applied to the second argument of [`kl_div`] before taking the log.
pub const EPS_KL: f64 = 1e-12;
/// Added to each norm in [`cosine_sim`].
pub const EPS_NORM: f64 = 1e-12;
/// Tolerance on the sum of a [`ProbVector`].
pub const PROB_SUM_TOL: f64 = 1e-6;

/// A discrete probability distribution over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty probability vector".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("probability entry {i} is {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidParameter(format!("probabilities sum to {sum}")));
        }
        Ok(ProbVector(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVector::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl std::ops::Deref for ProbVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax with max-subtraction.
pub fn softmax(logits: &[f64], tau: f64) -> Result<ProbVector> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, tau, &mut out)?;
    Ok(ProbVector(out))
}

/// Writes `softmax(logits / tau)` into `out` without allocating.
pub fn softmax_into(logits: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::InvalidParameter("softmax of an empty vector".into()));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if out.len() != logits.len() {
        return Err(Error::Dimension(format!(
            "softmax output has length {}, expected {}",
            out.len(),
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = ((z - max) / tau).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// `KL(p || q) = sum_k p_k ln(p_k / q_k)`, with `0 ln 0 = 0` and `q` floored at [`EPS_KL`].
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "kl_div lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk.ln() - qk.max(EPS_KL).ln()))
        .sum())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with [`EPS_NORM`] added to each norm.
///
/// Fails when both vectors are (near-)zero; a single zero vector yields 0.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine_sim lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= EPS_NORM && nb <= EPS_NORM {
        return Err(Error::DegenerateInput("cosine similarity of two zero vectors".into()));
    }
    Ok(dot(a, b) / ((na + EPS_NORM) * (nb + EPS_NORM)))
}

/// Seeded pseudo-random stream. Identical seeds give identical streams.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from `seed`, selected by `stream`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
