//! Weight vectors for weighted nearest-neighbor classifiers.
//!
//! A weighted nearest-neighbor (WNN) classifier assigns weight `wᵢ` to the
//! `i`-th nearest training label. This module builds the standard schemes
//! (uniform k-NN, optimal weights, bagged 1-NN equivalents), converts an
//! oracle parameter into the local parameter each shard should use, and
//! evaluates the regularity conditions the asymptotic theory relies on.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ wᵢ = 1`.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// A normalized, nonnegative weight vector `w₁, …, w_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector {
    w: Vec<f64>,
    support: usize,
}

impl WeightVector {
    /// Validates nonnegativity, finiteness, and `Σw = 1 ± 1e-12`.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "w[{i}] = {} is negative or not finite",
                w[i]
            )));
        }
        let total = stable_sum(&w);
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        let support = w.iter().rposition(|&v| v > 0.0).map_or(0, |i| i + 1);
        Ok(Self { w, support })
    }

    /// Rescales nonnegative values to sum to one.
    pub fn normalized(mut w: Vec<f64>) -> Result<Self> {
        let total = stable_sum(&w);
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidWeights(format!("cannot normalize total {total}")));
        }
        for v in &mut w {
            *v /= total;
        }
        Self::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Number of leading positions up to and including the last nonzero
    /// weight. Only this many neighbors affect a prediction.
    pub fn support(&self) -> usize {
        self.support
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.w.windows(2).all(|p| p[1] <= p[0])
    }

    pub fn sum_of_squares(&self) -> f64 {
        stable_sum(self.w.iter().map(|v| v * v))
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.w
    }
}

/// Neumaier-compensated summation.
pub(crate) fn stable_sum<I>(values: I) -> f64
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<f64>,
{
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let v = *std::borrow::Borrow::borrow(&v);
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Rule that produces a weight vector for a given training size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum WeightScheme {
    /// Plain k-NN: `1/k` on the first `k` neighbors.
    UniformK { k: usize },
    /// Optimal weights with cutoff `m`.
    Ownn { m: usize },
    /// Geometric weights equivalent to bagged 1-NN with resampling ratio `q`.
    BnnGeometric { q: f64 },
    /// Fixed vector; only valid for training sets of exactly its length.
    Custom { weights: WeightVector },
}

impl WeightScheme {
    /// Materializes the scheme for `n` training points in dimension `d`.
    pub fn weights(&self, n: usize, d: usize) -> Result<WeightVector> {
        match self {
            WeightScheme::UniformK { k } => uniform_k_weights(n, *k),
            WeightScheme::Ownn { m } => ownn_weights(n, *m, d),
            WeightScheme::BnnGeometric { q } => bnn_weights(n, *q),
            WeightScheme::Custom { weights } => {
                if weights.len() != n {
                    return Err(Error::LengthMismatch {
                        left: weights.len(),
                        right: n,
                    });
                }
                Ok(weights.clone())
            }
        }
    }
}

/// `αᵢ = i^{1+2/d} − (i−1)^{1+2/d}`.
pub fn alpha(i: usize, d: usize) -> f64 {
    assert!(i >= 1 && d >= 1, "alpha requires i >= 1 and d >= 1");
    if i == 1 {
        return 1.0;
    }
    let p = 1.0 + 2.0 / d as f64;
    let prev = (i - 1) as f64;
    // (i-1)^p * ((1 + 1/(i-1))^p - 1), free of cancellation for large i.
    prev.powf(p) * (p * (1.0 / prev).ln_1p()).exp_m1()
}

/// `wᵢ = 1/k` for `i ≤ k`, zero after.
pub fn uniform_k_weights(n: usize, k: usize) -> Result<WeightVector> {
    if k == 0 || k > n {
        return Err(Error::out_of_range("k", k, format!("1 <= k <= {n}")));
    }
    let v = 1.0 / k as f64;
    let mut w = vec![0.0; n];
    w[..k].fill(v);
    WeightVector::new(w)
}

/// Optimal weights with cutoff `m`:
/// `wᵢ = (1/m)[1 + d/2 − d·αᵢ / (2 m^{2/d})]` for `i ≤ m`, zero after.
///
/// Negative entries (from rounding) are clamped to zero and the vector is
/// renormalized.
pub fn ownn_weights(n: usize, m: usize, d: usize) -> Result<WeightVector> {
    if m == 0 || m > n {
        return Err(Error::out_of_range("m", m, format!("1 <= m <= {n}")));
    }
    if d == 0 {
        return Err(Error::out_of_range("d", 0, "d >= 1"));
    }
    let df = d as f64;
    let mf = m as f64;
    let scale = df / (2.0 * mf.powf(2.0 / df));
    let mut w = vec![0.0; n];
    for (i, wi) in w.iter_mut().enumerate().take(m) {
        let v = (1.0 + df / 2.0 - scale * alpha(i + 1, d)) / mf;
        *wi = v.max(0.0);
    }
    WeightVector::normalized(w)
}

/// Geometric weights `q(1−q)^{i−1} / [1 − (1−q)^n]`.
pub fn bnn_weights(n: usize, q: f64) -> Result<WeightVector> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::out_of_range("q", q, "0 < q < 1"));
    }
    if n == 0 {
        return Err(Error::out_of_range("n", 0, "n >= 1"));
    }
    let log_keep = (-q).ln_1p();
    let denom = -(n as f64 * log_keep).exp_m1();
    let w = (0..n)
        .map(|i| q * (i as f64 * log_keep).exp() / denom)
        .collect();
    WeightVector::normalized(w)
}

/// `(π/2)^{d/(d+4)}`: rescaling applied to an oracle neighbor count when the
/// shards are combined by majority vote.
pub fn majority_scale(d: usize) -> f64 {
    let d = d as f64;
    FRAC_PI_2.powf(d / (d + 4.0))
}

/// Local `k` for majority-vote shards: `⌈(π/2)^{d/(d+4)} K/s⌉`, at least 1.
pub fn bridge_k_majority(k_oracle: usize, s: usize, d: usize) -> usize {
    let v = (majority_scale(d) * k_oracle as f64 / s.max(1) as f64).ceil();
    (v as usize).max(1)
}

/// Local `k` for weighted-vote shards: `⌈K/s⌉`, at least 1.
pub fn bridge_k_weighted(k_oracle: usize, s: usize) -> usize {
    k_oracle.div_ceil(s.max(1)).max(1)
}

/// Local OWNN cutoff for majority-vote shards: `⌈(π/2)^{d/(d+4)} m/s⌉`.
pub fn bridge_l_majority(m_oracle: usize, s: usize, d: usize) -> usize {
    bridge_k_majority(m_oracle, s, d)
}

/// Local OWNN cutoff for weighted-vote shards: `⌈m/s⌉`.
pub fn bridge_l_weighted(m_oracle: usize, s: usize) -> usize {
    bridge_k_weighted(m_oracle, s)
}

/// One measured condition: `value ≤ bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

impl Condition {
    fn le(value: f64, bound: f64) -> Self {
        Self {
            value,
            bound,
            holds: value <= bound,
        }
    }
}

/// Regularity conditions (w.1)–(w.5) of the admissible weight class, plus
/// the Berry–Esseen ratio diagnostic for majority voting over `s` shards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub beta: f64,
    pub n: usize,
    pub d: usize,
    pub k2: usize,
    /// `Σ wᵢ² ≤ n^{−β}`
    pub w1: Condition,
    /// `n^{−4/d} (Σ αᵢwᵢ)² ≤ n^{−β}`
    pub w2: Condition,
    /// `n^{2/d} Σ_{i>k₂} wᵢ / Σ αᵢwᵢ ≤ 1/log n`
    pub w3: Condition,
    /// `Σ_{i>k₂} wᵢ² / Σ wᵢ² ≤ 1/log n`
    pub w4: Condition,
    /// `Σ wᵢ³ / (Σ wᵢ²)^{3/2} ≤ 1/log n`
    pub w5: Condition,
    /// `Σ wᵢ³ / (Σ wᵢ²)^{3/2}` compared with `s^{−1/2} (log s)^{−2}`;
    /// `None` for `s < 2`, where the reference rate is undefined.
    pub shard_ratio: f64,
    pub shard_reference: Option<f64>,
}

impl AdmissibilityReport {
    pub fn all_hold(&self) -> bool {
        [self.w1, self.w2, self.w3, self.w4, self.w5]
            .iter()
            .all(|c| c.holds)
    }
}

/// Evaluates the admissibility conditions literally. Diagnostic only.
pub fn check_admissibility(
    w: &WeightVector,
    beta: f64,
    s: usize,
    d: usize,
) -> Result<AdmissibilityReport> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(Error::out_of_range("beta", beta, "0 < beta < 1/2"));
    }
    if d == 0 {
        return Err(Error::out_of_range("d", 0, "d >= 1"));
    }
    let w = w.as_slice();
    let n = w.len();
    let nf = n as f64;
    let df = d as f64;
    let k2 = (nf.powf(1.0 - beta).ceil() as usize).min(n);
    // 1/log n is +∞ for n = 1.
    let inv_log_n = 1.0 / nf.ln();

    let sum_sq = stable_sum(w.iter().map(|v| v * v));
    let sum_cube = stable_sum(w.iter().map(|v| v * v * v));
    let alpha_dot = stable_sum(
        w.iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, &v)| alpha(i + 1, d) * v),
    );
    let tail = stable_sum(&w[k2..]);
    let tail_sq = stable_sum(w[k2..].iter().map(|v| v * v));
    let n_beta = nf.powf(-beta);
    let ratio = sum_cube / sum_sq.powf(1.5);

    Ok(AdmissibilityReport {
        beta,
        n,
        d,
        k2,
        w1: Condition::le(sum_sq, n_beta),
        w2: Condition::le(nf.powf(-4.0 / df) * alpha_dot * alpha_dot, n_beta),
        w3: Condition::le(nf.powf(2.0 / df) * tail / alpha_dot, inv_log_n),
        w4: Condition::le(tail_sq / sum_sq, inv_log_n),
        w5: Condition::le(ratio, inv_log_n),
        shard_ratio: ratio,
        shard_reference: (s >= 2).then(|| {
            let sf = s as f64;
            sf.powf(-0.5) / sf.ln().powi(2)
        }),
    })
}
