//! Finite truncations of ℓ¹ sequences, sign patterns and index-set families.
//!
//! Positions are 0-based storage offsets. A sequence may carry an
//! `index_origin` so that position `k` stands for the mathematical index
//! `index_origin + k` (used for ℤ-indexed Fourier coefficients).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSequence {
    coeffs: Vec<f64>,
    #[serde(default)]
    index_origin: i64,
}

impl TruncatedSequence {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs,
            index_origin: 0,
        }
    }

    pub fn with_origin(coeffs: Vec<f64>, index_origin: i64) -> Self {
        Self { coeffs, index_origin }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    /// Unit sequence with a one at storage position `k`.
    pub fn unit(len: usize, k: usize) -> Self {
        let mut coeffs = vec![0.0; len];
        coeffs[k] = 1.0;
        Self::new(coeffs)
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn index_origin(&self) -> i64 {
        self.index_origin
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v.abs()).sum()
    }

    pub fn support(&self) -> Vec<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    /// `sgn x` as a sign pattern on the support of `x`.
    pub fn sign_pattern(&self) -> SignPattern {
        let entries = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| (k, if *v > 0.0 { Sign::Plus } else { Sign::Minus }))
            .collect::<Vec<_>>();
        SignPattern::from_sorted(entries)
    }

    /// `self - other`, keeping this sequence's origin.
    pub fn sub(&self, other: &TruncatedSequence) -> TruncatedSequence {
        assert_eq!(self.len(), other.len(), "length mismatch in sequence difference");
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Self::with_origin(coeffs, self.index_origin)
    }

    pub fn scaled(&self, s: f64) -> TruncatedSequence {
        Self::with_origin(self.coeffs.iter().map(|v| s * v).collect(), self.index_origin)
    }
}

impl From<Vec<f64>> for TruncatedSequence {
    fn from(coeffs: Vec<f64>) -> Self {
        Self::new(coeffs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Minus => -1.0,
            Sign::Plus => 1.0,
        }
    }
}

/// A sequence ξ with entries in {-1, 0, +1}, stored as its support together
/// with the signs on it.
///
/// Patterns order lexicographically by support first, then by signs with
/// `Minus < Plus`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignPattern {
    support: Vec<usize>,
    signs: Vec<Sign>,
}

impl SignPattern {
    /// Builds a pattern from `(position, sign)` pairs in any order.
    ///
    /// Panics on duplicate positions.
    pub fn new(mut entries: Vec<(usize, Sign)>) -> Self {
        entries.sort_by_key(|(k, _)| *k);
        for w in entries.windows(2) {
            assert!(w[0].0 != w[1].0, "duplicate position {} in sign pattern", w[0].0);
        }
        Self::from_sorted(entries)
    }

    fn from_sorted(entries: Vec<(usize, Sign)>) -> Self {
        let (support, signs) = entries.into_iter().unzip();
        Self { support, signs }
    }

    /// Pattern with the given signs (+1 / -1) on a strictly increasing support.
    pub fn from_values(support: &[usize], values: &[f64]) -> Self {
        assert_eq!(support.len(), values.len());
        Self::new(
            support
                .iter()
                .zip(values)
                .map(|(&k, &v)| (k, if v < 0.0 { Sign::Minus } else { Sign::Plus }))
                .collect(),
        )
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn signs(&self) -> &[Sign] {
        &self.signs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn sign_values(&self) -> Vec<f64> {
        self.signs.iter().map(|s| s.value()).collect()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&k, s) in self.support.iter().zip(&self.signs) {
            out[k] = s.value();
        }
        out
    }
}

impl PartialOrd for SignPattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SignPattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.support
            .cmp(&other.support)
            .then_with(|| self.signs.cmp(&other.signs))
    }
}

/// The families 𝓜ₙ of admissible index sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexSetFamily {
    /// 𝓜ₙ = {{1, …, n}}.
    Prefix,
    /// 𝓜ₙ = {M : |M| = n}.
    AllSubsets,
}

impl IndexSetFamily {
    /// `inf_{M ∈ 𝓜ₙ} ‖(I - P_M) x‖₁`.
    pub fn tail(self, x: &TruncatedSequence, n: usize) -> f64 {
        match self {
            IndexSetFamily::Prefix => prefix_tail(x, n),
            IndexSetFamily::AllSubsets => sorted_tail(x, n),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IndexSetFamily::Prefix => "prefix",
            IndexSetFamily::AllSubsets => "all-subsets",
        }
    }
}

/// `P_M x`: keeps the entries at positions in `m`, zeroes the rest.
/// Positions outside the sequence are ignored.
pub fn project(m: &[usize], x: &TruncatedSequence) -> TruncatedSequence {
    let mut coeffs = vec![0.0; x.len()];
    for &k in m {
        if k < x.len() {
            coeffs[k] = x.coeffs[k];
        }
    }
    TruncatedSequence::with_origin(coeffs, x.index_origin)
}

/// `Σ_{k>n} |x_k|` in storage order.
pub fn prefix_tail(x: &TruncatedSequence, n: usize) -> f64 {
    x.coeffs.iter().skip(n).map(|v| v.abs()).sum()
}

/// Tail of `x` after removing its `n` largest entries in magnitude.
pub fn sorted_tail(x: &TruncatedSequence, n: usize) -> f64 {
    let mut mags: Vec<f64> = x.coeffs.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    // summing smallest-first keeps the rounding small for decaying tails
    mags.iter().skip(n).rev().sum()
}
