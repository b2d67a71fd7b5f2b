//! Truncated tensor algebra `T₁^N(ℝ^d)` over dense per-level coefficient
//! arrays, with the tensor product, Neumann-series inverse, the tensor
//! logarithm/exponential, inhomogeneous and homogeneous norms, and the
//! shuffle-identity test for group-likeness.
//!
//! A level-`k` coefficient block stores the multi-index `(i₁,…,i_k)`,
//! `i_j ∈ {0..d−1}`, at flat index `Σ_j i_j·d^(k−j)` (row-major). This layout
//! is part of the file-format contract and must stay bit-exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from tensor algebra operations.
#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("singular element: scalar part is zero")]
    SingularElement,
    #[error("scalar part must be 1, got {0}")]
    NotUnital(f64),
    #[error("scalar part must be 0, got {0}")]
    NotPrimitive(f64),
    #[error("word letter {0} outside 1..={1}")]
    BadWordLetter(usize, usize),
}

/// Total number of coefficients of `T^N(ℝ^d)`, i.e. `Σ_{k=0..N} d^k`.
pub fn tensor_len(dim: usize, degree: usize) -> usize {
    let mut len = 0;
    let mut p = 1;
    for _ in 0..=degree {
        len += p;
        p *= dim;
    }
    len
}

/// Offset of level `k` inside the concatenated coefficient vector.
pub fn level_offset(dim: usize, k: usize) -> usize {
    let mut off = 0;
    let mut p = 1;
    for _ in 0..k {
        off += p;
        p *= dim;
    }
    off
}

/// `dim^k` as usize.
pub fn level_len(dim: usize, k: usize) -> usize {
    dim.pow(k as u32)
}

/// Flat index of the multi-index `idx` (0-based letters), row-major.
pub fn flat_index(dim: usize, idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| acc * dim + i)
}

/// Inverse of [`flat_index`]: the length-`k` multi-index of `flat`.
pub fn multi_index(dim: usize, k: usize, mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; k];
    for j in (0..k).rev() {
        idx[j] = flat % dim;
        flat /= dim;
    }
    idx
}

/// Raw truncated-tensor product on concatenated level slices.
///
/// `out` accumulates `π_n(a ⊗ b) = Σ_k π_k(a) ⊗ π_{n−k}(b)` for all
/// `n ≤ degree`; it must be zeroed by the caller.
pub(crate) fn mul_raw(dim: usize, degree: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for n in 0..=degree {
        let off_n = level_offset(dim, n);
        for k in 0..=n {
            let (la, lb) = (level_len(dim, k), level_len(dim, n - k));
            let (oa, ob) = (level_offset(dim, k), level_offset(dim, n - k));
            for i in 0..la {
                let ai = a[oa + i];
                if ai == 0.0 {
                    continue;
                }
                let row = off_n + i * lb;
                for j in 0..lb {
                    out[row + j] += ai * b[ob + j];
                }
            }
        }
    }
}

/// Element of the truncated tensor algebra `T^N(ℝ^d)`.
///
/// Levels `k = 0..=N` are stored contiguously; level 0 is the scalar `π₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTensor {
    dim: usize,
    degree: usize,
    data: Vec<f64>,
}

impl TruncatedTensor {
    /// The zero tensor (all levels zero, including `π₀`).
    pub fn zero(dim: usize, degree: usize) -> Self {
        assert!(dim >= 1 && degree >= 1, "dim and degree must be positive");
        TruncatedTensor {
            dim,
            degree,
            data: vec![0.0; tensor_len(dim, degree)],
        }
    }

    /// The unit `𝟙 = (1, 0, …, 0)`.
    pub fn unit(dim: usize, degree: usize) -> Self {
        let mut t = Self::zero(dim, degree);
        t.data[0] = 1.0;
        t
    }

    /// Builds a tensor from per-level coefficient arrays (`levels[k]` has
    /// `d^k` entries).
    pub fn from_levels(dim: usize, levels: &[Vec<f64>]) -> Result<Self, TensorError> {
        let degree = levels.len() - 1;
        let mut t = Self::zero(dim, degree);
        for (k, lvl) in levels.iter().enumerate() {
            if lvl.len() != level_len(dim, k) {
                return Err(TensorError::DimensionMismatch(lvl.len(), level_len(dim, k)));
            }
            t.level_mut(k).copy_from_slice(lvl);
        }
        Ok(t)
    }

    /// A vector `v ∈ ℝ^d` placed at level 1 (all other levels zero).
    pub fn embed_level1(dim: usize, degree: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), dim);
        let mut t = Self::zero(dim, degree);
        t.level_mut(1).copy_from_slice(v);
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn scalar(&self) -> f64 {
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn from_raw(dim: usize, degree: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), tensor_len(dim, degree));
        TruncatedTensor { dim, degree, data }
    }

    /// Level `k` as a slice of length `d^k`.
    pub fn level(&self, k: usize) -> &[f64] {
        let off = level_offset(self.dim, k);
        &self.data[off..off + level_len(self.dim, k)]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let off = level_offset(self.dim, k);
        &mut self.data[off..off + level_len(self.dim, k)]
    }

    /// Coefficient `⟨a, word⟩` for a word over letters `1..=d`
    /// (empty word gives `π₀`).
    pub fn coeff(&self, word: &[usize]) -> Result<f64, TensorError> {
        if word.len() > self.degree {
            return Err(TensorError::DegreeMismatch(word.len(), self.degree));
        }
        let mut flat = 0;
        for &l in word {
            if l == 0 || l > self.dim {
                return Err(TensorError::BadWordLetter(l, self.dim));
            }
            flat = flat * self.dim + (l - 1);
        }
        Ok(self.level(word.len())[flat])
    }

    fn check_compatible(&self, other: &Self) -> Result<(), TensorError> {
        if self.dim != other.dim {
            return Err(TensorError::DimensionMismatch(self.dim, other.dim));
        }
        if self.degree != other.degree {
            return Err(TensorError::DegreeMismatch(self.degree, other.degree));
        }
        Ok(())
    }

    /// Truncated tensor product `self ⊗ other`.
    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.check_compatible(other)?;
        let mut out = Self::zero(self.dim, self.degree);
        mul_raw(self.dim, self.degree, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    /// Tensor product where the operands are known compatible.
    pub(crate) fn mul_unchecked(&self, other: &Self) -> Self {
        self.mul(other).expect("operands compatible")
    }

    /// Neumann-series inverse `a⁻¹ = π₀(a)⁻¹ Σ_n (𝟙 − a/π₀(a))^⊗n`.
    ///
    /// The series terminates at the truncation degree because the summand
    /// base has zero scalar part.
    pub fn inverse(&self) -> Result<Self, TensorError> {
        let p0 = self.scalar();
        if p0 == 0.0 {
            return Err(TensorError::SingularElement);
        }
        // u = 𝟙 − a/π₀
        let mut u = self.clone();
        u.scale_in_place(-1.0 / p0);
        u.data[0] += 1.0;
        // Horner: acc = 𝟙 + u ⊗ (𝟙 + u ⊗ (…))
        let unit = Self::unit(self.dim, self.degree);
        let mut acc = unit.clone();
        for _ in 0..self.degree {
            acc = u.mul_unchecked(&acc);
            acc.add_in_place(&unit);
        }
        acc.scale_in_place(1.0 / p0);
        Ok(acc)
    }

    /// Tensor logarithm `log_N(g) = Σ_{j=1}^N ((−1)^{j+1}/j)(g−𝟙)^⊗j`,
    /// defined for `π₀(g) = 1`.
    pub fn log(&self) -> Result<Self, TensorError> {
        if self.scalar() != 1.0 {
            return Err(TensorError::NotUnital(self.scalar()));
        }
        let mut m = self.clone();
        m.data[0] = 0.0;
        // Horner on Σ_{j≥1} c_j m^j with c_j = (−1)^{j+1}/j.
        let n = self.degree;
        let mut acc = Self::zero(self.dim, self.degree);
        acc.data[0] = if n % 2 == 1 { 1.0 / n as f64 } else { -1.0 / n as f64 };
        for j in (1..n).rev() {
            acc = m.mul_unchecked(&acc);
            acc.data[0] += if j % 2 == 1 { 1.0 / j as f64 } else { -1.0 / j as f64 };
        }
        let mut out = m.mul_unchecked(&acc);
        out.data[0] = 0.0;
        Ok(out)
    }

    /// Tensor exponential `exp_N(v) = Σ_{n=0}^N v^⊗n/n!`, defined for
    /// `π₀(v) = 0`.
    pub fn exp(&self) -> Result<Self, TensorError> {
        if self.scalar() != 0.0 {
            return Err(TensorError::NotPrimitive(self.scalar()));
        }
        let unit = Self::unit(self.dim, self.degree);
        let mut acc = unit.clone();
        for n in (1..=self.degree).rev() {
            let mut term = self.clone();
            term.scale_in_place(1.0 / n as f64);
            acc = term.mul_unchecked(&acc);
            acc.add_in_place(&unit);
        }
        acc.data[0] = 1.0;
        Ok(acc)
    }

    /// Inhomogeneous norm `max_{k=1..N} ‖π_k‖` with Euclidean level norms.
    pub fn inhom_norm(&self) -> f64 {
        (1..=self.degree)
            .map(|k| euclid(self.level(k)))
            .fold(0.0, f64::max)
    }

    /// Homogeneous norm `max_{k=1..N} ‖π_k‖^{1/k}`.
    pub fn hom_norm(&self) -> f64 {
        (1..=self.degree)
            .map(|k| euclid(self.level(k)).powf(1.0 / k as f64))
            .fold(0.0, f64::max)
    }

    /// Dilation `δ_λ`: scales level `k` by `λ^k`.
    pub fn dilate(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        let mut p = 1.0;
        for k in 0..=self.degree {
            p = if k == 0 { 1.0 } else { p * lambda };
            for x in out.level_mut(k) {
                *x *= p;
            }
        }
        out
    }

    /// Reverses the letter order of every word: level-`k` entry at
    /// `(i₁,…,i_k)` moves to `(i_k,…,i₁)`.
    pub fn reverse_words(&self) -> Self {
        let mut out = self.clone();
        for k in 2..=self.degree {
            let src = self.level(k);
            let dst = out.level_mut(k);
            for (flat, &v) in src.iter().enumerate() {
                let mut idx = multi_index(self.dim, k, flat);
                idx.reverse();
                dst[flat_index(self.dim, &idx)] = v;
            }
        }
        out
    }

    /// Projection to a lower degree `n ≤ N`.
    pub fn truncated(&self, n: usize) -> Self {
        assert!(n <= self.degree && n >= 1);
        let mut out = Self::zero(self.dim, n);
        let len = tensor_len(self.dim, n);
        out.data.copy_from_slice(&self.data[..len]);
        out
    }

    /// Embeds into `T^N(ℝ^D)`, mapping letter `i` to `i + offset`
    /// (all words using letters outside the image are zero).
    pub fn embed_letters(&self, big_dim: usize, offset: usize) -> Self {
        assert!(offset + self.dim <= big_dim);
        let mut out = Self::zero(big_dim, self.degree);
        out.data[0] = self.data[0];
        let mut idx = Vec::new();
        for k in 1..=self.degree {
            let src = self.level(k);
            let dst_off = level_offset(big_dim, k);
            for (flat, &v) in src.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                idx.clear();
                idx.extend(multi_index(self.dim, k, flat));
                for i in idx.iter_mut() {
                    *i += offset;
                }
                out.data[dst_off + flat_index(big_dim, &idx)] = v;
            }
        }
        out
    }

    /// Projects onto the sub-algebra of words over letters
    /// `offset..offset+sub_dim`.
    pub fn project_letters(&self, offset: usize, sub_dim: usize) -> Self {
        assert!(offset + sub_dim <= self.dim);
        let mut out = Self::zero(sub_dim, self.degree);
        out.data[0] = self.data[0];
        for k in 1..=self.degree {
            let dst_off = level_offset(sub_dim, k);
            let n = level_len(sub_dim, k);
            for flat in 0..n {
                let mut idx = multi_index(sub_dim, k, flat);
                for i in idx.iter_mut() {
                    *i += offset;
                }
                out.data[dst_off + flat] = self.level(k)[flat_index(self.dim, &idx)];
            }
        }
        out
    }

    pub fn add_in_place(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub_in_place(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Largest absolute coefficient difference against `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Debug dump as JSON `{dim, degree, levels: [[…], …]}`.
    pub fn to_debug_json(&self) -> String {
        let dump = TensorDump {
            dim: self.dim,
            degree: self.degree,
            levels: (0..=self.degree).map(|k| self.level(k).to_vec()).collect(),
        };
        serde_json::to_string(&dump).expect("tensor dump serializes")
    }

    pub fn from_debug_json(s: &str) -> Result<Self, serde_json::Error> {
        let dump: TensorDump = serde_json::from_str(s)?;
        Ok(Self::from_levels(dump.dim, &dump.levels).expect("well-formed dump"))
    }
}

#[derive(Serialize, Deserialize)]
struct TensorDump {
    dim: usize,
    degree: usize,
    levels: Vec<Vec<f64>>,
}

fn euclid(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Group-like element of `G^N(ℝ^d)` (signatures and log-ODE increments).
///
/// The wrapper asserts `π₀ = 1`; genuine group-likeness is testable through
/// [`shuffle_coefficient`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTensor(TruncatedTensor);

impl GroupTensor {
    pub fn new(t: TruncatedTensor) -> Result<Self, TensorError> {
        if t.scalar() != 1.0 {
            return Err(TensorError::NotUnital(t.scalar()));
        }
        Ok(GroupTensor(t))
    }

    pub fn unit(dim: usize, degree: usize) -> Self {
        GroupTensor(TruncatedTensor::unit(dim, degree))
    }

    /// `exp_N` of a primitive element, the canonical way group elements are
    /// produced from the Lie algebra.
    pub fn exp(v: &TruncatedTensor) -> Result<Self, TensorError> {
        Ok(GroupTensor(v.exp()?))
    }

    pub fn tensor(&self) -> &TruncatedTensor {
        &self.0
    }

    pub fn into_tensor(self) -> TruncatedTensor {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn degree(&self) -> usize {
        self.0.degree
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        Ok(GroupTensor(self.0.mul(&other.0)?))
    }

    pub fn inverse(&self) -> Self {
        GroupTensor(self.0.inverse().expect("group element has π₀ = 1"))
    }

    pub fn log(&self) -> TruncatedTensor {
        self.0.log().expect("group element has π₀ = 1")
    }

    pub fn truncated(&self, n: usize) -> Self {
        GroupTensor(self.0.truncated(n))
    }

    /// Worst shuffle-identity violation over all word pairs with
    /// `|u|+|w| ≤ N`: `max |⟨g,u⟩⟨g,w⟩ − ⟨g,u⧢w⟩|`.
    pub fn max_shuffle_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let words = all_words(self.dim(), self.degree());
        for u in &words {
            for w in &words {
                if u.len() + w.len() > self.degree() || u.is_empty() && w.is_empty() {
                    continue;
                }
                let (lhs, rhs) = shuffle_coefficient(self, u, w).expect("valid words");
                worst = worst.max((lhs - rhs).abs());
            }
        }
        worst
    }
}

/// All words over letters `1..=d` with length `0..=max_len`.
pub fn all_words(dim: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut words = vec![vec![]];
    let mut prev: Vec<Vec<usize>> = vec![vec![]];
    for _ in 1..=max_len {
        let mut next = Vec::new();
        for w in &prev {
            for l in 1..=dim {
                let mut w2 = w.clone();
                w2.push(l);
                next.push(w2);
            }
        }
        words.extend(next.iter().cloned());
        prev = next;
    }
    words
}

/// Both sides of the shuffle identity for the words `u`, `w` over `{1..d}`:
/// returns `(⟨g,u⟩·⟨g,w⟩, ⟨g, u⧢w⟩)`. Equal (up to roundoff) iff `g` is
/// group-like on these words.
pub fn shuffle_coefficient(
    g: &GroupTensor,
    u: &[usize],
    w: &[usize],
) -> Result<(f64, f64), TensorError> {
    let t = g.tensor();
    if u.len() + w.len() > t.degree() {
        return Err(TensorError::DegreeMismatch(u.len() + w.len(), t.degree()));
    }
    for &l in u.iter().chain(w.iter()) {
        if l == 0 || l > t.dim() {
            return Err(TensorError::BadWordLetter(l, t.dim()));
        }
    }
    let lhs = t.coeff(u)? * t.coeff(w)?;
    let total = u.len() + w.len();
    let rhs = shuffle_sum(t, u, w, 0, total);
    Ok((lhs, rhs))
}

/// Recursively sums `⟨g, s⟩` over all interleavings `s` of `u` and `w`,
/// carrying the flat prefix index.
fn shuffle_sum(t: &TruncatedTensor, u: &[usize], w: &[usize], prefix: usize, total: usize) -> f64 {
    if u.is_empty() && w.is_empty() {
        return t.level(total)[prefix];
    }
    let mut acc = 0.0;
    if let Some((&first, rest)) = u.split_first() {
        acc += shuffle_sum(t, rest, w, prefix * t.dim() + (first - 1), total);
    }
    if let Some((&first, rest)) = w.split_first() {
        acc += shuffle_sum(t, u, rest, prefix * t.dim() + (first - 1), total);
    }
    acc
}
