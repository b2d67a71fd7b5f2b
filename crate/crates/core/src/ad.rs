//! Nested forward-mode differentiation via multi-dual numbers.
//!
//! A [`MultiDual`] carries coefficients indexed by subsets of up to
//! [`MAX_LEVELS`] nilpotent generators ε₁,…,ε₅ (each squaring to zero), so a
//! single value tracks every mixed directional derivative
//! `D_{u₁}…D_{u_k} f` needed by the iterated-vector-field recursion. Vector
//! fields are written once, generically over [`Scalar`], and evaluated either
//! on plain `f64`s or on jets.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Maximum nesting depth of directional derivatives.
///
/// Degree-N log-ODE fields need N−1 levels, plus one more inside the
/// rough-integral field which differentiates its base field once; the degree
/// cap of 5 therefore needs exactly 5.
pub const MAX_LEVELS: usize = 5;
const SLOTS: usize = 1 << MAX_LEVELS;

/// Truncated multivariate dual number: coefficients over subsets of active
/// nilpotent levels, `c[mask] = ∂^{|mask|} f / ∏_{i∈mask} ∂ε_i`.
#[derive(Copy, Clone, Debug)]
pub struct MultiDual {
    levels: u8,
    c: [f64; SLOTS],
}

impl MultiDual {
    pub fn constant(x: f64) -> Self {
        let mut c = [0.0; SLOTS];
        c[0] = x;
        MultiDual { levels: 0, c }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn active_levels(&self) -> usize {
        self.levels as usize
    }

    fn width(&self) -> usize {
        1 << self.levels
    }

    /// Seeds a fresh level: result = self + ε_level·direction.
    ///
    /// Both operands may use levels `< level`; panics past [`MAX_LEVELS`]
    /// (callers gate on the supported order).
    pub fn lift(&self, direction: &MultiDual, level: usize) -> Self {
        assert!(level < MAX_LEVELS, "derivative order beyond support");
        debug_assert!(self.active_levels() <= level && direction.active_levels() <= level);
        let bit = 1usize << level;
        let mut out = *self;
        out.levels = level as u8 + 1;
        for s in 0..direction.width() {
            out.c[s | bit] = direction.c[s];
        }
        for s in direction.width()..bit {
            out.c[s | bit] = 0.0;
        }
        out
    }

    /// The ε_level coefficient slice (the directional derivative introduced
    /// by [`Self::lift`] at `level`).
    pub fn extract(&self, level: usize) -> Self {
        let bit = 1usize << level;
        let mut out = MultiDual::constant(0.0);
        out.levels = level as u8;
        for s in 0..bit {
            out.c[s] = self.c[s | bit];
        }
        out
    }

    /// Restriction to masks without `level` (the evaluation at the unlifted
    /// point).
    pub fn drop_level(&self, level: usize) -> Self {
        let bit = 1usize << level;
        let mut out = MultiDual::constant(0.0);
        out.levels = level as u8;
        for s in 0..bit {
            out.c[s] = self.c[s];
        }
        out
    }

    /// Composition with a scalar function given its derivatives at the
    /// primal value: `derivs[j] = φ^{(j)}(value)` for `j = 0..=levels`.
    fn compose(&self, derivs: &[f64]) -> Self {
        // Horner in the nilpotent part η = self − value: Σ_j φ^{(j)}/j!·η^j
        let n = self.active_levels();
        let mut eta = *self;
        eta.c[0] = 0.0;
        let mut acc = MultiDual::constant(derivs[n] / factorial(n));
        acc.levels = self.levels;
        for j in (0..n).rev() {
            acc = acc * eta;
            acc.c[0] += derivs[j] / factorial(j);
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        let w = out.width();
        for x in out.c[..w].iter_mut() {
            *x *= s;
        }
        out
    }

    pub fn sin(self) -> Self {
        let v = self.value();
        let (s, c) = (v.sin(), v.cos());
        let table = [s, c, -s, -c, s, c];
        self.compose(&table[..=self.active_levels()])
    }

    pub fn cos(self) -> Self {
        let v = self.value();
        let (s, c) = (v.sin(), v.cos());
        let table = [c, -s, -c, s, c, -s];
        self.compose(&table[..=self.active_levels()])
    }

    pub fn exp(self) -> Self {
        let e = self.value().exp();
        self.compose(&[e; MAX_LEVELS + 1][..=self.active_levels()])
    }

    pub fn tanh(self) -> Self {
        // derivatives of tanh are polynomials in t = tanh(v):
        // p₀ = t, p_{k+1} = p_k'(t)·(1−t²)
        let t = self.value().tanh();
        let n = self.active_levels();
        let mut poly = vec![0.0, 1.0]; // p₀(t) = t
        let mut derivs = Vec::with_capacity(n + 1);
        derivs.push(t);
        for _ in 0..n {
            // q = p'
            let q: Vec<f64> = poly
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &a)| a * i as f64)
                .collect();
            // p_{k+1} = q·(1 − t²)
            let mut next = vec![0.0; q.len() + 2];
            for (i, &a) in q.iter().enumerate() {
                next[i] += a;
                next[i + 2] -= a;
            }
            derivs.push(eval_poly(&next, t));
            poly = next;
        }
        self.compose(&derivs)
    }

    pub fn recip(self) -> Self {
        let v = self.value();
        let n = self.active_levels();
        // d^j (1/v) = (−1)^j j! v^{−(j+1)}
        let mut derivs = Vec::with_capacity(n + 1);
        let mut d = 1.0 / v;
        derivs.push(d);
        for j in 1..=n {
            d *= -(j as f64) / v;
            derivs.push(d);
        }
        self.compose(&derivs)
    }

    pub fn sqrt(self) -> Self {
        let v = self.value();
        let n = self.active_levels();
        let mut derivs = Vec::with_capacity(n + 1);
        let mut d = v.sqrt();
        derivs.push(d);
        let mut expo = 0.5;
        for _ in 1..=n {
            d *= expo / v;
            derivs.push(d);
            expo -= 1.0;
        }
        self.compose(&derivs)
    }

    pub fn powi(self, k: i32) -> Self {
        if k < 0 {
            return self.powi(-k).recip();
        }
        let mut acc = MultiDual::constant(1.0);
        let mut base = self;
        let mut k = k as u32;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            k >>= 1;
        }
        acc
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product::<f64>().max(1.0)
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

impl Add for MultiDual {
    type Output = MultiDual;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        out.levels = self.levels.max(rhs.levels);
        for s in 0..rhs.width() {
            out.c[s] += rhs.c[s];
        }
        out
    }
}

impl Sub for MultiDual {
    type Output = MultiDual;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        out.levels = self.levels.max(rhs.levels);
        for s in 0..rhs.width() {
            out.c[s] -= rhs.c[s];
        }
        out
    }
}

impl Neg for MultiDual {
    type Output = MultiDual;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul for MultiDual {
    type Output = MultiDual;
    fn mul(self, rhs: Self) -> Self {
        let levels = self.levels.max(rhs.levels);
        let width = 1usize << levels;
        let mut out = MultiDual::constant(0.0);
        out.levels = levels;
        for s in 0..width {
            // pairs (sub, s∖sub) of disjoint index sets
            let mut acc = 0.0;
            let mut sub = s;
            loop {
                acc += self.c[sub] * rhs.c[s & !sub];
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & s;
            }
            out.c[s] = acc;
        }
        out
    }
}

impl Div for MultiDual {
    type Output = MultiDual;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

/// Number type vector fields are written against: either `f64` or a jet.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    fn from_f64(x: f64) -> Self;
    fn value(&self) -> f64;
    fn scale(self, s: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn recip(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, k: i32) -> Self;
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, k: i32) -> Self {
        f64::powi(self, k)
    }
}

impl Scalar for MultiDual {
    fn from_f64(x: f64) -> Self {
        MultiDual::constant(x)
    }
    fn value(&self) -> f64 {
        MultiDual::value(self)
    }
    fn scale(self, s: f64) -> Self {
        MultiDual::scale(&self, s)
    }
    fn sin(self) -> Self {
        MultiDual::sin(self)
    }
    fn cos(self) -> Self {
        MultiDual::cos(self)
    }
    fn exp(self) -> Self {
        MultiDual::exp(self)
    }
    fn tanh(self) -> Self {
        MultiDual::tanh(self)
    }
    fn recip(self) -> Self {
        MultiDual::recip(self)
    }
    fn sqrt(self) -> Self {
        MultiDual::sqrt(self)
    }
    fn powi(self, k: i32) -> Self {
        MultiDual::powi(self, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d1(f: impl Fn(MultiDual) -> MultiDual, x: f64) -> f64 {
        let seeded = MultiDual::constant(x).lift(&MultiDual::constant(1.0), 0);
        f(seeded).extract(0).value()
    }

    fn d2(f: impl Fn(MultiDual) -> MultiDual, x: f64) -> f64 {
        let s1 = MultiDual::constant(x).lift(&MultiDual::constant(1.0), 0);
        let s2 = s1.lift(&MultiDual::constant(1.0), 1);
        f(s2).extract(1).extract(0).value()
    }

    #[test]
    fn first_derivatives_match_closed_forms() {
        let x = 0.37;
        assert!((d1(|v| v.sin(), x) - x.cos()).abs() < 1e-14);
        assert!((d1(|v| v.cos(), x) + x.sin()).abs() < 1e-14);
        assert!((d1(|v| v.exp(), x) - x.exp()).abs() < 1e-14);
        assert!((d1(|v| v.tanh(), x) - (1.0 - x.tanh().powi(2))).abs() < 1e-14);
        assert!((d1(|v| v.recip(), x) + 1.0 / (x * x)).abs() < 1e-12);
        assert!((d1(|v| v.sqrt(), x) - 0.5 / x.sqrt()).abs() < 1e-14);
        assert!((d1(|v| v.powi(3), x) - 3.0 * x * x).abs() < 1e-14);
    }

    #[test]
    fn second_derivatives_match_closed_forms() {
        let x = -0.61;
        assert!((d2(|v| v.sin(), x) + x.sin()).abs() < 1e-13);
        assert!((d2(|v| v.exp(), x) - x.exp()).abs() < 1e-13);
        let t = x.tanh();
        assert!((d2(|v| v.tanh(), x) - (-2.0 * t * (1.0 - t * t))).abs() < 1e-13);
        assert!((d2(|v| v.powi(4), x) - 12.0 * x * x).abs() < 1e-12);
    }

    #[test]
    fn fifth_order_nesting() {
        // D⁵ exp = exp via five nested lifts
        let x = 0.21;
        let mut v = MultiDual::constant(x);
        for level in 0..5 {
            v = v.lift(&MultiDual::constant(1.0), level);
        }
        let mut r = v.exp();
        for level in (0..5).rev() {
            r = r.extract(level);
        }
        assert!((r.value() - x.exp()).abs() < 1e-12);
    }

    #[test]
    fn mixed_directional_derivative() {
        // f(a,b) = a²b: D_u D_w f with u=(1,0), w=(0,1) is ∂²f/∂a∂b = 2a
        let (a0, b0) = (1.3, -0.7);
        let a = MultiDual::constant(a0)
            .lift(&MultiDual::constant(1.0), 0)
            .lift(&MultiDual::constant(0.0), 1);
        let b = MultiDual::constant(b0)
            .lift(&MultiDual::constant(0.0), 0)
            .lift(&MultiDual::constant(1.0), 1);
        let f = a * a * b;
        assert!((f.extract(1).extract(0).value() - 2.0 * a0).abs() < 1e-14);
    }

    #[test]
    fn division_consistency() {
        let x = MultiDual::constant(0.8).lift(&MultiDual::constant(1.0), 0);
        let y = MultiDual::constant(2.5).lift(&MultiDual::constant(0.5), 0);
        let q = x / y;
        let x0 = 0.8;
        let y0 = 2.5;
        // d/dε (x/y) = (x' y − x y')/y² with x'=1, y'=0.5
        let expect = (1.0 * y0 - x0 * 0.5) / (y0 * y0);
        assert!((q.extract(0).value() - expect).abs() < 1e-14);
    }
}
