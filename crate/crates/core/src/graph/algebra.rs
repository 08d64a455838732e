//! Truncated multivariate dual numbers.
//!
//! A jet over `m` generators `ε_0 … ε_{m-1}` with `ε_g² = 0` is a polynomial
//! whose monomials are products of distinct generators, i.e. subsets of
//! `{0..m}`. Keeping only monomials of degree `≤ order` gives a commutative
//! quotient algebra, so for any smooth `f` and jet `a = a₀ + n`:
//!
//! ```text
//! f(a) = Σ_k f⁽ᵏ⁾(a₀) nᵏ / k!
//! ```
//!
//! Seeding an input with `x + Σ_g ε_g d_g` makes the coefficient of the
//! monomial `S` equal to the mixed directional derivative `∂^{|S|} f / ∏_{g∈S} ∂d_g`.
//! With `order == 1` the algebra carries `m` independent first-order tangents;
//! with two generators and `order == 2` it is the hyper-dual number system.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of coefficients of a single jet.
pub const MAX_CHANNELS: usize = 32;

/// Highest tangent order any rule set supports.
pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Algebra {
    generators: usize,
    order: usize,
    masks: Vec<u32>,
    lookup: Vec<usize>,
    // (out, a, b) with mask[out] = mask[a] | mask[b] and mask[a] & mask[b] == 0
    table: Vec<(u8, u8, u8)>,
}

impl Algebra {
    /// Plain real numbers; only the value channel exists.
    pub fn scalar() -> Self {
        Self::new(0, 0).expect("scalar algebra is always valid")
    }

    pub fn first_order(generators: usize) -> Result<Self> {
        Self::new(generators, generators.min(1))
    }

    pub fn new(generators: usize, order: usize) -> Result<Self> {
        if order > MAX_ORDER || order > generators {
            return Err(Error::InvalidDim(format!(
                "tangent order {order} with {generators} generators"
            )));
        }
        if generators > 31 {
            return Err(Error::InvalidDim(format!("{generators} generators")));
        }
        let mut masks: Vec<u32> = Vec::new();
        if generators <= 16 {
            for mask in 0u32..(1u32 << generators) {
                if mask.count_ones() as usize <= order {
                    masks.push(mask);
                }
            }
        } else {
            // only first-order algebras get this wide
            masks.push(0);
            masks.extend((0..generators).map(|g| 1u32 << g));
        }
        masks.sort_by_key(|m| (m.count_ones(), *m));
        if masks.len() > MAX_CHANNELS {
            return Err(Error::InvalidDim(format!(
                "{} jet channels exceed the limit of {MAX_CHANNELS}",
                masks.len()
            )));
        }
        let lookup_len = if generators <= 16 { 1usize << generators } else { 0 };
        let mut lookup = vec![usize::MAX; lookup_len];
        for (i, m) in masks.iter().enumerate() {
            if (*m as usize) < lookup.len() {
                lookup[*m as usize] = i;
            }
        }
        let index_of = |mask: u32| masks.iter().position(|m| *m == mask);
        let mut table = Vec::new();
        for (out, &s) in masks.iter().enumerate() {
            for (a, &ma) in masks.iter().enumerate() {
                if ma & !s != 0 {
                    continue;
                }
                if let Some(b) = index_of(s & !ma) {
                    table.push((out as u8, a as u8, b as u8));
                }
            }
        }
        Ok(Self {
            generators,
            order,
            masks,
            lookup,
            table,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn generators(&self) -> usize {
        self.generators
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn masks(&self) -> &[u32] {
        &self.masks
    }

    /// Channel holding the first-order tangent along generator `g`.
    pub fn generator_channel(&self, g: usize) -> usize {
        debug_assert!(g < self.generators);
        1 + g
    }

    /// Channel holding the coefficient of the monomial `mask`, if kept.
    pub fn channel(&self, mask: u32) -> Option<usize> {
        if (mask as usize) < self.lookup.len() {
            let i = self.lookup[mask as usize];
            (i != usize::MAX).then_some(i)
        } else {
            self.masks.iter().position(|m| *m == mask)
        }
    }

    /// Channel of the product of all generators (the top mixed partial).
    pub fn top_channel(&self) -> Option<usize> {
        if self.generators == 0 {
            return Some(0);
        }
        self.channel((1u32 << self.generators) - 1)
    }

    /// `out = a * b`.
    #[inline]
    pub fn mul(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let n = self.len();
        if self.order <= 1 {
            out[0] = a[0] * b[0];
            for i in 1..n {
                out[i] = a[0] * b[i] + a[i] * b[0];
            }
            return;
        }
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        for &(s, i, j) in &self.table {
            out[s as usize] += a[i as usize] * b[j as usize];
        }
    }

    /// Adjoint of `x ↦ g * x`: `x_bar += gᵀ out_bar`.
    #[inline]
    pub fn mul_adjoint(&self, out_bar: &[f64], g: &[f64], x_bar: &mut [f64]) {
        let n = self.len();
        if self.order <= 1 {
            x_bar[0] += out_bar[0] * g[0];
            for i in 1..n {
                x_bar[0] += out_bar[i] * g[i];
                x_bar[i] += out_bar[i] * g[0];
            }
            return;
        }
        for &(s, i, j) in &self.table {
            x_bar[j as usize] += out_bar[s as usize] * g[i as usize];
        }
    }

    /// Applies a scalar function given its derivatives `d[k] = f⁽ᵏ⁾(a₀)` for
    /// `k = 0..=order+1`. Writes `f(a)` to `out` and `f'(a)` to `grad`.
    pub fn apply_unary(&self, d: &[f64], a: &[f64], out: &mut [f64], grad: &mut [f64]) {
        let n = self.len();
        if self.order == 0 {
            out[0] = d[0];
            grad[0] = d[1];
            return;
        }
        if self.order == 1 {
            out[0] = d[0];
            grad[0] = d[1];
            for i in 1..n {
                out[i] = d[1] * a[i];
                grad[i] = d[2] * a[i];
            }
            return;
        }
        let mut nil = [0.0; MAX_CHANNELS];
        nil[1..n].copy_from_slice(&a[1..n]);
        let mut power = [0.0; MAX_CHANNELS];
        power[0] = 1.0;
        let mut next = [0.0; MAX_CHANNELS];
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        grad[..n].iter_mut().for_each(|v| *v = 0.0);
        let mut factorial = 1.0;
        for k in 0..=self.order {
            if k > 0 {
                self.mul(&power[..n], &nil[..n], &mut next[..n]);
                power[..n].copy_from_slice(&next[..n]);
                factorial *= k as f64;
            }
            let (cf, cg) = (d[k] / factorial, d[k + 1] / factorial);
            for i in 0..n {
                out[i] += cf * power[i];
                grad[i] += cg * power[i];
            }
        }
    }
}

/// Elementwise nonlinearities with derivative rules up to order `MAX_ORDER + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    /// `(tanh(z) + 1) / 2`, a tanh rescaled onto `(0, 1)`.
    ScaledTanh01,
    /// `log(1 + exp(-|x|)) + max(x, 0)`.
    SoftplusStable,
    /// Natural log with the argument floored at [`LOG_FLOOR`]; below the
    /// floor the result is the constant `ln(LOG_FLOOR)`.
    LogClamped,
    Reciprocal,
}

/// Floor applied to density values before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::ScaledTanh01 => "scaled-tanh01",
            Activation::SoftplusStable => "softplus-stable",
            Activation::LogClamped => "log",
            Activation::Reciprocal => "reciprocal",
        }
    }

    /// Primal value only.
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::ScaledTanh01 => 0.5 * (x.tanh() + 1.0),
            Activation::SoftplusStable => softplus_stable(x),
            Activation::LogClamped => x.max(LOG_FLOOR).ln(),
            Activation::Reciprocal => 1.0 / x,
        }
    }

    /// Fills `d[k] = f⁽ᵏ⁾(x)` for `k = 0..d.len()`.
    pub fn derivatives(self, x: f64, d: &mut [f64]) {
        let count = d.len();
        match self {
            Activation::Identity => {
                d.iter_mut().for_each(|v| *v = 0.0);
                d[0] = x;
                if count > 1 {
                    d[1] = 1.0;
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                d[0] = s;
                let polys = sigmoid_polys();
                for k in 1..count {
                    d[k] = horner(&polys[k], s);
                }
            }
            Activation::SoftplusStable => {
                d[0] = softplus_stable(x);
                if count > 1 {
                    let s = sigmoid(x);
                    d[1] = s;
                    let polys = sigmoid_polys();
                    for k in 2..count {
                        d[k] = horner(&polys[k - 1], s);
                    }
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                d[0] = t;
                let polys = tanh_polys();
                for k in 1..count {
                    d[k] = horner(&polys[k], t);
                }
            }
            Activation::ScaledTanh01 => {
                let t = x.tanh();
                d[0] = 0.5 * (t + 1.0);
                let polys = tanh_polys();
                for k in 1..count {
                    d[k] = 0.5 * horner(&polys[k], t);
                }
            }
            Activation::LogClamped => {
                if x < LOG_FLOOR {
                    d.iter_mut().for_each(|v| *v = 0.0);
                    d[0] = LOG_FLOOR.ln();
                } else {
                    d[0] = x.ln();
                    let inv = 1.0 / x;
                    let mut p = 1.0;
                    for k in 1..count {
                        p *= inv;
                        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                        d[k] = sign * factorial(k - 1) * p;
                    }
                }
            }
            Activation::Reciprocal => {
                let inv = 1.0 / x;
                let mut p = inv;
                d[0] = inv;
                for k in 1..count {
                    p *= inv;
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    d[k] = sign * factorial(k) * p;
                }
            }
        }
    }

    /// Whether the function is non-decreasing on its whole domain.
    pub fn is_monotone_increasing(self) -> bool {
        !matches!(self, Activation::Reciprocal)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus_stable(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

#[inline]
pub fn scaled_tanh01(z: f64) -> f64 {
    0.5 * (z.tanh() + 1.0)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

#[inline]
fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

const POLY_LEVELS: usize = MAX_ORDER + 3;

// Derivative k of σ as a polynomial in s = σ(x): P₁ = s − s², P_{k+1} = P_k'(s)·(s − s²).
fn sigmoid_polys() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| derivative_polys(&[0.0, 1.0, -1.0]))
}

// Derivative k of tanh as a polynomial in t = tanh(x): T₁ = 1 − t², T_{k+1} = T_k'(t)·(1 − t²).
fn tanh_polys() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| derivative_polys(&[1.0, 0.0, -1.0]))
}

fn derivative_polys(chain: &[f64]) -> Vec<Vec<f64>> {
    let mut polys = vec![vec![0.0, 1.0], chain.to_vec()];
    while polys.len() < POLY_LEVELS {
        let last = polys.last().unwrap();
        let deriv: Vec<f64> = last
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| c * i as f64)
            .collect();
        let mut next = vec![0.0; deriv.len() + chain.len() - 1];
        for (i, a) in deriv.iter().enumerate() {
            for (j, b) in chain.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        polys.push(next);
    }
    polys
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_derivs(act: Activation, x: f64) -> Vec<f64> {
        // nested central differences from the closed forms of lower orders
        let h = 1e-4;
        let mut lower = [0.0; 6];
        let mut upper = [0.0; 6];
        act.derivatives(x - h, &mut lower);
        act.derivatives(x + h, &mut upper);
        (0..5).map(|k| (upper[k] - lower[k]) / (2.0 * h)).collect()
    }

    #[test]
    fn derivative_rules_are_consistent() {
        for act in [
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::ScaledTanh01,
            Activation::SoftplusStable,
            Activation::Reciprocal,
            Activation::LogClamped,
        ] {
            for &x in &[-1.3f64, -0.2, 0.4, 1.7] {
                let x = if matches!(act, Activation::LogClamped | Activation::Reciprocal) {
                    x.abs() + 0.5
                } else {
                    x
                };
                let mut d = [0.0; 6];
                act.derivatives(x, &mut d);
                let num = numeric_derivs(act, x);
                for k in 0..5 {
                    let err = (d[k + 1] - num[k]).abs() / d[k + 1].abs().max(1.0);
                    assert!(err < 1e-6, "{act:?} order {} at {x}: {} vs {}", k + 1, d[k + 1], num[k]);
                }
            }
        }
    }

    #[test]
    fn stated_second_derivative_rules() {
        let x = 0.37;
        let mut d = [0.0; 3];
        Activation::Tanh.derivatives(x, &mut d);
        let t = x.tanh();
        assert!((d[2] - (-2.0 * t * (1.0 - t * t))).abs() < 1e-15);
        Activation::Sigmoid.derivatives(x, &mut d);
        let s = sigmoid(x);
        assert!((d[2] - s * (1.0 - s) * (1.0 - 2.0 * s)).abs() < 1e-15);
        Activation::SoftplusStable.derivatives(x, &mut d);
        assert!((d[2] - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn hyper_dual_product_has_cross_term() {
        let alg = Algebra::new(2, 2).unwrap();
        assert_eq!(alg.len(), 4);
        // (1 + 2ε₀ + 3ε₁) (4 + 5ε₀ + 6ε₁) = 4 + 13ε₀ + 18ε₁ + 27ε₀ε₁
        let mut out = [0.0; 4];
        alg.mul(&[1.0, 2.0, 3.0, 0.0], &[4.0, 5.0, 6.0, 0.0], &mut out);
        assert_eq!(out, [4.0, 13.0, 18.0, 27.0]);
    }

    #[test]
    fn first_order_algebra_drops_cross_terms() {
        let alg = Algebra::first_order(3).unwrap();
        assert_eq!(alg.len(), 4);
        let mut out = [0.0; 4];
        alg.mul(&[2.0, 1.0, 1.0, 1.0], &[3.0, 1.0, 0.0, 2.0], &mut out);
        assert_eq!(out, [6.0, 5.0, 3.0, 7.0]);
    }

    #[test]
    fn unary_matches_closed_form_mixed_partial() {
        // exp-like check with sigmoid: d²σ(y1 + y2)/dy1dy2 = σ''
        let alg = Algebra::new(2, 2).unwrap();
        let mut d = [0.0; 4];
        Activation::Sigmoid.derivatives(0.3, &mut d);
        let mut out = [0.0; 4];
        let mut g = [0.0; 4];
        alg.apply_unary(&d, &[0.3, 1.0, 1.0, 0.0], &mut out, &mut g);
        assert!((out[3] - d[2]).abs() < 1e-15);
        assert!((g[3] - d[3]).abs() < 1e-15);
    }

    #[test]
    fn softplus_stable_saturates() {
        assert!((softplus_stable(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus_stable(1000.0), 1000.0);
        assert_eq!(softplus_stable(-1000.0), 0.0);
        assert!(softplus_stable(1e308).is_finite());
        assert!(softplus_stable(-1e308) >= 0.0);
    }

    #[test]
    fn top_channel_of_four_generators() {
        let alg = Algebra::new(4, 4).unwrap();
        assert_eq!(alg.len(), 16);
        assert_eq!(alg.masks()[alg.top_channel().unwrap()], 0b1111);
        assert!(Algebra::new(2, 3).is_err());
    }
}
