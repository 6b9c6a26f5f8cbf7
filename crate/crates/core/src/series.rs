//! Truncated power series in `zeta` and Laurent series in `z` with a
//! tracked window of trustworthy coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timealg::{schur_coeffs, TimeVector};

/// Power series `sum_{k<=order} c_k zeta^k`, everything above `order` dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSeries {
    pub coeffs: Vec<f64>,
}

impl PowerSeries {
    pub fn zero(order: usize) -> Self {
        Self {
            coeffs: vec![0.0; order + 1],
        }
    }

    pub fn constant(c: f64, order: usize) -> Self {
        let mut s = Self::zero(order);
        s.coeffs[0] = c;
        s
    }

    pub fn from_coeffs(mut coeffs: Vec<f64>, order: usize) -> Self {
        coeffs.resize(order + 1, 0.0);
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn mul(&self, other: &Self) -> Self {
        let n = self.order().min(other.order());
        let mut out = vec![0.0; n + 1];
        for (i, &a) in self.coeffs.iter().enumerate().take(n + 1) {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate().take(n + 1 - i) {
                out[i + j] += a * b;
            }
        }
        Self { coeffs: out }
    }

    /// Multiplicative inverse; the constant term must be nonzero.
    pub fn inv(&self) -> Self {
        let n = self.order();
        let c0 = self.coeffs[0];
        let mut out = vec![0.0; n + 1];
        out[0] = 1.0 / c0;
        for k in 1..=n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += self.coeffs[j] * out[k - j];
            }
            out[k] = -acc / c0;
        }
        Self { coeffs: out }
    }

    pub fn sub_assign_mul(&mut self, a: &Self, b: &Self) {
        let n = self.order();
        for (i, &x) in a.coeffs.iter().enumerate().take(n + 1) {
            if x == 0.0 {
                continue;
            }
            for (j, &y) in b.coeffs.iter().enumerate().take(n + 1 - i) {
                self.coeffs[i + j] -= x * y;
            }
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|x| c * x).collect(),
        }
    }
}

/// Laurent series in `z`. Coefficients with exponent in `[win_lo, win_hi]`
/// are known (zero unless stored); outside that window nothing is known.
/// `None` for a bound means the series is exact in that direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaurentSeries {
    lo: i32,
    coeffs: Vec<f64>,
    win_lo: Option<i32>,
    win_hi: Option<i32>,
}

impl LaurentSeries {
    pub fn zero() -> Self {
        Self {
            lo: 0,
            coeffs: Vec::new(),
            win_lo: None,
            win_hi: None,
        }
    }

    pub fn one() -> Self {
        Self::polynomial(0, vec![1.0])
    }

    /// Exact `sum_k c[k] z^{lo+k}`.
    pub fn polynomial(lo: i32, coeffs: Vec<f64>) -> Self {
        Self {
            lo,
            coeffs,
            win_lo: None,
            win_hi: None,
        }
    }

    /// `z^shift * sum_k c_k z^{-k}` from a series in `zeta = 1/z`. When
    /// `exact` is false the terms past the last stored one are unknown.
    pub fn from_zeta(c: &[f64], shift: i32, exact: bool) -> Self {
        let n = c.len() as i32;
        let coeffs: Vec<f64> = c.iter().rev().copied().collect();
        let lo = shift - (n - 1);
        Self {
            lo,
            coeffs,
            win_lo: if exact { None } else { Some(lo) },
            win_hi: None,
        }
    }

    /// `exp(sum_k v_k z^k)` known through `z^order`.
    pub fn time_exponential(v: &TimeVector, order: usize) -> Self {
        let s = schur_coeffs(v, order);
        if v.is_zero() {
            return Self::one();
        }
        Self {
            lo: 0,
            coeffs: s,
            win_lo: None,
            win_hi: Some(order as i32),
        }
    }

    /// Stored exponent range `(lo, hi)`; `hi < lo` when empty.
    pub fn stored_range(&self) -> (i32, i32) {
        (self.lo, self.lo + self.coeffs.len() as i32 - 1)
    }

    pub fn window(&self) -> (Option<i32>, Option<i32>) {
        (self.win_lo, self.win_hi)
    }

    pub fn is_exact(&self) -> bool {
        self.win_lo.is_none() && self.win_hi.is_none()
    }

    pub fn knows(&self, e: i32) -> bool {
        self.win_lo.is_none_or(|w| e >= w) && self.win_hi.is_none_or(|w| e <= w)
    }

    /// Coefficient of `z^e`, or `WindowTooNarrow` when it is not known.
    pub fn coeff(&self, e: i32) -> Result<f64> {
        if !self.knows(e) {
            return Err(Error::WindowTooNarrow(format!(
                "exponent {e} outside window {:?}..{:?}",
                self.win_lo, self.win_hi
            )));
        }
        Ok(self.stored(e))
    }

    fn stored(&self, e: i32) -> f64 {
        let k = e - self.lo;
        if k < 0 {
            return 0.0;
        }
        self.coeffs.get(k as usize).copied().unwrap_or(0.0)
    }

    /// Known exponents that carry a stored coefficient.
    pub fn known_range(&self) -> (i32, i32) {
        let (lo, hi) = self.stored_range();
        (
            self.win_lo.map_or(lo, |w| w.max(lo)),
            self.win_hi.map_or(hi, |w| w.min(hi)),
        )
    }

    /// `(exponent, coefficient)` pairs over the known stored range.
    pub fn pairs(&self) -> Vec<(i32, f64)> {
        let (lo, hi) = self.known_range();
        (lo..=hi).map(|e| (e, self.stored(e))).collect()
    }

    pub fn residue(&self) -> Result<f64> {
        self.coeff(-1)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|x| *x *= c);
        out
    }

    pub fn abs(&self) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|x| *x = x.abs());
        out
    }

    /// Multiply by `z^k`.
    pub fn shift(&self, k: i32) -> Self {
        Self {
            lo: self.lo + k,
            coeffs: self.coeffs.clone(),
            win_lo: self.win_lo.map(|w| w + k),
            win_hi: self.win_hi.map(|w| w + k),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let win_lo = max_opt(self.win_lo, other.win_lo);
        let win_hi = min_opt(self.win_hi, other.win_hi);
        if self.coeffs.is_empty() {
            return Self { win_lo, win_hi, ..other.clone() };
        }
        if other.coeffs.is_empty() {
            return Self { win_lo, win_hi, ..self.clone() };
        }
        let (a0, a1) = self.stored_range();
        let (b0, b1) = other.stored_range();
        let lo = a0.min(b0);
        let hi = a1.max(b1);
        let coeffs = (lo..=hi).map(|e| self.stored(e) + other.stored(e)).collect();
        Self {
            lo,
            coeffs,
            win_lo,
            win_hi,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Product, keeping exactly those coefficients that the factors determine.
    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            let mut z = Self::zero();
            z.win_lo = max_opt(self.win_lo, other.win_lo);
            z.win_hi = min_opt(self.win_hi, other.win_hi);
            return z;
        }
        let (a0, a1) = self.stored_range();
        let (b0, b1) = other.stored_range();
        // An unknown tail of one factor is harmless only where the other
        // factor is known to vanish on the opposite side.
        let mut lo_bounds = Vec::new();
        let mut hi_bounds = Vec::new();
        let mut empty = false;
        for (x, y, y_hi, y_lo) in [(self, other, b1, b0), (other, self, a1, a0)] {
            if let Some(w) = x.win_lo {
                if y.win_hi.is_some() {
                    empty = true;
                }
                lo_bounds.push(w + y_hi);
            }
            if let Some(w) = x.win_hi {
                if y.win_lo.is_some() {
                    empty = true;
                }
                hi_bounds.push(w + y_lo);
            }
        }
        let win_lo = lo_bounds.into_iter().max();
        let mut win_hi = hi_bounds.into_iter().min();
        if empty {
            // Nothing is trustworthy; encode an empty window.
            let l = win_lo.unwrap_or(0);
            win_hi = Some(l - 1);
            return Self {
                lo: 0,
                coeffs: Vec::new(),
                win_lo: Some(l),
                win_hi,
            };
        }
        let mut lo = a0 + b0;
        let mut hi = a1 + b1;
        if let Some(w) = win_lo {
            lo = lo.max(w);
        }
        if let Some(w) = win_hi {
            hi = hi.min(w);
        }
        let coeffs = if hi >= lo {
            (lo..=hi)
                .map(|e| {
                    let i0 = a0.max(e - b1);
                    let i1 = a1.min(e - b0);
                    (i0..=i1).map(|i| self.stored(i) * other.stored(e - i)).sum()
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            lo,
            coeffs,
            win_lo,
            win_hi,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn max_opt(a: Option<i32>, b: Option<i32>) -> Option<i32> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn min_opt(a: Option<i32>, b: Option<i32>) -> Option<i32> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// `Res_z f(z) exp(sum_k v_k z^k)` for `f` exact above: the convergent sum
/// `sum_k S_k(v) f_{-1-k}` over all known coefficients. Returns the value and
/// the largest magnitude among the last three terms as a tail indicator.
pub fn residue_with_exponential(f: &LaurentSeries, v: &TimeVector) -> Result<(f64, f64)> {
    if f.win_hi.is_some() {
        return Err(Error::WindowTooNarrow(
            "series must be exact in positive powers".into(),
        ));
    }
    if v.is_zero() {
        return Ok((f.residue()?, 0.0));
    }
    let kmax = match f.win_lo {
        None => {
            let (lo, _) = f.stored_range();
            (-1 - lo).max(0)
        }
        Some(w) => {
            if w > -1 {
                return Err(Error::WindowTooNarrow(format!(
                    "residue needs exponent -1, window starts at {w}"
                )));
            }
            -1 - w
        }
    } as usize;
    let s = schur_coeffs(v, kmax);
    let mut acc = 0.0;
    let mut tail = 0.0f64;
    for (k, sk) in s.iter().enumerate() {
        let term = sk * f.stored(-1 - k as i32);
        acc += term;
        if k + 3 > kmax {
            tail = tail.max(term.abs());
        }
    }
    if f.win_lo.is_none() {
        tail = 0.0;
    }
    Ok((acc, tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_series_inverse() {
        let a = PowerSeries::from_coeffs(vec![2.0, -1.0, 0.5, 3.0], 6);
        let p = a.mul(&a.inv());
        assert!((p.coeffs[0] - 1.0).abs() < 1e-15);
        for c in &p.coeffs[1..] {
            assert!(c.abs() < 1e-13);
        }
    }

    #[test]
    fn exact_products_stay_exact() {
        let a = LaurentSeries::polynomial(-1, vec![1.0, 2.0]);
        let b = LaurentSeries::polynomial(0, vec![3.0, 0.0, 1.0]);
        let c = a.mul(&b);
        assert!(c.is_exact());
        assert_eq!(c.pairs(), vec![(-1, 3.0), (0, 6.0), (1, 1.0), (2, 2.0)]);
    }

    #[test]
    fn truncated_times_polynomial_window() {
        // series 1 + z^-1 + .. + z^-4, unknown below -4, times z^2
        let s = LaurentSeries::from_zeta(&[1.0; 5], 0, false);
        let p = LaurentSeries::polynomial(0, vec![1.0, 0.0, 1.0]);
        let c = s.mul(&p);
        assert_eq!(c.window(), (Some(-2), None));
        assert!(c.coeff(-3).is_err());
        assert_eq!(c.coeff(-2).unwrap(), 2.0);
        assert_eq!(c.coeff(2).unwrap(), 1.0);
    }

    #[test]
    fn opposite_truncations_know_nothing() {
        let s = LaurentSeries::from_zeta(&[1.0; 5], 0, false);
        let v = TimeVector::from_slice(&[0.5]);
        let e = LaurentSeries::time_exponential(&v, 5);
        assert!(s.mul(&e).coeff(0).is_err());
    }

    #[test]
    fn residue_against_exponential_closed_form() {
        // f = sum_k z^{-k-1} = 1/(z-1); Res f e^{a z} = e^a
        let f = LaurentSeries::from_zeta(&[1.0; 60], -1, false);
        let v = TimeVector::from_slice(&[0.3]);
        let (r, tail) = residue_with_exponential(&f, &v).unwrap();
        assert!((r - 0.3f64.exp()).abs() < 1e-14);
        assert!(tail < 1e-40);
    }
}
