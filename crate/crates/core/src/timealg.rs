//! Time vectors and elementary Schur polynomials.
//!
//! A time vector `v = (v_1, .., v_K)` has finite support; index 0 is never
//! stored. `S_l(v)` are the coefficients of `exp(sum_k v_k z^k)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of stored time indices.
pub const DEFAULT_TIME_DEPTH: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeVector {
    values: Vec<f64>,
}

impl Default for TimeVector {
    fn default() -> Self {
        Self::zeros(DEFAULT_TIME_DEPTH)
    }
}

impl TimeVector {
    pub fn zeros(depth: usize) -> Self {
        Self {
            values: vec![0.0; depth],
        }
    }

    /// Builds `(v_1, .., v_n)` from a slice; the depth is `max(n, DEFAULT_TIME_DEPTH)`.
    pub fn from_slice(v: &[f64]) -> Self {
        let mut values = v.to_vec();
        if values.len() < DEFAULT_TIME_DEPTH {
            values.resize(DEFAULT_TIME_DEPTH, 0.0);
        }
        Self { values }
    }

    /// Largest index that may be stored.
    pub fn depth(&self) -> usize {
        self.values.len()
    }

    /// `v_k`; zero for any index that is not stored (including 0).
    pub fn get(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.values.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, k: usize, value: f64) -> Result<()> {
        if k == 0 || k > self.values.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                max: self.values.len(),
            });
        }
        self.values[k - 1] = value;
        Ok(())
    }

    pub fn with(mut self, k: usize, value: f64) -> Result<Self> {
        self.set(k, value)?;
        Ok(self)
    }

    /// Highest index carrying a nonzero entry, 0 for the zero vector.
    pub fn support(&self) -> usize {
        self.values.iter().rposition(|&x| x != 0.0).map_or(0, |p| p + 1)
    }

    pub fn is_zero(&self) -> bool {
        self.support() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let depth = self.depth().max(other.depth());
        let values = (1..=depth).map(|k| f(self.get(k), other.get(k))).collect();
        Self { values }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|x| c * x).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    /// `sum_k v_k x^k` for real `x`.
    pub fn xi(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &v in self.values.iter().rev() {
            acc = (acc + v) * x;
        }
        acc
    }

    /// Max-norm of the entries.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `S_0(v), .., S_n(v)` by the recurrence `l S_l = sum_{k=1}^{l} k v_k S_{l-k}`.
pub fn schur_coeffs(v: &TimeVector, n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n + 1];
    s[0] = 1.0;
    let support = v.support();
    for l in 1..=n {
        let mut acc = 0.0;
        for k in 1..=l.min(support) {
            acc += k as f64 * v.get(k) * s[l - k];
        }
        s[l] = acc / l as f64;
    }
    s
}

/// `exp(sum_k v_k z^k)`.
pub fn time_exponential(v: &TimeVector, z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for k in (1..=v.depth()).rev() {
        acc = (acc + v.get(k)) * z;
    }
    acc.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schur_of_ones() {
        let v = TimeVector::from_slice(&[1.0, 1.0, 1.0]);
        let s = schur_coeffs(&v, 3);
        assert_eq!(s[0], 1.0);
        assert!((s[1] - 1.0).abs() < 1e-15);
        assert!((s[2] - 1.5).abs() < 1e-15);
        assert!((s[3] - 13.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn unstored_reads_zero() {
        let v = TimeVector::from_slice(&[0.3]);
        assert_eq!(v.get(0), 0.0);
        assert_eq!(v.get(5), 0.0);
        assert_eq!(v.get(40), 0.0);
        assert!(TimeVector::zeros(3).clone().set(4, 1.0).is_err());
    }

    #[test]
    fn promotion_to_larger_depth() {
        let a = TimeVector::zeros(2).with(2, 1.0).unwrap();
        let b = TimeVector::zeros(8).with(7, 2.0).unwrap();
        let c = a.add(&b);
        assert_eq!(c.depth(), 8);
        assert_eq!(c.get(2), 1.0);
        assert_eq!(c.get(7), 2.0);
    }

    #[test]
    fn exponential_matches_series() {
        let v = TimeVector::from_slice(&[0.2, -0.1, 0.05]);
        let z = Complex64::new(0.3, -0.4);
        let s = schur_coeffs(&v, 60);
        let mut series = Complex64::new(0.0, 0.0);
        let mut zp = Complex64::new(1.0, 0.0);
        for c in s {
            series += zp * c;
            zp *= z;
        }
        assert!((series - time_exponential(&v, z)).norm() < 1e-14);
    }
}
