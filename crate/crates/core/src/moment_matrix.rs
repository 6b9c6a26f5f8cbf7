//! Block moment matrices, their determinants, Miwa-shifted determinants
//! and logarithmic time derivatives.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_product::{Direction, InnerProduct, Pairing, Side, Times};
use crate::linalg::{column_cofactors, det, det_complex, hadamard_bound, interpolate_on_circle, inverse, series_det};
use crate::series::{LaurentSeries, PowerSeries};

fn constant_series(c: f64, order: usize) -> Vec<f64> {
    let mut v = vec![0.0; order + 1];
    v[0] = c;
    v
}

/// Default truncation order of Miwa-shift series.
pub const DEFAULT_SHIFT_ORDER: usize = 10;
/// `|tau|` below this multiple of the Hadamard bound is treated as zero.
pub const DEGENERACY_RATIO: f64 = 1e-12;

/// Block sizes: `m` has one entry per row weight, `n` one per column weight.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Composition {
    pub m: Vec<usize>,
    pub n: Vec<usize>,
}

impl Composition {
    pub fn new(m: Vec<usize>, n: Vec<usize>) -> Self {
        Self { m, n }
    }

    /// A composition with `|m| = |n|`, as needed for a square moment matrix.
    pub fn square(m: Vec<usize>, n: Vec<usize>) -> Result<Self> {
        let c = Self::new(m, n);
        c.check_square()?;
        Ok(c)
    }

    pub fn q(&self) -> usize {
        self.m.len()
    }

    pub fn p(&self) -> usize {
        self.n.len()
    }

    pub fn m_total(&self) -> usize {
        self.m.iter().sum()
    }

    pub fn n_total(&self) -> usize {
        self.n.iter().sum()
    }

    pub fn check_square(&self) -> Result<()> {
        if self.m_total() != self.n_total() {
            return Err(Error::SizeMismatch(format!(
                "|m| = {} differs from |n| = {}",
                self.m_total(),
                self.n_total()
            )));
        }
        Ok(())
    }

    /// Adds `d` to `m[a]` for each `(a, d)` in `dm` and likewise for `n`;
    /// `None` if an entry would become negative.
    pub fn shifted(&self, dm: &[(usize, i64)], dn: &[(usize, i64)]) -> Option<Self> {
        let mut m: Vec<i64> = self.m.iter().map(|&x| x as i64).collect();
        let mut n: Vec<i64> = self.n.iter().map(|&x| x as i64).collect();
        for &(a, d) in dm {
            m[a] += d;
        }
        for &(b, d) in dn {
            n[b] += d;
        }
        if m.iter().chain(&n).any(|&x| x < 0) {
            return None;
        }
        Some(Self {
            m: m.into_iter().map(|x| x as usize).collect(),
            n: n.into_iter().map(|x| x as usize).collect(),
        })
    }

    /// Offsets of the row blocks.
    pub fn row_offsets(&self) -> Vec<usize> {
        offsets(&self.m)
    }

    pub fn col_offsets(&self) -> Vec<usize> {
        offsets(&self.n)
    }

    pub fn dual(&self) -> Self {
        Self {
            m: self.n.clone(),
            n: self.m.clone(),
        }
    }

    pub fn label(&self) -> String {
        let f = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!("m=({}),n=({})", f(&self.m), f(&self.n))
    }
}

fn offsets(v: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0;
    for &x in v {
        out.push(acc);
        acc += x;
    }
    out
}

/// Direction of a Miwa shift `v -> v -+ [z^{-1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shift {
    Minus,
    Plus,
}

/// Moment tables at fixed times, with everything needed to build tau
/// functions of any composition fitting in the table capacity.
pub struct TauContext<'a> {
    ip: &'a InnerProduct,
    times: Times,
    pairing: Pairing,
}

impl<'a> TauContext<'a> {
    /// Tables large enough for indices up to `max_i`, `max_j`.
    pub fn new(ip: &'a InnerProduct, times: Times, max_i: usize, max_j: usize) -> Result<Self> {
        let pairing = ip.pairing(&times, max_i, max_j)?;
        Ok(Self { ip, times, pairing })
    }

    /// Capacity for compositions with block sizes up to `block`, shift
    /// order `order` and `extra` additional inserted powers.
    pub fn with_capacity(
        ip: &'a InnerProduct,
        times: Times,
        block: usize,
        order: usize,
        extra: usize,
    ) -> Result<Self> {
        let cap = block + order + extra + 1;
        Self::new(ip, times, cap, cap)
    }

    pub fn inner_product(&self) -> &InnerProduct {
        self.ip
    }

    pub fn times(&self) -> &Times {
        &self.times
    }

    pub fn pairing(&self) -> &Pairing {
        &self.pairing
    }

    fn check(&self, c: &Composition, extra_i: usize, extra_j: usize) -> Result<()> {
        if c.q() != self.pairing.q() || c.p() != self.pairing.p() {
            return Err(Error::SizeMismatch(format!(
                "composition {} does not fit {} row and {} column weights",
                c.label(),
                self.pairing.q(),
                self.pairing.p()
            )));
        }
        let (ci, cj) = self.pairing.capacity();
        let need_i = c.m.iter().copied().max().unwrap_or(0) + extra_i;
        let need_j = c.n.iter().copied().max().unwrap_or(0) + extra_j;
        if need_i > ci + 1 || need_j > cj + 1 {
            return Err(Error::SizeMismatch(format!(
                "moment tables hold indices to ({ci}, {cj}); {} needs ({need_i}, {need_j})",
                c.label()
            )));
        }
        Ok(())
    }

    /// The block moment matrix `T_{m n}`.
    pub fn matrix(&self, c: &Composition) -> Result<DMatrix<f64>> {
        self.derivative_matrix(c, &[])
    }

    /// Entrywise derivative of `T_{m n}` along all of `dirs`.
    pub fn derivative_matrix(&self, c: &Composition, dirs: &[Direction]) -> Result<DMatrix<f64>> {
        c.check_square()?;
        let (ei, ej) = dirs.iter().fold((0, 0), |(i, j), d| match d.side {
            Side::S => (i + d.index, j),
            Side::T => (i, j + d.index),
        });
        self.check(c, ei, ej)?;
        let n = c.m_total();
        let mut t = DMatrix::zeros(n, n);
        let mut r = 0;
        for (a, &ma) in c.m.iter().enumerate() {
            for i in 0..ma {
                let mut col = 0;
                for (b, &nb) in c.n.iter().enumerate() {
                    for j in 0..nb {
                        t[(r, col)] = self.pairing.derivative(a, i, b, j, dirs);
                        col += 1;
                    }
                }
                r += 1;
            }
        }
        Ok(t)
    }

    /// `tau_{m n} = det T_{m n}` (1 for the empty composition).
    pub fn tau(&self, c: &Composition) -> Result<f64> {
        Ok(det(&self.matrix(c)?))
    }

    /// `tau_{m n}`, or `DegenerateTau` when it is too small to divide by.
    pub fn tau_nonzero(&self, c: &Composition) -> Result<f64> {
        let t = self.matrix(c)?;
        let value = det(&t);
        let threshold = DEGENERACY_RATIO * hadamard_bound(&t);
        if t.nrows() > 0 && !(value.abs() > threshold) {
            return Err(Error::DegenerateTau { value, threshold });
        }
        Ok(value)
    }

    /// Coefficients in `zeta = 1/z` of `tau(t_b -+ [zeta])`. The minus
    /// direction is a polynomial of degree at most `n_b`; the plus
    /// direction is truncated after `zeta^order`.
    pub fn shift_t(&self, c: &Composition, b: usize, dir: Shift, order: usize) -> Result<Vec<f64>> {
        c.check_square()?;
        let order = match dir {
            Shift::Minus => c.n[b],
            Shift::Plus => order,
        };
        self.check(c, 0, order.max(1))?;
        if dir == Shift::Plus {
            // col_j - zeta col_{j+1} = C_j leaves one series column
            let nb = c.n[b];
            let t = self.matrix(c)?;
            if nb == 0 {
                return Ok(constant_series(det(&t), order));
            }
            let line = c.col_offsets()[b] + nb - 1;
            let k = column_cofactors(&t, line);
            let mut coeffs: Vec<f64> = (0..=order)
                .map(|s| {
                    let mut acc = 0.0;
                    let mut r = 0;
                    for (a, &ma) in c.m.iter().enumerate() {
                        for i in 0..ma {
                            acc += k[r] * self.pairing.get(a, i, b, nb - 1 + s);
                            r += 1;
                        }
                    }
                    acc
                })
                .collect();
            // the expansion reproduces tau only to rounding
            coeffs[0] = det(&t);
            return Ok(coeffs);
        }
        let col_off = c.col_offsets()[b];
        let cols = col_off..col_off + c.n[b];
        let entry = |a: usize, i: usize, bb: usize, j: usize, col: usize| -> Vec<f64> {
            if !cols.contains(&col) {
                return vec![self.pairing.get(a, i, bb, j)];
            }
            match dir {
                Shift::Minus => vec![self.pairing.get(a, i, bb, j), -self.pairing.get(a, i, bb, j + 1)],
                Shift::Plus => (0..=order).map(|k| self.pairing.get(a, i, bb, j + k)).collect(),
            }
        };
        self.series_determinant(c, order, c.n[b], entry)
    }

    /// Coefficients in `zeta` of `tau(s_a -+ [zeta])`. Here the plus
    /// direction is the polynomial one (degree at most `m_a`).
    pub fn shift_s(&self, c: &Composition, a: usize, dir: Shift, order: usize) -> Result<Vec<f64>> {
        c.check_square()?;
        let order = match dir {
            Shift::Plus => c.m[a],
            Shift::Minus => order,
        };
        self.check(c, order.max(1), 0)?;
        if dir == Shift::Minus {
            // row_i - zeta row_{i+1} = R_i leaves one series row
            let ma = c.m[a];
            let t = self.matrix(c)?;
            if ma == 0 {
                return Ok(constant_series(det(&t), order));
            }
            let line = c.row_offsets()[a] + ma - 1;
            let k = column_cofactors(&t.transpose(), line);
            let mut coeffs: Vec<f64> = (0..=order)
                .map(|s| {
                    let mut acc = 0.0;
                    let mut col = 0;
                    for (b, &nb) in c.n.iter().enumerate() {
                        for j in 0..nb {
                            acc += k[col] * self.pairing.get(a, ma - 1 + s, b, j);
                            col += 1;
                        }
                    }
                    acc
                })
                .collect();
            coeffs[0] = det(&t);
            return Ok(coeffs);
        }
        let row_off = c.row_offsets()[a];
        let rows = row_off..row_off + c.m[a];
        let entry = |aa: usize, i: usize, bb: usize, j: usize, _col: usize| -> Vec<f64> {
            let row = c.row_offsets()[aa] + i;
            if !rows.contains(&row) {
                return vec![self.pairing.get(aa, i, bb, j)];
            }
            match dir {
                Shift::Plus => vec![self.pairing.get(aa, i, bb, j), -self.pairing.get(aa, i + 1, bb, j)],
                Shift::Minus => (0..=order).map(|k| self.pairing.get(aa, i + k, bb, j)).collect(),
            }
        };
        self.series_determinant(c, order, c.m[a], entry)
    }

    /// Laurent form (in `z`) of a t-shift; plus shifts carry a window.
    pub fn shift_t_series(&self, c: &Composition, b: usize, dir: Shift, order: usize) -> Result<LaurentSeries> {
        let coeffs = self.shift_t(c, b, dir, order)?;
        Ok(LaurentSeries::from_zeta(&coeffs, 0, dir == Shift::Minus))
    }

    pub fn shift_s_series(&self, c: &Composition, a: usize, dir: Shift, order: usize) -> Result<LaurentSeries> {
        let coeffs = self.shift_s(c, a, dir, order)?;
        Ok(LaurentSeries::from_zeta(&coeffs, 0, dir == Shift::Plus))
    }

    fn series_determinant(
        &self,
        c: &Composition,
        order: usize,
        shifted_lines: usize,
        entry: impl Fn(usize, usize, usize, usize, usize) -> Vec<f64>,
    ) -> Result<Vec<f64>> {
        let mut rows: Vec<Vec<PowerSeries>> = Vec::new();
        for (a, &ma) in c.m.iter().enumerate() {
            for i in 0..ma {
                let mut row = Vec::new();
                let mut col = 0;
                for (b, &nb) in c.n.iter().enumerate() {
                    for j in 0..nb {
                        row.push(PowerSeries::from_coeffs(entry(a, i, b, j, col), order));
                        col += 1;
                    }
                }
                rows.push(row);
            }
        }
        if let Some(d) = series_det(&rows, order) {
            return Ok(d.coeffs);
        }
        // Constant-term matrix singular: interpolate the (polynomial)
        // determinant of the truncated entries instead.
        let degree = shifted_lines * order;
        let growth = rows
            .iter()
            .flatten()
            .filter(|s| s.coeffs[0] != 0.0)
            .flat_map(|s| {
                (1..=order).map(move |k| (s.coeffs[k] / s.coeffs[0]).abs().powf(1.0 / k as f64))
            })
            .fold(0.0, f64::max);
        let radius = 1.0 / (1.0 + growth);
        let n = rows.len();
        let coeffs = interpolate_on_circle(
            |zeta| {
                let m = DMatrix::from_fn(n, n, |r, col| {
                    rows[r][col]
                        .coeffs
                        .iter()
                        .rev()
                        .fold(Complex64::new(0.0, 0.0), |acc, &x| acc * zeta + x)
                });
                det_complex(&m)
            },
            degree,
            radius,
        );
        Ok(coeffs.into_iter().take(order + 1).collect())
    }

    /// `d^r ln tau / d dirs` for `1 <= r <= 3` by trace formulas.
    pub fn log_tau_derivative(&self, c: &Composition, dirs: &[Direction]) -> Result<f64> {
        Ok(self.log_tau_derivative_scaled(c, dirs)?.0)
    }

    /// As [`Self::log_tau_derivative`], with the largest trace term as a
    /// rounding scale for the value.
    pub fn log_tau_derivative_scaled(&self, c: &Composition, dirs: &[Direction]) -> Result<(f64, f64)> {
        if dirs.is_empty() || dirs.len() > 3 {
            return Err(Error::ConfigInvalid(format!(
                "log-tau derivatives of order {} are not supported",
                dirs.len()
            )));
        }
        for d in dirs {
            let v = match d.side {
                Side::S => self.times.s.get(d.block),
                Side::T => self.times.t.get(d.block),
            }
            .ok_or_else(|| Error::SizeMismatch(format!("no time block {}", d.block)))?;
            if d.index == 0 || d.index > v.depth() {
                return Err(Error::IndexOutOfRange {
                    index: d.index,
                    max: v.depth(),
                });
            }
        }
        if c.m_total() == 0 {
            return Ok((0.0, 0.0));
        }
        let t = self.matrix(c)?;
        let inv = inverse(&t).ok_or(Error::DegenerateTau {
            value: 0.0,
            threshold: 0.0,
        })?;
        let d = |sub: &[Direction]| -> Result<DMatrix<f64>> {
            Ok(&inv * self.derivative_matrix(c, sub)?)
        };
        let tr = |m: &DMatrix<f64>| m.trace();
        let terms = match dirs {
            [a] => vec![tr(&d(&[*a])?)],
            [a, b] => {
                let (da, db) = (d(&[*a])?, d(&[*b])?);
                vec![tr(&d(&[*a, *b])?), -tr(&(&da * &db))]
            }
            [a, b, cc] => {
                let (da, db, dc) = (d(&[*a])?, d(&[*b])?, d(&[*cc])?);
                let (dab, dac, dbc) = (d(&[*a, *b])?, d(&[*a, *cc])?, d(&[*b, *cc])?);
                let dabc = d(&[*a, *b, *cc])?;
                vec![
                    tr(&dabc),
                    -tr(&(&dab * &dc)),
                    -tr(&(&dac * &db)),
                    -tr(&(&dbc * &da)),
                    tr(&(&da * &db * &dc)),
                    tr(&(&da * &dc * &db)),
                ]
            }
            _ => unreachable!(),
        };
        let scale = terms.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok((terms.iter().sum(), scale))
    }
}
