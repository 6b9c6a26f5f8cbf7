//! Dense helpers: determinants of scalar and series-valued matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::series::PowerSeries;

/// Determinant with the convention `det` of the empty matrix is 1.
pub fn det(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().lu().determinant()
}

/// Product of the Euclidean row norms (Hadamard bound on `|det|`).
pub fn hadamard_bound(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.norm()).product()
}

/// Solves `a x = b`; `None` when `a` is singular.
pub fn solve(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    if a.nrows() == 0 {
        return Some(Vec::new());
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    a.clone().lu().solve(&rhs).map(|x| x.iter().copied().collect())
}

/// Cofactors along column `col`: the vector `k` with
/// `det(a with column col replaced by x) = k . x` for every `x`. Computed
/// from a unit normal `u` to the other columns as `det(a | u) u`, which
/// stays accurate when `a` itself is singular.
pub fn column_cofactors(a: &DMatrix<f64>, col: usize) -> Vec<f64> {
    let n = a.nrows();
    let others = a.clone().remove_column(col);
    let u = if n == 1 {
        DVector::from_element(1, 1.0)
    } else {
        let q = others.qr().q();
        let project = |v: DVector<f64>| -> DVector<f64> {
            let v = &v - &q * (q.transpose() * &v);
            &v - &q * (q.transpose() * &v)
        };
        let best = (0..n)
            .map(|k| project(DVector::from_fn(n, |r, _| if r == k { 1.0 } else { 0.0 })))
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .expect("n >= 2");
        let norm = best.norm();
        best / norm
    };
    let mut with_u = a.clone();
    with_u.set_column(col, &u);
    let d = det(&with_u);
    u.iter().map(|x| d * x).collect()
}

pub fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Some(a.clone());
    }
    a.clone().lu().try_inverse()
}

/// Determinant of a matrix of power series, by elimination over the series
/// ring with pivots chosen on constant terms. Returns `None` when the
/// constant-term matrix is numerically singular.
pub fn series_det(rows: &[Vec<PowerSeries>], order: usize) -> Option<PowerSeries> {
    let n = rows.len();
    if n == 0 {
        return Some(PowerSeries::constant(1.0, order));
    }
    let mut m: Vec<Vec<PowerSeries>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|s| PowerSeries::from_coeffs(s.coeffs.clone(), order))
                .collect()
        })
        .collect();
    let scale = m
        .iter()
        .flat_map(|r| r.iter().map(|s| s.coeffs[0].abs()))
        .fold(0.0, f64::max);
    let mut det = PowerSeries::constant(1.0, order);
    for k in 0..n {
        let (p, best) = (k..n)
            .map(|i| (i, m[i][k].coeffs[0].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= 1e-14 * scale || best == 0.0 {
            return None;
        }
        if p != k {
            m.swap(p, k);
            det = det.scale(-1.0);
        }
        let pivot_inv = m[k][k].inv();
        det = det.mul(&m[k][k]);
        let (top, bottom) = m.split_at_mut(k + 1);
        let pivot_row = &top[k];
        for row in bottom.iter_mut() {
            let f = row[k].mul(&pivot_inv);
            for j in (k + 1)..n {
                row[j].sub_assign_mul(&f, &pivot_row[j]);
            }
        }
    }
    Some(det)
}

/// Coefficients `c_0..c_degree` of a polynomial known only through point
/// evaluations, recovered by a discrete Fourier transform on the circle
/// `|zeta| = radius`.
pub fn interpolate_on_circle(
    eval: impl Fn(Complex64) -> Complex64,
    degree: usize,
    radius: f64,
) -> Vec<f64> {
    let n = degree + 1;
    let values: Vec<Complex64> = (0..n)
        .map(|j| {
            let w = Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * j as f64 / n as f64);
            eval(w)
        })
        .collect();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, v) in values.iter().enumerate() {
                let w = Complex64::from_polar(
                    1.0,
                    -2.0 * std::f64::consts::PI * (j * k % n) as f64 / n as f64,
                );
                acc += v * w;
            }
            acc.re / n as f64 / radius.powi(k as i32)
        })
        .collect()
}

/// Complex determinant, 1 for the empty matrix.
pub fn det_complex(a: &DMatrix<Complex64>) -> Complex64 {
    if a.nrows() == 0 {
        return Complex64::new(1.0, 0.0);
    }
    a.clone().lu().determinant()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_determinant_is_one() {
        assert_eq!(det(&DMatrix::zeros(0, 0)), 1.0);
    }

    #[test]
    fn cofactors_expand_the_determinant() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 1.0, 3.0, -2.0, 0.0, 1.0, 4.0]);
        let x = [0.3, -1.2, 2.0];
        for col in 0..3 {
            let k = column_cofactors(&a, col);
            let mut b = a.clone();
            b.set_column(col, &DVector::from_column_slice(&x));
            let lhs: f64 = k.iter().zip(&x).map(|(k, x)| k * x).sum();
            assert!((lhs - det(&b)).abs() < 1e-12, "{col}");
        }
        // singular matrix, nonzero cofactors
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let k = column_cofactors(&s, 1);
        assert!((k[0] + 2.0).abs() < 1e-14 && (k[1] - 1.0).abs() < 1e-14, "{k:?}");
    }

    #[test]
    fn series_det_matches_pointwise() {
        // [[1 + z, 2], [3 z, 4 - z^2]]
        let s = |c: Vec<f64>| PowerSeries::from_coeffs(c, 4);
        let m = vec![
            vec![s(vec![1.0, 1.0]), s(vec![2.0])],
            vec![s(vec![0.0, 3.0]), s(vec![4.0, 0.0, -1.0])],
        ];
        let d = series_det(&m, 4).unwrap();
        // (1+z)(4-z^2) - 6z = 4 - 2z - z^2 - z^3
        let want = [4.0, -2.0, -1.0, -1.0, 0.0];
        for (a, b) in d.coeffs.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn series_det_with_row_swap() {
        let s = |c: Vec<f64>| PowerSeries::from_coeffs(c, 3);
        let m = vec![
            vec![s(vec![0.0, 1.0]), s(vec![1.0])],
            vec![s(vec![1.0]), s(vec![0.0, 0.0, 1.0])],
        ];
        // z * z^2 - 1
        let d = series_det(&m, 3).unwrap();
        let want = [-1.0, 0.0, 0.0, 1.0];
        for (a, b) in d.coeffs.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolation_recovers_polynomial() {
        let c = [1.0, -2.0, 0.5, 3.0];
        let p = |z: Complex64| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &x| acc * z + x)
        };
        let got = interpolate_on_circle(p, 3, 0.7);
        for (a, b) in got.iter().zip(c) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
