//! Mixed multiple orthogonal polynomials of type I and II, their duals,
//! and their expressions as ratios of shifted tau functions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_product::{InnerProduct, Times};
use crate::linalg::{det, solve};
use crate::moment_matrix::{Composition, Shift, TauContext};

/// Sign conventions for tau-ratio formulas. Blocks are 0-based.
pub mod signs {
    fn parity(sum: usize) -> f64 {
        if sum.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// `eps_{b b2}(n)`, with `eps_{b b}(n) = 1`.
    pub fn eps(n: &[usize], b: usize, b2: usize) -> f64 {
        use std::cmp::Ordering::*;
        match b.cmp(&b2) {
            Equal => 1.0,
            Greater => parity(n[b2 + 1..=b].iter().sum::<usize>() + 1),
            Less => parity(n[b + 1..=b2].iter().sum()),
        }
    }

    /// `eps_{a b}(m, n) = (-1)^{m_1 + .. + m_a} (-1)^{n_1 + .. + n_b}`.
    pub fn eps_mixed(m: &[usize], n: &[usize], a: usize, b: usize) -> f64 {
        parity(m[..=a].iter().sum::<usize>() + n[..=b].iter().sum::<usize>())
    }

    /// Parity of `sum_{a' <= a} (m_{a'} - m*_{a'})`.
    pub fn sigma(m: &[usize], m_star: &[usize], a: usize) -> f64 {
        let d: i64 = (0..=a).map(|k| m[k] as i64 - m_star[k] as i64).sum();
        if d.rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `(-1)^{n_1 + .. + n_{b1} + n*_1 + .. + n*_{b2}}`.
    pub fn delta(n: &[usize], n_star: &[usize], b1: usize, b2: usize) -> f64 {
        parity(n[..=b1].iter().sum::<usize>() + n_star[..=b2].iter().sum::<usize>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MopsKind {
    /// `P^a = sum_b P^{a,b}(y) phi_b^t(y)`.
    TypeI,
    /// `Q^b = sum_b' Q^{b,b'}(y) phi_b'^t(y)`.
    #[serde(rename = "type_ii")]
    TypeII,
    /// `P*^b = sum_a P*^{b,a}(x) psi_a^{-s}(x)`.
    DualTypeI,
    /// `Q*^a = sum_a' Q*^{a,a'}(x) psi_a'^{-s}(x)`.
    #[serde(rename = "dual_type_ii")]
    DualTypeII,
}

/// One linear form in the weights: `components[k]` holds the ascending
/// coefficients of the polynomial multiplying the `k`-th weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MopsSolution {
    pub kind: MopsKind,
    pub index: usize,
    pub composition: Composition,
    pub components: Vec<Vec<f64>>,
}

impl MopsSolution {
    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest coefficient difference relative to the larger of the two
    /// coefficient scales (floored at 1e-12).
    pub fn distance(&self, other: &Self) -> f64 {
        let scale = self.max_abs().max(other.max_abs()).max(1e-12);
        let mut worst = 0.0f64;
        let blocks = self.components.len().max(other.components.len());
        for k in 0..blocks {
            let a = self.components.get(k).map_or(&[][..], |v| v.as_slice());
            let b = other.components.get(k).map_or(&[][..], |v| v.as_slice());
            for d in 0..a.len().max(b.len()) {
                let x = a.get(d).copied().unwrap_or(0.0);
                let y = b.get(d).copied().unwrap_or(0.0);
                worst = worst.max((x - y).abs());
            }
        }
        worst / scale
    }
}

fn unknown_count(c: &Composition) -> usize {
    c.n_total()
}

/// Reads a solution vector ordered by block then degree into components.
fn split(x: &[f64], sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut pos = 0;
    for &s in sizes {
        out.push(x[pos..pos + s].to_vec());
        pos += s;
    }
    out
}

fn singular() -> Error {
    Error::DegenerateTau {
        value: 0.0,
        threshold: 0.0,
    }
}

/// Type II form for column block `b`: monic of degree `n_b` in block `b`,
/// orthogonal to `x^i psi_a^{-s}` for all `i < m_a`.
pub fn solve_type_ii(ctx: &TauContext, c: &Composition, b: usize) -> Result<MopsSolution> {
    ctx.tau_nonzero(c)?;
    let t = ctx.matrix(c)?;
    let pr = ctx.pairing();
    let mut rhs = Vec::with_capacity(unknown_count(c));
    for (a, &ma) in c.m.iter().enumerate() {
        for i in 0..ma {
            rhs.push(-pr.get(a, i, b, c.n[b]));
        }
    }
    let x = solve(&t, &rhs).ok_or_else(singular)?;
    let mut components = split(&x, &c.n);
    components[b].push(1.0);
    Ok(MopsSolution {
        kind: MopsKind::TypeII,
        index: b,
        composition: c.clone(),
        components,
    })
}

/// Type I form for row block `a`: `<x^i psi_a', P^a> = delta_{a a'} delta_{i, m_a - 1}`.
pub fn solve_type_i(ctx: &TauContext, c: &Composition, a: usize) -> Result<MopsSolution> {
    if c.m[a] == 0 {
        return Err(Error::SizeMismatch(format!(
            "type I form needs m_{} > 0",
            a + 1
        )));
    }
    ctx.tau_nonzero(c)?;
    let t = ctx.matrix(c)?;
    let mut rhs = vec![0.0; unknown_count(c)];
    rhs[c.row_offsets()[a] + c.m[a] - 1] = 1.0;
    let x = solve(&t, &rhs).ok_or_else(singular)?;
    Ok(MopsSolution {
        kind: MopsKind::TypeI,
        index: a,
        composition: c.clone(),
        components: split(&x, &c.n),
    })
}

/// An inner product with its times and composition.
#[derive(Debug)]
pub struct Problem {
    pub ip: InnerProduct,
    pub times: Times,
    pub composition: Composition,
}

/// The transposed problem: `(p, q)`, `(m, n)` and `(psi, phi)` swap, times
/// go to `(-t, -s)` and the measure is transposed. An involution.
pub fn dualize(problem: &Problem) -> Result<Problem> {
    Ok(Problem {
        ip: problem.ip.dual()?,
        times: problem.times.dual(),
        composition: problem.composition.dual(),
    })
}

/// Dual forms are the ordinary forms of the transposed problem with times
/// `(s, t) -> (-t, -s)`.
fn with_dual<T>(
    ip: &InnerProduct,
    times: &Times,
    c: &Composition,
    f: impl FnOnce(&TauContext, &Composition) -> Result<T>,
) -> Result<T> {
    let dual = ip.dual()?;
    let dc = c.dual();
    let block = dc.m.iter().chain(&dc.n).copied().max().unwrap_or(0);
    let ctx = TauContext::with_capacity(&dual, times.dual(), block, 2, 0)?;
    f(&ctx, &dc)
}

/// `P*^b`: type I with respect to `phi_b`, a combination of `psi_a^{-s}`.
pub fn solve_dual_type_i(ip: &InnerProduct, times: &Times, c: &Composition, b: usize) -> Result<MopsSolution> {
    let mut sol = with_dual(ip, times, c, |ctx, dc| solve_type_i(ctx, dc, b))?;
    sol.kind = MopsKind::DualTypeI;
    sol.composition = c.clone();
    Ok(sol)
}

/// `Q*^a`: type II with respect to `psi_a`.
pub fn solve_dual_type_ii(ip: &InnerProduct, times: &Times, c: &Composition, a: usize) -> Result<MopsSolution> {
    let mut sol = with_dual(ip, times, c, |ctx, dc| solve_type_ii(ctx, dc, a))?;
    sol.kind = MopsKind::DualTypeII;
    sol.composition = c.clone();
    Ok(sol)
}

/// Reverses a `zeta`-series of a polynomial of degree `deg` into ascending
/// coefficients in `z`, scaled by `factor`.
fn to_poly(zeta_coeffs: &[f64], deg: usize, factor: f64) -> Vec<f64> {
    let mut out = vec![0.0; deg + 1];
    for (k, &v) in zeta_coeffs.iter().enumerate().take(deg + 1) {
        out[deg - k] = factor * v;
    }
    out
}

/// `Q^{b,b'}` from shifted tau functions.
pub fn type_ii_from_tau(ctx: &TauContext, c: &Composition, b: usize) -> Result<MopsSolution> {
    let tau = ctx.tau_nonzero(c)?;
    let mut components = Vec::with_capacity(c.p());
    for b2 in 0..c.p() {
        if b2 == b {
            let s = ctx.shift_t(c, b, Shift::Minus, 0)?;
            components.push(to_poly(&s, c.n[b], 1.0 / tau));
            continue;
        }
        match c.shifted(&[], &[(b, 1), (b2, -1)]) {
            None => components.push(Vec::new()),
            Some(cs) => {
                let s = ctx.shift_t(&cs, b2, Shift::Minus, 0)?;
                let e = signs::eps(&c.n, b, b2);
                components.push(to_poly(&s, c.n[b2] - 1, e / tau));
            }
        }
    }
    Ok(MopsSolution {
        kind: MopsKind::TypeII,
        index: b,
        composition: c.clone(),
        components,
    })
}

/// `P^{a,b}` from shifted tau functions.
pub fn type_i_from_tau(ctx: &TauContext, c: &Composition, a: usize) -> Result<MopsSolution> {
    let tau = ctx.tau_nonzero(c)?;
    let mut components = Vec::with_capacity(c.p());
    for b in 0..c.p() {
        match c.shifted(&[(a, -1)], &[(b, -1)]) {
            None => components.push(Vec::new()),
            Some(cs) => {
                let s = ctx.shift_t(&cs, b, Shift::Minus, 0)?;
                let e = signs::eps_mixed(&c.m, &c.n, a, b);
                components.push(to_poly(&s, c.n[b] - 1, e / tau));
            }
        }
    }
    Ok(MopsSolution {
        kind: MopsKind::TypeI,
        index: a,
        composition: c.clone(),
        components,
    })
}

/// `P*^{b,a}` from s-shifted tau functions of the original problem.
pub fn dual_type_i_from_tau(ctx: &TauContext, c: &Composition, b: usize) -> Result<MopsSolution> {
    let tau = ctx.tau_nonzero(c)?;
    let mut components = Vec::with_capacity(c.q());
    for a in 0..c.q() {
        match c.shifted(&[(a, -1)], &[(b, -1)]) {
            None => components.push(Vec::new()),
            Some(cs) => {
                let s = ctx.shift_s(&cs, a, Shift::Plus, 0)?;
                let e = signs::eps_mixed(&c.n, &c.m, b, a);
                components.push(to_poly(&s, c.m[a] - 1, e / tau));
            }
        }
    }
    Ok(MopsSolution {
        kind: MopsKind::DualTypeI,
        index: b,
        composition: c.clone(),
        components,
    })
}

/// `Q*^{a,a'}` from s-shifted tau functions of the original problem.
pub fn dual_type_ii_from_tau(ctx: &TauContext, c: &Composition, a: usize) -> Result<MopsSolution> {
    let tau = ctx.tau_nonzero(c)?;
    let mut components = Vec::with_capacity(c.q());
    for a2 in 0..c.q() {
        if a2 == a {
            let s = ctx.shift_s(c, a, Shift::Plus, 0)?;
            components.push(to_poly(&s, c.m[a], 1.0 / tau));
            continue;
        }
        match c.shifted(&[(a, 1), (a2, -1)], &[]) {
            None => components.push(Vec::new()),
            Some(cs) => {
                let s = ctx.shift_s(&cs, a2, Shift::Plus, 0)?;
                let e = signs::eps(&c.m, a, a2);
                components.push(to_poly(&s, c.m[a2] - 1, e / tau));
            }
        }
    }
    Ok(MopsSolution {
        kind: MopsKind::DualTypeII,
        index: a,
        composition: c.clone(),
        components,
    })
}

/// `Q^{b,b'}` by cofactor expansion of `T_{m + e_a, n + e_b}` along the
/// last row of block `a`.
pub fn type_ii_from_cofactors(ctx: &TauContext, c: &Composition, b: usize, a: usize) -> Result<MopsSolution> {
    let tau = ctx.tau_nonzero(c)?;
    let big = c
        .shifted(&[(a, 1)], &[(b, 1)])
        .expect("adding to a block never goes negative");
    let t = ctx.matrix(&big)?;
    let row = big.row_offsets()[a] + c.m[a];
    let e = signs::eps_mixed(&c.m, &c.n, a, b);
    let col_off = big.col_offsets();
    let mut components = Vec::with_capacity(c.p());
    for (b2, &nb) in big.n.iter().enumerate() {
        let mut comp = Vec::with_capacity(nb);
        for j in 0..nb {
            let mut m: DMatrix<f64> = t.clone();
            m.row_mut(row).fill(0.0);
            m[(row, col_off[b2] + j)] = 1.0;
            comp.push(e * det(&m) / tau);
        }
        components.push(comp);
    }
    Ok(MopsSolution {
        kind: MopsKind::TypeII,
        index: b,
        composition: c.clone(),
        components,
    })
}

/// Pairings of a solution against the relevant monomials, minus their
/// targets, and the natural scale `sum |coeff * moment|`. Returns
/// `(max |residual|, scale)`.
pub fn orthogonality_residual(ctx: &TauContext, sol: &MopsSolution) -> Result<(f64, f64)> {
    let c = &sol.composition;
    let pr = ctx.pairing();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    match sol.kind {
        MopsKind::TypeI | MopsKind::TypeII => {
            for (a, &ma) in c.m.iter().enumerate() {
                for i in 0..ma {
                    let mut acc = 0.0;
                    let mut mag = 0.0;
                    for (b, comp) in sol.components.iter().enumerate() {
                        for (j, &v) in comp.iter().enumerate() {
                            let term = v * pr.get(a, i, b, j);
                            acc += term;
                            mag += term.abs();
                        }
                    }
                    let target = if sol.kind == MopsKind::TypeI && a == sol.index && i + 1 == ma {
                        1.0
                    } else {
                        0.0
                    };
                    worst = worst.max((acc - target).abs());
                    scale = scale.max(mag);
                }
            }
        }
        MopsKind::DualTypeI | MopsKind::DualTypeII => {
            for (b, &nb) in c.n.iter().enumerate() {
                for j in 0..nb {
                    let mut acc = 0.0;
                    let mut mag = 0.0;
                    for (a, comp) in sol.components.iter().enumerate() {
                        for (i, &v) in comp.iter().enumerate() {
                            let term = v * pr.get(a, i, b, j);
                            acc += term;
                            mag += term.abs();
                        }
                    }
                    let target = if sol.kind == MopsKind::DualTypeI && b == sol.index && j + 1 == nb {
                        1.0
                    } else {
                        0.0
                    };
                    worst = worst.max((acc - target).abs());
                    scale = scale.max(mag);
                }
            }
        }
    }
    Ok((worst, scale.max(1e-300)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner_product::{MeasureSpec, WeightDescriptor, WeightFamily};

    #[test]
    fn sign_examples() {
        let n = [2, 1, 3];
        // b > b2: (-1)^{n_{b2+1} + .. + n_b + 1}
        assert_eq!(signs::eps(&n, 2, 0), -1.0); // 1 + 3 + 1 = 5
        assert_eq!(signs::eps(&n, 1, 0), 1.0); // 1 + 1
        // b < b2: (-1)^{n_{b+1} + .. + n_{b2}}
        assert_eq!(signs::eps(&n, 0, 2), 1.0); // 1 + 3
        assert_eq!(signs::eps(&n, 0, 1), -1.0);
        assert_eq!(signs::eps_mixed(&[1, 2], &n, 1, 0), -1.0); // 3 + 2
        assert_eq!(signs::sigma(&[3, 1], &[1, 2], 1), -1.0); // 2 - 1
    }

    #[test]
    fn hermite_from_solve_and_tau() {
        let ip = InnerProduct::new(MeasureSpec::gaussian_line(), WeightFamily::unit(1, 1)).unwrap();
        let ctx = TauContext::new(&ip, Times::zeros(1, 1), 8, 8).unwrap();
        let c = Composition::new(vec![3], vec![3]);
        let a = solve_type_ii(&ctx, &c, 0).unwrap();
        let b = type_ii_from_tau(&ctx, &c, 0).unwrap();
        let want = vec![0.0, -3.0, 0.0, 1.0];
        for (x, y) in a.components[0].iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.distance(&b) < 1e-12);
    }

    #[test]
    fn mixed_blocks_agree() {
        let w = WeightFamily::new(
            vec![
                WeightDescriptor::PlainExponential { c: 0.3 },
                WeightDescriptor::PlainExponential { c: -0.4 },
            ],
            vec![
                WeightDescriptor::PlainExponential { c: 0.6 },
                WeightDescriptor::PlainExponential { c: -0.5 },
            ],
        );
        let ip = InnerProduct::new(MeasureSpec::gaussian_line(), w).unwrap();
        let mut times = Times::zeros(2, 2);
        times.t[0].set(1, 0.1).unwrap();
        times.s[1].set(2, 0.05).unwrap();
        let ctx = TauContext::new(&ip, times.clone(), 8, 8).unwrap();
        let c = Composition::new(vec![2, 1], vec![1, 2]);
        for b in 0..2 {
            let s = solve_type_ii(&ctx, &c, b).unwrap();
            assert!(s.distance(&type_ii_from_tau(&ctx, &c, b).unwrap()) < 1e-9, "II b={b}");
            for a in 0..2 {
                let cf = type_ii_from_cofactors(&ctx, &c, b, a).unwrap();
                assert!(s.distance(&cf) < 1e-9, "cofactor b={b} a={a}");
            }
            let d = solve_dual_type_i(&ip, &times, &c, b).unwrap();
            assert!(d.distance(&dual_type_i_from_tau(&ctx, &c, b).unwrap()) < 1e-9, "I* b={b}");
            let (r, sc) = orthogonality_residual(&ctx, &d).unwrap();
            assert!(r < 1e-10 * sc.max(1.0));
        }
        for a in 0..2 {
            let s = solve_type_i(&ctx, &c, a).unwrap();
            assert!(s.distance(&type_i_from_tau(&ctx, &c, a).unwrap()) < 1e-9, "I a={a}");
            let d = solve_dual_type_ii(&ip, &times, &c, a).unwrap();
            assert!(d.distance(&dual_type_ii_from_tau(&ctx, &c, a).unwrap()) < 1e-9, "II* a={a}");
            let (r, sc) = orthogonality_residual(&ctx, &d).unwrap();
            assert!(r < 1e-10 * sc);
        }
    }

    fn plane_problem() -> Problem {
        use crate::inner_product::{Domain, PlaneDensity};
        use crate::timealg::TimeVector;
        let measure = MeasureSpec::Plane {
            x_domain: Domain::interval(-1.0, 1.5),
            y_domain: Domain::interval(-1.2, 1.0),
            density: PlaneDensity {
                cxx: -0.4,
                cxy: 0.3,
                cyy: -0.7,
                cx: 0.2,
                cy: -0.1,
                c0: 0.0,
            },
        };
        let weights = WeightFamily::new(
            vec![WeightDescriptor::PlainExponential { c: 0.4 }],
            vec![
                WeightDescriptor::PlainExponential { c: -0.3 },
                WeightDescriptor::PlainExponential { c: 0.5 },
            ],
        );
        let times = Times {
            s: vec![TimeVector::from_slice(&[0.1, -0.05])],
            t: vec![TimeVector::from_slice(&[0.07]), TimeVector::from_slice(&[-0.02, 0.03])],
        };
        Problem {
            ip: InnerProduct::with_nodes(measure, weights, 60).unwrap(),
            times,
            composition: Composition::new(vec![3], vec![2, 1]),
        }
    }

    fn tau_of(pr: &Problem) -> f64 {
        TauContext::new(&pr.ip, pr.times.clone(), 4, 4).unwrap().tau(&pr.composition).unwrap()
    }

    #[test]
    fn dualize_is_an_involution() {
        let pr = plane_problem();
        let back = dualize(&dualize(&pr).unwrap()).unwrap();
        assert_eq!(back.ip.measure(), pr.ip.measure());
        assert_eq!(back.ip.weights(), pr.ip.weights());
        assert_eq!(back.times, pr.times);
        assert_eq!(back.composition, pr.composition);
        let (a, b) = (tau_of(&pr), tau_of(&back));
        assert!((a - b).abs() <= 1e-12 * a.abs());
        for k in 0..2 {
            let ca = TauContext::new(&pr.ip, pr.times.clone(), 4, 4).unwrap();
            let cb = TauContext::new(&back.ip, back.times.clone(), 4, 4).unwrap();
            let x = solve_type_ii(&ca, &pr.composition, k).unwrap();
            let y = solve_type_ii(&cb, &back.composition, k).unwrap();
            assert!(x.distance(&y) <= 1e-12);
        }
    }

    #[test]
    fn dualize_keeps_tau() {
        let pr = plane_problem();
        let d = dualize(&pr).unwrap();
        assert_eq!((d.ip.q(), d.ip.p()), (2, 1));
        let (a, b) = (tau_of(&pr), tau_of(&d));
        assert!(a.abs() > 1e-6);
        assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} {b}");
    }

    #[test]
    fn gaussian_dual_type_ii_is_type_ii_at_swapped_times() {
        use crate::timealg::TimeVector;
        let ip = InnerProduct::new(MeasureSpec::gaussian_line(), WeightFamily::unit(1, 1)).unwrap();
        let times = Times {
            s: vec![TimeVector::from_slice(&[0.1, -0.04])],
            t: vec![TimeVector::from_slice(&[-0.06, 0.02])],
        };
        let c = Composition::new(vec![3], vec![3]);
        let dual = solve_dual_type_ii(&ip, &times, &c, 0).unwrap();
        let swapped = Times {
            s: vec![times.t[0].neg()],
            t: vec![times.s[0].neg()],
        };
        let ctx = TauContext::new(&ip, swapped, 5, 5).unwrap();
        let direct = solve_type_ii(&ctx, &c, 0).unwrap();
        assert!(dual.distance(&direct) <= 1e-12);
        assert!(direct.components[0][1].abs() > 1e-3);
    }
}
