//! Formal Cauchy transforms, the matrices `Y`, `Y*`, `W`, `W*` and the
//! bilinear identity.
//!
//! Residues are the coefficient of `z^{-1}`; the factor `2 pi i` and the
//! `-2 pi i` on the lower blocks of `Y` are left out throughout.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_product::{InnerProduct, Side, Times};
use crate::moment_matrix::{Composition, Shift, TauContext};
use crate::mops::{self, signs, MopsKind, MopsSolution};
use crate::report::CheckResult;
use crate::series::{residue_with_exponential, LaurentSeries};
use crate::timealg::TimeVector;

/// Largest truncation order tried by the adaptive bilinear check.
pub const MAX_BILINEAR_ORDER: usize = 160;
/// Relative size of the last residue terms below which a sum is accepted.
pub const TAIL_RATIO: f64 = 1e-13;

/// Short description of a composition and its times for report inputs.
pub fn describe(c: &Composition, times: &Times) -> String {
    if times.max_abs() == 0.0 {
        return c.label();
    }
    let fmt = |v: &[TimeVector]| {
        v.iter()
            .map(|x| {
                let s: Vec<String> = x.as_slice()[..x.support()].iter().map(|y| format!("{y}")).collect();
                format!("[{}]", s.join(" "))
            })
            .collect::<Vec<_>>()
            .join("")
    };
    format!("{} s={} t={}", c.label(), fmt(&times.s), fmt(&times.t))
}

fn block_size(c: &Composition) -> usize {
    c.m.iter().chain(&c.n).copied().max().unwrap_or(0)
}

/// Context able to hold every shift used for `c` at truncation `l`.
pub fn context_for<'a>(ip: &'a InnerProduct, times: &Times, c: &Composition, l: usize) -> Result<TauContext<'a>> {
    TauContext::with_capacity(ip, times.clone(), block_size(c) + 1, l, 1)
}

/// `C_{psi_a} G(z) = sum_{i<=l} <x^i psi_a, G> z^{-i-1}` for a form in the
/// `phi` weights, or `C*_{phi_a} F(z) = sum_{j<=l} <F, y^j phi_a> z^{-j-1}`
/// for a form in the `psi` weights.
pub fn cauchy_transform(ctx: &TauContext, sol: &MopsSolution, a: usize, l: usize) -> LaurentSeries {
    let pr = ctx.pairing();
    let coeffs: Vec<f64> = (0..=l)
        .map(|k| match sol.kind {
            MopsKind::TypeI | MopsKind::TypeII => sol
                .components
                .iter()
                .enumerate()
                .flat_map(|(b, comp)| comp.iter().enumerate().map(move |(j, &g)| (b, j, g)))
                .map(|(b, j, g)| g * pr.get(a, k, b, j))
                .sum(),
            MopsKind::DualTypeI | MopsKind::DualTypeII => sol
                .components
                .iter()
                .enumerate()
                .flat_map(|(aa, comp)| comp.iter().enumerate().map(move |(i, &f)| (aa, i, f)))
                .map(|(aa, i, f)| f * pr.get(aa, i, a, k))
                .sum(),
        })
        .collect();
    LaurentSeries::from_zeta(&coeffs, -1, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveKind {
    Y,
    Ystar,
    W,
    Wstar,
}

/// A `(p+q) x (p+q)` matrix of Laurent series in `z`. For `W` and `W*`
/// column `k` carries the factor `exp(xi(column_times[k], z))`, kept
/// symbolic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveMatrix {
    pub kind: WaveKind,
    pub composition: Composition,
    pub times: Times,
    pub entries: Vec<Vec<LaurentSeries>>,
    pub column_times: Vec<TimeVector>,
}

#[derive(Serialize)]
struct WaveJson<'a> {
    kind: WaveKind,
    composition: &'a Composition,
    column_times: &'a [TimeVector],
    entries: Vec<Vec<Vec<(i32, f64)>>>,
}

impl WaveMatrix {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn to_json(&self) -> String {
        let j = WaveJson {
            kind: self.kind,
            composition: &self.composition,
            column_times: &self.column_times,
            entries: self
                .entries
                .iter()
                .map(|r| r.iter().map(|e| e.pairs()).collect())
                .collect(),
        };
        serde_json::to_string(&j).expect("wave matrix serialises")
    }
}

struct Entry<'c> {
    c: &'c Composition,
    dm: Vec<(usize, i64)>,
    dn: Vec<(usize, i64)>,
    side: Side,
    block: usize,
    dir: Shift,
    power: i32,
    sign: f64,
}

fn shifted_entry(ctx: &TauContext, e: Entry, tau: f64, l: usize) -> Result<LaurentSeries> {
    let Some(cs) = e.c.shifted(&e.dm, &e.dn) else {
        return Ok(LaurentSeries::zero());
    };
    let (coeffs, exact) = match e.side {
        Side::T => (ctx.shift_t(&cs, e.block, e.dir, l)?, e.dir == Shift::Minus),
        Side::S => (ctx.shift_s(&cs, e.block, e.dir, l)?, e.dir == Shift::Plus),
    };
    Ok(LaurentSeries::from_zeta(&coeffs, e.power, exact).scale(e.sign / tau))
}

fn kron(a: usize, b: usize) -> i32 {
    i32::from(a == b)
}

/// Assembles `Y`, `Y*`, `W` or `W*` at composition `c` from shifted tau
/// functions, with Cauchy-type entries known to `l` orders.
pub fn build_wave(ctx: &TauContext, c: &Composition, l: usize, kind: WaveKind) -> Result<WaveMatrix> {
    let tau = ctx.tau_nonzero(c)?;
    let (q, p) = (c.q(), c.p());
    let (m, n) = (&c.m, &c.n);
    let mut entries = vec![vec![LaurentSeries::zero(); p + q]; p + q];
    let star = matches!(kind, WaveKind::Ystar | WaveKind::Wstar);
    let ent = |dm: Vec<(usize, i64)>, dn, side, block, dir, power, sign| Entry {
        c,
        dm,
        dn,
        side,
        block,
        dir,
        power,
        sign,
    };
    for b in 0..p {
        for b2 in 0..p {
            let (row, col) = if star { (b2, b) } else { (b, b2) };
            let (col_block, dir, power) = if star {
                (b, Shift::Plus, kron(b2, b) - 1 - n[b] as i32)
            } else {
                (b2, Shift::Minus, n[b2] as i32 + kron(b, b2) - 1)
            };
            // Y uses tau_{m, n + e_row - e_col}, Y* uses tau_{m, n + e_col - e_row}.
            let dn = match (b == b2, star) {
                (true, _) => vec![],
                (false, false) => vec![(row, 1), (col, -1)],
                (false, true) => vec![(col, 1), (row, -1)],
            };
            let sign = signs::eps(n, row, col);
            entries[row][col] = shifted_entry(ctx, ent(vec![], dn, Side::T, col_block, dir, power, sign), tau, l)?;
        }
    }
    for a in 0..q {
        for b in 0..p {
            if star {
                let e = -signs::eps_mixed(n, m, b, a);
                entries[b][p + a] = shifted_entry(
                    ctx,
                    ent(vec![(a, -1)], vec![(b, -1)], Side::S, a, Shift::Plus, m[a] as i32 - 1, e),
                    tau,
                    l,
                )?;
                entries[p + a][b] = shifted_entry(
                    ctx,
                    ent(vec![(a, 1)], vec![(b, 1)], Side::T, b, Shift::Plus, -(n[b] as i32) - 1, e),
                    tau,
                    l,
                )?;
            } else {
                let e = signs::eps_mixed(m, n, a, b);
                entries[b][p + a] = shifted_entry(
                    ctx,
                    ent(vec![(a, 1)], vec![(b, 1)], Side::S, a, Shift::Minus, -(m[a] as i32) - 1, e),
                    tau,
                    l,
                )?;
                entries[p + a][b] = shifted_entry(
                    ctx,
                    ent(vec![(a, -1)], vec![(b, -1)], Side::T, b, Shift::Minus, n[b] as i32 - 1, e),
                    tau,
                    l,
                )?;
            }
        }
    }
    for a in 0..q {
        for a2 in 0..q {
            // Y: row a2, column a, tau_{m + e_a - e_a2}(s_a - [1/z]).
            // Y*: row a, column a2, tau_{m + e_a - e_a2}(s_a2 + [1/z]).
            let dm = if a == a2 { vec![] } else { vec![(a, 1), (a2, -1)] };
            let (row, col, dir, power, sign) = if star {
                (a, a2, Shift::Plus, kron(a, a2) - 1 + m[a2] as i32, signs::eps(m, a, a2))
            } else {
                (a2, a, Shift::Minus, kron(a, a2) - 1 - m[a] as i32, signs::eps(m, a2, a))
            };
            let shifted_block = if star { a2 } else { a };
            entries[p + row][p + col] =
                shifted_entry(ctx, ent(dm, vec![], Side::S, shifted_block, dir, power, sign), tau, l)?;
        }
    }
    let times = ctx.times().clone();
    let column_times = match kind {
        WaveKind::Y | WaveKind::Ystar => vec![TimeVector::default(); p + q],
        WaveKind::W => times.t.iter().chain(&times.s).cloned().collect(),
        WaveKind::Wstar => times.t.iter().chain(&times.s).map(TimeVector::neg).collect(),
    };
    Ok(WaveMatrix {
        kind,
        composition: c.clone(),
        times,
        entries,
        column_times,
    })
}

/// Coefficientwise distance between two series over the exponents both
/// know, relative to the larger coefficient (floored at `floor`).
fn series_distance(a: &LaurentSeries, b: &LaurentSeries, floor: f64) -> Result<(f64, usize)> {
    let (alo, ahi) = a.known_range();
    let (blo, bhi) = b.known_range();
    let (lo, hi) = (alo.min(blo), ahi.max(bhi));
    let scale = a.max_abs().max(b.max_abs()).max(floor);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for e in lo..=hi {
        if a.knows(e) && b.knows(e) {
            worst = worst.max((a.coeff(e)? - b.coeff(e)?).abs());
            compared += 1;
        }
    }
    Ok((worst / scale, compared))
}

/// Compares every Cauchy-type entry of `Y` and `Y*` with the transform of
/// the corresponding solved form, coefficientwise to order `l`. Also checks
/// the structural zeros of `C_{psi_a} Q^b`.
pub fn verify_cauchy_identities(
    ip: &InnerProduct,
    times: &Times,
    c: &Composition,
    l: usize,
    tol: f64,
) -> Result<Vec<CheckResult>> {
    let ctx = context_for(ip, times, c, l)?;
    let y = build_wave(&ctx, c, l, WaveKind::Y)?;
    let ys = build_wave(&ctx, c, l, WaveKind::Ystar)?;
    let (q, p) = (c.q(), c.p());
    let inputs = describe(c, times);
    let mut worst_q = 0.0f64;
    let mut worst_zero = 0.0f64;
    let mut worst_p = 0.0f64;
    let mut worst_ps = 0.0f64;
    let mut worst_qs = 0.0f64;
    for b in 0..p {
        let sol = mops::solve_type_ii(&ctx, c, b)?;
        for a in 0..q {
            let direct = cauchy_transform(&ctx, &sol, a, l);
            worst_q = worst_q.max(series_distance(&direct, &y.entries[b][p + a], 1e-300)?.0);
            let scale = direct.max_abs().max(1e-300);
            for i in 0..c.m[a] {
                worst_zero = worst_zero.max(direct.coeff(-(i as i32) - 1)?.abs() / scale);
            }
        }
    }
    for a2 in 0..q {
        if c.m[a2] == 0 {
            continue;
        }
        let sol = mops::solve_type_i(&ctx, c, a2)?;
        for a in 0..q {
            let direct = cauchy_transform(&ctx, &sol, a, l);
            worst_p = worst_p.max(series_distance(&direct, &y.entries[p + a2][p + a], 1e-300)?.0);
        }
    }
    for b2 in 0..p {
        if c.n[b2] == 0 {
            continue;
        }
        let sol = mops::solve_dual_type_i(ip, times, c, b2)?;
        for b in 0..p {
            let direct = cauchy_transform(&ctx, &sol, b, l);
            worst_ps = worst_ps.max(series_distance(&direct, &ys.entries[b2][b], 1e-300)?.0);
        }
    }
    for a in 0..q {
        let sol = mops::solve_dual_type_ii(ip, times, c, a)?;
        for b in 0..p {
            let direct = cauchy_transform(&ctx, &sol, b, l);
            let tau_side = ys.entries[p + a][b].scale(-1.0);
            worst_qs = worst_qs.max(series_distance(&direct, &tau_side, 1e-300)?.0);
        }
    }
    Ok(vec![
        CheckResult::new("cauchy_type_ii", inputs.clone(), worst_q, tol),
        CheckResult::new("cauchy_type_ii_structural_zeros", inputs.clone(), worst_zero, tol),
        CheckResult::new("cauchy_type_i", inputs.clone(), worst_p, tol),
        CheckResult::new("cauchy_dual_type_i", inputs.clone(), worst_ps, tol),
        CheckResult::new("cauchy_dual_type_ii", inputs, worst_qs, tol),
    ])
}

/// `Res f(z) C_psi g(z) = <f psi, g>` and `Res C*_phi f(z) g(z) = <f, phi g>`
/// for random cubic `f`, `g`, with the transforms taken from the tau side.
pub fn verify_residue_identities(
    ip: &InnerProduct,
    times: &Times,
    c: &Composition,
    seed: u64,
    tol: f64,
) -> Result<Vec<CheckResult>> {
    let l = 8;
    let ctx = context_for(ip, times, c, l)?;
    let y = build_wave(&ctx, c, l, WaveKind::Y)?;
    let ys = build_wave(&ctx, c, l, WaveKind::Ystar)?;
    let (q, p) = (c.q(), c.p());
    let pr = ctx.pairing();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cubic = || -> Vec<f64> { (0..4).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let mut worst = 0.0f64;
    let mut worst_dual = 0.0f64;
    for b in 0..p {
        let sol = mops::solve_type_ii(&ctx, c, b)?;
        for a in 0..q {
            let f = cubic();
            let lhs = LaurentSeries::polynomial(0, f.clone()).mul(&y.entries[b][p + a]).residue()?;
            let mut rhs = 0.0;
            let mut mag = 0.0f64;
            for (i, fi) in f.iter().enumerate() {
                for (bb, comp) in sol.components.iter().enumerate() {
                    for (j, g) in comp.iter().enumerate() {
                        let term = fi * g * pr.get(a, i, bb, j);
                        rhs += term;
                        mag += term.abs();
                    }
                }
            }
            worst = worst.max((lhs - rhs).abs() / mag.max(1e-300));
        }
    }
    for b2 in 0..p {
        if c.n[b2] == 0 {
            continue;
        }
        let sol = mops::solve_dual_type_i(ip, times, c, b2)?;
        for b in 0..p {
            let g = cubic();
            let lhs = ys.entries[b2][b].mul(&LaurentSeries::polynomial(0, g.clone())).residue()?;
            let mut rhs = 0.0;
            let mut mag = 0.0f64;
            for (j, gj) in g.iter().enumerate() {
                for (a, comp) in sol.components.iter().enumerate() {
                    for (i, f) in comp.iter().enumerate() {
                        let term = f * gj * pr.get(a, i, b, j);
                        rhs += term;
                        mag += term.abs();
                    }
                }
            }
            worst_dual = worst_dual.max((lhs - rhs).abs() / mag.max(1e-300));
        }
    }
    let inputs = describe(c, times);
    Ok(vec![
        CheckResult::new("residue_identity", inputs.clone(), worst, tol),
        CheckResult::new("residue_identity_dual", inputs, worst_dual, tol),
    ])
}

/// `sum_k A[r][k] B[c][k]` for all `r`, `c`.
fn times_transpose(a: &[Vec<LaurentSeries>], b: &[Vec<LaurentSeries>]) -> Vec<Vec<LaurentSeries>> {
    let n = a.len();
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    (0..n).fold(LaurentSeries::polynomial(0, vec![]), |acc, k| {
                        acc.add(&a[r][k].mul(&b[c][k]))
                    })
                })
                .collect()
        })
        .collect()
}

/// `max |(Y Y*^T - I)_e|` over exponents `e` in `[2 - l, 0]` and all known
/// positive exponents, relative to the same product of absolute values.
pub fn wave_inverse_residual(y: &WaveMatrix, ys: &WaveMatrix, l: usize) -> Result<f64> {
    let prod = times_transpose(&y.entries, &ys.entries);
    let abs = |w: &WaveMatrix| -> Vec<Vec<LaurentSeries>> {
        w.entries.iter().map(|r| r.iter().map(LaurentSeries::abs).collect()).collect()
    };
    let mag = times_transpose(&abs(y), &abs(ys));
    let lo = 2 - l as i32;
    let mut worst = 0.0f64;
    for (r, row) in prod.iter().enumerate() {
        for (c, s) in row.iter().enumerate() {
            let (_, hi) = s.known_range();
            if !s.knows(0) {
                return Err(Error::WindowTooNarrow(format!(
                    "entry ({r}, {c}) of Y Y*^T unknown at z^0"
                )));
            }
            let scale = mag[r][c].max_abs().max(1.0);
            for e in lo..=hi.max(0) {
                if !s.knows(e) {
                    continue;
                }
                let target = if r == c && e == 0 { 1.0 } else { 0.0 };
                worst = worst.max((s.coeff(e)? - target).abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Result of the tau form of the bilinear identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearOutcome {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs|` over the largest summand bound.
    pub residual: f64,
    pub scale: f64,
    pub order: usize,
}

fn abs_times(v: &TimeVector) -> TimeVector {
    TimeVector::from_slice(&v.as_slice().iter().map(|x| x.abs()).collect::<Vec<_>>())
}

struct Summands {
    lhs: Vec<(f64, f64)>,
    rhs: Vec<(f64, f64)>,
    scale: f64,
    tail: f64,
}

fn residue_term(f: &LaurentSeries, v: &TimeVector) -> Result<(f64, f64, f64)> {
    let (val, tail) = residue_with_exponential(f, v)?;
    let (bound, _) = residue_with_exponential(&f.abs(), &abs_times(v))?;
    Ok((val, bound, tail))
}

fn bilinear_summands(
    ip: &InnerProduct,
    (c, times): (&Composition, &Times),
    (cs, times_s): (&Composition, &Times),
    l: usize,
) -> Result<Summands> {
    let block = block_size(c).max(block_size(cs));
    let ctx = TauContext::with_capacity(ip, times.clone(), block + 1, l, 1)?;
    let ctx_s = TauContext::with_capacity(ip, times_s.clone(), block + 1, l, 1)?;
    let mut out = Summands {
        lhs: Vec::new(),
        rhs: Vec::new(),
        scale: 0.0,
        tail: 0.0,
    };
    for b in 0..c.p() {
        let (Some(x), Some(xs)) = (c.shifted(&[], &[(b, -1)]), cs.shifted(&[], &[(b, 1)])) else {
            out.lhs.push((0.0, 0.0));
            continue;
        };
        let fa = ctx.shift_t(&x, b, Shift::Minus, l)?;
        let fb = ctx_s.shift_t(&xs, b, Shift::Plus, l)?;
        let power = c.n[b] as i32 - cs.n[b] as i32 - 2;
        let f = LaurentSeries::from_zeta(&fa, 0, true)
            .mul(&LaurentSeries::from_zeta(&fb, 0, false))
            .shift(power)
            .scale(signs::sigma(&c.n, &cs.n, b));
        let (val, bound, tail) = residue_term(&f, &times.t[b].sub(&times_s.t[b]))?;
        out.lhs.push((val, bound));
        out.scale = out.scale.max(bound);
        out.tail = out.tail.max(tail);
    }
    for a in 0..c.q() {
        let (Some(x), Some(xs)) = (c.shifted(&[(a, 1)], &[]), cs.shifted(&[(a, -1)], &[])) else {
            out.rhs.push((0.0, 0.0));
            continue;
        };
        let fa = ctx.shift_s(&x, a, Shift::Minus, l)?;
        let fb = ctx_s.shift_s(&xs, a, Shift::Plus, l)?;
        let power = cs.m[a] as i32 - c.m[a] as i32 - 2;
        let f = LaurentSeries::from_zeta(&fa, 0, false)
            .mul(&LaurentSeries::from_zeta(&fb, 0, true))
            .shift(power)
            .scale(signs::sigma(&c.m, &cs.m, a));
        let (val, bound, tail) = residue_term(&f, &times.s[a].sub(&times_s.s[a]))?;
        out.rhs.push((val, bound));
        out.scale = out.scale.max(bound);
        out.tail = out.tail.max(tail);
    }
    Ok(out)
}

fn check_bilinear_shapes(c: &Composition, cs: &Composition) -> Result<()> {
    if c.m_total() + 1 != c.n_total() || cs.m_total() != cs.n_total() + 1 {
        return Err(Error::SizeMismatch(format!(
            "bilinear identity needs |m| = |n| - 1 and |m*| = |n*| + 1, got {} and {}",
            c.label(),
            cs.label()
        )));
    }
    if c.p() != cs.p() || c.q() != cs.q() {
        return Err(Error::SizeMismatch("compositions have different block counts".into()));
    }
    Ok(())
}

/// Both sides of the tau form of the bilinear identity for `(m, n)` with
/// `|m| = |n| - 1` at times `times` and `(m*, n*)` with `|m*| = |n*| + 1`
/// at `times_s`. The truncation order starts at `l` and doubles until the
/// residue sums have converged.
pub fn verify_bilinear(
    ip: &InnerProduct,
    c: &Composition,
    times: &Times,
    cs: &Composition,
    times_s: &Times,
    l: usize,
) -> Result<BilinearOutcome> {
    check_bilinear_shapes(c, cs)?;
    let mut order = l.max(2);
    loop {
        let attempt = bilinear_summands(ip, (c, times), (cs, times_s), order);
        match attempt {
            Ok(s) if s.tail <= TAIL_RATIO * s.scale => {
                let lhs: f64 = s.lhs.iter().map(|x| x.0).sum();
                let rhs: f64 = s.rhs.iter().map(|x| x.0).sum();
                let scale = s.scale.max(f64::MIN_POSITIVE);
                return Ok(BilinearOutcome {
                    lhs,
                    rhs,
                    residual: (lhs - rhs).abs() / scale,
                    scale: s.scale,
                    order,
                });
            }
            Ok(_) | Err(Error::WindowTooNarrow(_)) if order < MAX_BILINEAR_ORDER => {
                order = (order * 2).min(MAX_BILINEAR_ORDER);
            }
            Ok(s) => {
                return Err(Error::WindowTooNarrow(format!(
                    "residue sums still changing at order {order} (tail {:.3e}, scale {:.3e})",
                    s.tail, s.scale
                )))
            }
            Err(e) => return Err(e),
        }
    }
}

/// `max |Res (W W*^T)_{r c}|` over all entries, relative to the residue of
/// the corresponding sum of absolute values, for square `(m, n)` at
/// `times` and square `(m*, n*)` at `times_s`.
pub fn bilinear_matrix_residual(
    ip: &InnerProduct,
    c: &Composition,
    times: &Times,
    cs: &Composition,
    times_s: &Times,
    l: usize,
) -> Result<f64> {
    c.check_square()?;
    cs.check_square()?;
    let block = block_size(c).max(block_size(cs));
    let ctx = TauContext::with_capacity(ip, times.clone(), block + 1, l, 1)?;
    let ctx_s = TauContext::with_capacity(ip, times_s.clone(), block + 1, l, 1)?;
    let w = build_wave(&ctx, c, l, WaveKind::W)?;
    let ws = build_wave(&ctx_s, cs, l, WaveKind::Wstar)?;
    let n = w.size();
    let mut worst = 0.0f64;
    for r in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            let mut mag = 0.0f64;
            for k in 0..n {
                let f = w.entries[r][k].mul(&ws.entries[col][k]);
                let v = w.column_times[k].add(&ws.column_times[k]);
                let (val, bound, tail) = residue_term(&f, &v)?;
                if tail > TAIL_RATIO * bound.max(f64::MIN_POSITIVE) {
                    return Err(Error::WindowTooNarrow(format!(
                        "entry ({r}, {col}) residue not converged at order {l}"
                    )));
                }
                acc += val;
                mag += bound;
            }
            if mag > 0.0 {
                worst = worst.max(acc.abs() / mag);
            }
        }
    }
    Ok(worst)
}

/// The `(b1, b2)` entry of the matrix form, multiplied back by both tau
/// functions, against the tau form at `(m, n + e_b1)` and `(m*, n* - e_b2)`.
/// Returns the largest mismatch of individual summands relative to the
/// largest summand bound, after fixing one global sign.
pub fn bilinear_relabel_residual(
    ip: &InnerProduct,
    c: &Composition,
    times: &Times,
    cs: &Composition,
    times_s: &Times,
    (b1, b2): (usize, usize),
    l: usize,
) -> Result<f64> {
    let (p, q) = (c.p(), c.q());
    let block = block_size(c).max(block_size(cs));
    let ctx = TauContext::with_capacity(ip, times.clone(), block + 1, l, 1)?;
    let ctx_s = TauContext::with_capacity(ip, times_s.clone(), block + 1, l, 1)?;
    let tau = ctx.tau_nonzero(c)?;
    let tau_s = ctx_s.tau_nonzero(cs)?;
    let w = build_wave(&ctx, c, l, WaveKind::W)?;
    let ws = build_wave(&ctx_s, cs, l, WaveKind::Wstar)?;
    let mut entry_terms = Vec::with_capacity(p + q);
    for k in 0..p + q {
        let f = w.entries[b1][k].mul(&ws.entries[b2][k]);
        let v = w.column_times[k].add(&ws.column_times[k]);
        let (val, _, _) = residue_term(&f, &v)?;
        // The alpha columns sit on the right-hand side of the tau form.
        let sgn = if k < p { 1.0 } else { -1.0 };
        entry_terms.push(sgn * val * tau * tau_s);
    }
    let relabeled = c.shifted(&[], &[(b1, 1)]).expect("adding to a block");
    let Some(relabeled_s) = cs.shifted(&[], &[(b2, -1)]) else {
        return Err(Error::SizeMismatch(format!("n*_{} = 0 cannot be lowered", b2 + 1)));
    };
    let s = bilinear_summands(ip, (&relabeled, times), (&relabeled_s, times_s), l)?;
    let sym: Vec<f64> = s.lhs.iter().chain(&s.rhs).map(|x| x.0).collect();
    let scale = s.scale.max(f64::MIN_POSITIVE);
    let pivot = (0..sym.len())
        .max_by(|&i, &j| sym[i].abs().total_cmp(&sym[j].abs()))
        .unwrap_or(0);
    let sign = if sym[pivot] * entry_terms[pivot] < 0.0 { -1.0 } else { 1.0 };
    Ok(sym
        .iter()
        .zip(&entry_terms)
        .map(|(a, b)| (a - sign * b).abs() / scale)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner_product::{Domain, MeasureSpec, WeightDescriptor, WeightFamily};

    fn gaussian() -> InnerProduct {
        InnerProduct::new(MeasureSpec::gaussian_line(), WeightFamily::unit(1, 1)).unwrap()
    }

    fn mixed() -> InnerProduct {
        InnerProduct::with_nodes(
            MeasureSpec::Line {
                domain: Domain::interval(-1.5, 1.5),
                density: WeightDescriptor::standard_gaussian(),
            },
            WeightFamily::new(
                vec![
                    WeightDescriptor::PlainExponential { c: 0.3 },
                    WeightDescriptor::PlainExponential { c: -0.4 },
                ],
                vec![
                    WeightDescriptor::PlainExponential { c: 0.5 },
                    WeightDescriptor::PlainExponential { c: -0.7 },
                ],
            ),
            80,
        )
        .unwrap()
    }

    fn small_times(q: usize, p: usize) -> Times {
        let mut t = Times::zeros(q, p);
        for (k, v) in t.s.iter_mut().enumerate() {
            *v = TimeVector::from_slice(&[0.05 * (k as f64 + 1.0), -0.03, 0.02]);
        }
        for (k, v) in t.t.iter_mut().enumerate() {
            *v = TimeVector::from_slice(&[-0.04 * (k as f64 + 1.0), 0.06, -0.01]);
        }
        t
    }

    #[test]
    fn cauchy_of_z_is_second_moment() {
        let ip = gaussian();
        let c = Composition::new(vec![1], vec![1]);
        let ctx = context_for(&ip, &Times::zeros(1, 1), &c, 4).unwrap();
        let q = mops::solve_type_ii(&ctx, &c, 0).unwrap();
        let s = cauchy_transform(&ctx, &q, 0, 4);
        assert!(s.coeff(-1).unwrap().abs() < 1e-14);
        let mu2 = (2.0 * std::f64::consts::PI).sqrt();
        assert!((s.coeff(-2).unwrap() - mu2).abs() < 1e-12);
    }

    #[test]
    fn zero_form_has_zero_transform() {
        let ip = gaussian();
        let c = Composition::new(vec![1], vec![1]);
        let ctx = context_for(&ip, &Times::zeros(1, 1), &c, 4).unwrap();
        let sol = MopsSolution {
            kind: MopsKind::TypeII,
            index: 0,
            composition: c,
            components: vec![vec![]],
        };
        assert_eq!(cauchy_transform(&ctx, &sol, 0, 4).max_abs(), 0.0);
    }

    #[test]
    fn y_corner_is_hermite() {
        let ip = gaussian();
        let c = Composition::new(vec![3], vec![3]);
        let ctx = context_for(&ip, &Times::zeros(1, 1), &c, 6).unwrap();
        let y = build_wave(&ctx, &c, 6, WaveKind::Y).unwrap();
        let want = [(0, 0.0), (1, -3.0), (2, 0.0), (3, 1.0)];
        for (e, v) in want {
            assert!((y.entries[0][0].coeff(e).unwrap() - v).abs() < 1e-12);
        }
        assert!(y.column_times.iter().all(TimeVector::is_zero));
    }

    #[test]
    fn circle_wave_matrix_is_not_inverted_by_star() {
        // <x f, g> != <f, y g> on the circle: Y = [[z, z^-2], [1, z^-1]]
        let ip = InnerProduct::new(MeasureSpec::Circle, WeightFamily::unit(1, 1)).unwrap();
        let c = Composition::new(vec![1], vec![1]);
        let times = Times::zeros(1, 1);
        let ctx = context_for(&ip, &times, &c, 6).unwrap();
        let y = build_wave(&ctx, &c, 6, WaveKind::Y).unwrap();
        let e = &y.entries;
        assert_eq!(e[0][0].coeff(1).unwrap(), 1.0);
        assert_eq!(e[0][1].coeff(-2).unwrap(), 1.0);
        assert_eq!(e[1][0].coeff(0).unwrap(), 1.0);
        assert_eq!(e[1][1].coeff(-1).unwrap(), 1.0);
        let det = e[0][0].mul(&e[1][1]).sub(&e[0][1].mul(&e[1][0]));
        assert_eq!(det.coeff(-2).unwrap(), -1.0);
        assert!(!ip.is_symmetric());
    }

    #[test]
    fn gaussian_cauchy_identities() {
        let ip = gaussian();
        for n in 1..=4 {
            let c = Composition::new(vec![n], vec![n]);
            for r in verify_cauchy_identities(&ip, &Times::zeros(1, 1), &c, 8, 1e-9).unwrap() {
                assert!(r.pass, "{r:?}");
            }
        }
    }

    #[test]
    fn mixed_cauchy_and_residues_with_times() {
        let ip = mixed();
        let times = small_times(2, 2);
        let c = Composition::new(vec![2, 1], vec![1, 2]);
        for r in verify_cauchy_identities(&ip, &times, &c, 8, 1e-8).unwrap() {
            assert!(r.pass, "{r:?}");
        }
        for r in verify_residue_identities(&ip, &times, &c, 7, 1e-10).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn y_times_ystar_is_identity() {
        let ip = mixed();
        let times = small_times(2, 2);
        for (m, n) in [(vec![2, 1], vec![1, 2]), (vec![1, 1], vec![2, 0]), (vec![3, 0], vec![1, 2])] {
            let c = Composition::new(m, n);
            let l = 12;
            let ctx = context_for(&ip, &times, &c, l).unwrap();
            let y = build_wave(&ctx, &c, l, WaveKind::Y).unwrap();
            let ys = build_wave(&ctx, &c, l, WaveKind::Ystar).unwrap();
            let r = wave_inverse_residual(&y, &ys, l).unwrap();
            assert!(r < 1e-10, "{} {r}", c.label());
        }
    }

    #[test]
    fn bilinear_same_times_gaussian() {
        let ip = gaussian();
        let t = Times::zeros(1, 1);
        for n in 1..=4 {
            let c = Composition::new(vec![n - 1], vec![n]);
            let cs = Composition::new(vec![n], vec![n - 1]);
            let out = verify_bilinear(&ip, &c, &t, &cs, &t, 8).unwrap();
            assert!(out.residual < 1e-9, "{out:?}");
            assert!(out.scale > 0.0);
        }
    }

    #[test]
    fn bilinear_mixed_with_times() {
        let ip = mixed();
        let c = Composition::new(vec![1, 1], vec![2, 1]);
        let cs = Composition::new(vec![2, 1], vec![1, 1]);
        let out = verify_bilinear(&ip, &c, &small_times(2, 2), &cs, &Times::zeros(2, 2), 10).unwrap();
        assert!(out.residual < 1e-8, "{out:?}");
        let sq = Composition::new(vec![1, 1], vec![1, 1]);
        let sq2 = Composition::new(vec![2, 1], vec![1, 2]);
        let r = bilinear_matrix_residual(&ip, &sq, &small_times(2, 2), &sq2, &Times::zeros(2, 2), 40).unwrap();
        assert!(r < 1e-9, "{r}");
        let r = bilinear_relabel_residual(&ip, &sq, &small_times(2, 2), &sq2, &Times::zeros(2, 2), (0, 1), 40)
            .unwrap();
        assert!(r < 1e-10, "{r}");
    }

    #[test]
    fn bilinear_rejects_wrong_shapes() {
        let ip = gaussian();
        let t = Times::zeros(1, 1);
        let c = Composition::new(vec![1], vec![1]);
        assert!(matches!(
            verify_bilinear(&ip, &c, &t, &c, &t, 4),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn residue_conventions() {
        let f = LaurentSeries::polynomial(-2, vec![5.0, 3.0]);
        assert_eq!(f.residue().unwrap(), 3.0);
        assert_eq!(LaurentSeries::polynomial(0, vec![1.0, 2.0]).residue().unwrap(), 0.0);
    }

    #[test]
    fn wave_json_has_pairs() {
        let ip = gaussian();
        let c = Composition::new(vec![1], vec![1]);
        let ctx = context_for(&ip, &Times::zeros(1, 1), &c, 3).unwrap();
        let y = build_wave(&ctx, &c, 3, WaveKind::W).unwrap();
        let v: serde_json::Value = serde_json::from_str(&y.to_json()).unwrap();
        assert_eq!(v["entries"][0][0], serde_json::json!([[0, 0.0], [1, 1.0]]));
    }
}
