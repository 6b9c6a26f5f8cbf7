//! Hirota bilinear expressions `S_j(d~) F o G` from Miwa-shift products, and
//! the PDE ladder they imply for `ln tau`.

use crate::cauchy_wave::describe;
use crate::error::Result;
use crate::inner_product::{Direction, InnerProduct, Side, Times};
use crate::moment_matrix::{Composition, Shift, TauContext};
use crate::report::CheckResult;

/// Largest `l` in the ladder `S_{l + ...}`.
pub const MAX_LADDER: usize = 2;

/// Context holding everything the ladder and compatibility checks need.
pub fn ladder_context<'a>(ip: &'a InnerProduct, times: &Times, c: &Composition) -> Result<TauContext<'a>> {
    let block = c.m.iter().chain(&c.n).copied().max().unwrap_or(0);
    TauContext::with_capacity(ip, times.clone(), block + 1, MAX_LADDER + 2, 4)
}

/// `S_j(d~_v) F o G` as the `zeta^j` coefficient of
/// `F(v + [zeta]) G(v - [zeta])`, where `v` is the time block `block` on
/// `side`. Returns the value and the sum of the absolute values of the
/// products that make it up.
pub fn hirota_coeff(
    ctx: &TauContext,
    f: &Composition,
    g: &Composition,
    side: Side,
    block: usize,
    j: usize,
) -> Result<(f64, f64)> {
    let (fp, gm) = match side {
        Side::T => (
            ctx.shift_t(f, block, Shift::Plus, j)?,
            ctx.shift_t(g, block, Shift::Minus, j)?,
        ),
        Side::S => (
            ctx.shift_s(f, block, Shift::Plus, j)?,
            ctx.shift_s(g, block, Shift::Minus, j)?,
        ),
    };
    let mut value = 0.0;
    let mut mag = 0.0;
    for k in 0..=j {
        let term = fp.get(k).copied().unwrap_or(0.0) * gm.get(j - k).copied().unwrap_or(0.0);
        value += term;
        mag += term.abs();
    }
    Ok((value, mag))
}

/// Rounding allowance, in ulps of the largest trace term, for values that
/// cancel far below their terms.
const ROUNDING_ULPS: f64 = 64.0;

/// `rel` with the scale raised to the level where rounding in terms of size
/// `terms` stays within `tol`.
fn floored(diff: f64, scale: f64, terms: f64, tol: f64) -> f64 {
    let floor = if tol > 0.0 {
        ROUNDING_ULPS * f64::EPSILON * terms / tol
    } else {
        0.0
    };
    rel(diff, scale.max(floor))
}

fn rel(diff: f64, scale: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff.abs() / scale.max(f64::MIN_POSITIVE)
    }
}

/// Hirota form of one ladder equation: `sign * tau^2 * d2 ln tau` against
/// `S_j F o G`. Missing compositions make the right side vanish.
#[allow(clippy::too_many_arguments)]
fn ladder_term(
    ctx: &TauContext,
    c: &Composition,
    tau: f64,
    dirs: [Direction; 2],
    sign: f64,
    pair: (Option<Composition>, Option<Composition>),
    side: Side,
    block: usize,
    j: usize,
) -> Result<f64> {
    let lhs = sign * tau * tau * ctx.log_tau_derivative(c, &dirs)?;
    let (rhs, mag) = match pair {
        (Some(f), Some(g)) => hirota_coeff(ctx, &f, &g, side, block, j)?,
        _ => (0.0, 0.0),
    };
    Ok(rel(lhs - rhs, lhs.abs().max(mag)))
}

/// Ratio form `d ln(F/G) = D2(num) / D2(den)`; `None` when a composition is
/// missing (the denominator then vanishes).
fn ratio_term(
    ctx: &TauContext,
    c: &Composition,
    (f, g): (Option<Composition>, Option<Composition>),
    dir: Direction,
    num: [Direction; 2],
    den: [Direction; 2],
    tol: f64,
) -> Result<Option<f64>> {
    let (Some(f), Some(g)) = (f, g) else {
        return Ok(None);
    };
    let (lf, sf) = ctx.log_tau_derivative_scaled(&f, &[dir])?;
    let (lg, sg) = ctx.log_tau_derivative_scaled(&g, &[dir])?;
    let (n, sn) = ctx.log_tau_derivative_scaled(c, &num)?;
    let (d, sd) = ctx.log_tau_derivative_scaled(c, &den)?;
    let (lhs, rhs) = (lf - lg, n / d);
    // Both sides can cancel far below their terms (the circle at small
    // times).
    let terms = sf.max(sg).max((sn + rhs.abs() * sd) / d.abs());
    Ok(Some(floored(lhs - rhs, lhs.abs().max(rhs.abs()), terms, tol)))
}

/// Checks every Hirota-form equation for `l <= 2`, the three determinant
/// ratios at `l = 0` and the four ratio forms, over all index pairs.
pub fn verify_pde_ladder(ip: &InnerProduct, times: &Times, c: &Composition, tol: f64) -> Result<Vec<CheckResult>> {
    let ctx = ladder_context(ip, times, c)?;
    let tau = ctx.tau_nonzero(c)?;
    let (q, p) = (c.q(), c.p());
    let inputs = describe(c, times);
    let mut out = Vec::new();
    let push = |out: &mut Vec<CheckResult>, id: String, r: f64| out.push(CheckResult::new(id, inputs.clone(), r, tol));
    let t = Direction::t;
    let s = Direction::s;

    for b in 0..p {
        for b2 in 0..p {
            let f = c.shifted(&[], &[(b, 1), (b2, -1)]);
            let g = c.shifted(&[], &[(b2, 1), (b, -1)]);
            let d = usize::from(b == b2);
            let mut worst = 0.0f64;
            for l in 0..=MAX_LADDER {
                let pair = (f.clone(), g.clone());
                worst = worst.max(ladder_term(&ctx, c, tau, [t(b, l + 1), t(b2, 1)], 1.0, pair, Side::T, b, l + 2 * d)?);
            }
            push(&mut out, format!("hirota_t_t({},{})", b + 1, b2 + 1), worst);
            if b != b2 {
                let lhs = ctx.log_tau_derivative(c, &[t(b, 1), t(b2, 1)])?;
                let (rhs, mag) = match (&f, &g) {
                    (Some(f), Some(g)) => {
                        let (tf, tg) = (ctx.tau(f)?, ctx.tau(g)?);
                        (tf * tg / (tau * tau), (tf * tg / (tau * tau)).abs())
                    }
                    _ => (0.0, 0.0),
                };
                push(&mut out, format!("ratio_det_t_t({},{})", b + 1, b2 + 1), rel(lhs - rhs, lhs.abs().max(mag)));
                if let Some(r) = ratio_term(&ctx, c, (f, g), t(b, 1), [t(b, 2), t(b2, 1)], [t(b, 1), t(b2, 1)], tol)? {
                    push(&mut out, format!("ratio_t_t({},{})", b + 1, b2 + 1), r);
                }
            }
        }
    }
    for a in 0..q {
        for a2 in 0..q {
            let f = c.shifted(&[(a2, 1), (a, -1)], &[]);
            let g = c.shifted(&[(a, 1), (a2, -1)], &[]);
            let d = usize::from(a == a2);
            let mut worst = 0.0f64;
            for l in 0..=MAX_LADDER {
                let pair = (f.clone(), g.clone());
                worst = worst.max(ladder_term(&ctx, c, tau, [s(a, l + 1), s(a2, 1)], 1.0, pair, Side::S, a, l + 2 * d)?);
            }
            push(&mut out, format!("hirota_s_s({},{})", a + 1, a2 + 1), worst);
            if a != a2 {
                let lhs = ctx.log_tau_derivative(c, &[s(a, 1), s(a2, 1)])?;
                let (rhs, mag) = match (&f, &g) {
                    (Some(f), Some(g)) => {
                        let v = ctx.tau(f)? * ctx.tau(g)? / (tau * tau);
                        (v, v.abs())
                    }
                    _ => (0.0, 0.0),
                };
                push(&mut out, format!("ratio_det_s_s({},{})", a + 1, a2 + 1), rel(lhs - rhs, lhs.abs().max(mag)));
                // The ratio is taken with d2 ln tau / ds_{a,1} ds_{a',1} in the
                // denominator.
                let fg = (c.shifted(&[(a, -1), (a2, 1)], &[]), c.shifted(&[(a2, -1), (a, 1)], &[]));
                if let Some(r) = ratio_term(&ctx, c, fg, s(a, 1), [s(a, 2), s(a2, 1)], [s(a, 1), s(a2, 1)], tol)? {
                    push(&mut out, format!("ratio_s_s({},{})", a + 1, a2 + 1), r);
                }
            }
        }
    }
    for a in 0..q {
        for b in 0..p {
            let up = c.shifted(&[(a, 1)], &[(b, 1)]);
            let down = c.shifted(&[(a, -1)], &[(b, -1)]);
            let mut worst_st = 0.0f64;
            let mut worst_ts = 0.0f64;
            for l in 0..=MAX_LADDER {
                worst_st = worst_st.max(ladder_term(
                    &ctx,
                    c,
                    tau,
                    [s(a, 1), t(b, l + 1)],
                    -1.0,
                    (up.clone(), down.clone()),
                    Side::T,
                    b,
                    l,
                )?);
                worst_ts = worst_ts.max(ladder_term(
                    &ctx,
                    c,
                    tau,
                    [t(b, 1), s(a, l + 1)],
                    -1.0,
                    (down.clone(), up.clone()),
                    Side::S,
                    a,
                    l,
                )?);
            }
            let label = format!("({},{})", a + 1, b + 1);
            push(&mut out, format!("hirota_s_t{label}"), worst_st);
            push(&mut out, format!("hirota_t_s{label}"), worst_ts);
            let lhs = ctx.log_tau_derivative(c, &[s(a, 1), t(b, 1)])?;
            let (rhs, mag) = match (&up, &down) {
                (Some(f), Some(g)) => {
                    let v = -ctx.tau(f)? * ctx.tau(g)? / (tau * tau);
                    (v, v.abs())
                }
                _ => (0.0, 0.0),
            };
            push(&mut out, format!("ratio_det_s_t{label}"), rel(lhs - rhs, lhs.abs().max(mag)));
            if let Some(r) = ratio_term(&ctx, c, (up.clone(), down.clone()), t(b, 1), [t(b, 2), s(a, 1)], [t(b, 1), s(a, 1)], tol)? {
                push(&mut out, format!("ratio_t_s{label}"), r);
            }
            if let Some(r) = ratio_term(&ctx, c, (down, up), s(a, 1), [s(a, 2), t(b, 1)], [s(a, 1), t(b, 1)], tol)? {
                push(&mut out, format!("ratio_s_t{label}"), r);
            }
        }
    }
    out.extend(verify_hirota_parity(&ctx, c, &inputs, tol)?);
    Ok(out)
}

/// `S_1 F o F = 0` and `S_3 F o F = F^2 d2 ln F / dv_1 dv_2` along every
/// time block, at `F = tau_{m n}`.
pub fn verify_hirota_parity(ctx: &TauContext, c: &Composition, inputs: &str, tol: f64) -> Result<Vec<CheckResult>> {
    let tau = ctx.tau_nonzero(c)?;
    let mut worst = 0.0f64;
    let dirs = (0..c.p())
        .map(|b| (Side::T, b, Direction::t(b, 1), Direction::t(b, 2)))
        .chain((0..c.q()).map(|a| (Side::S, a, Direction::s(a, 1), Direction::s(a, 2))));
    for (side, block, d1, d2) in dirs {
        let (v1, m1) = hirota_coeff(ctx, c, c, side, block, 1)?;
        worst = worst.max(rel(v1, m1));
        let (v3, m3) = hirota_coeff(ctx, c, c, side, block, 3)?;
        let want = tau * tau * ctx.log_tau_derivative(c, &[d1, d2])?;
        worst = worst.max(rel(v3 - want, m3.max(want.abs())));
    }
    Ok(vec![CheckResult::new("hirota_parity", inputs.to_string(), worst, tol)])
}

/// `d/dx (N / D)` written as `(N_x D - N D_x) / D^2`, with the scale of the
/// two products and the size of the trace terms inside them.
fn quotient_derivative(
    ctx: &TauContext,
    c: &Composition,
    x: Direction,
    num: [Direction; 2],
    den: [Direction; 2],
) -> Result<(f64, f64, f64)> {
    let (n, sn) = ctx.log_tau_derivative_scaled(c, &num)?;
    let (d, sd) = ctx.log_tau_derivative_scaled(c, &den)?;
    let (nx, snx) = ctx.log_tau_derivative_scaled(c, &[x, num[0], num[1]])?;
    let (dx, sdx) = ctx.log_tau_derivative_scaled(c, &[x, den[0], den[1]])?;
    let terms = snx * d.abs() + nx.abs() * sd + sn * dx.abs() + n.abs() * sdx;
    let scale = (nx * d).abs().max((n * dx).abs());
    Ok(((nx * d - n * dx) / (d * d), scale / (d * d), terms / (d * d)))
}

/// The compatibility equations between pairs of ratio forms, and for
/// `p = q = 1` the Wronskian form of the mixed one.
pub fn verify_compatibility_pdes(ip: &InnerProduct, times: &Times, c: &Composition, tol: f64) -> Result<Vec<CheckResult>> {
    let ctx = ladder_context(ip, times, c)?;
    ctx.tau_nonzero(c)?;
    let (q, p) = (c.q(), c.p());
    let inputs = describe(c, times);
    let t = Direction::t;
    let s = Direction::s;
    let mut out = Vec::new();
    let mut pair = |id: String, x: (f64, f64, f64), y: (f64, f64, f64)| {
        let r = floored(x.0 + y.0, x.1.max(y.1), x.2.max(y.2), tol);
        out.push(CheckResult::new(id, inputs.clone(), r, tol));
    };
    let nonzero = |d: [Direction; 2]| -> Result<bool> { Ok(ctx.log_tau_derivative(c, &d)? != 0.0) };
    for b in 0..p {
        for b2 in (b + 1)..p {
            if !nonzero([t(b, 1), t(b2, 1)])? {
                continue;
            }
            let x = quotient_derivative(&ctx, c, t(b2, 1), [t(b, 2), t(b2, 1)], [t(b, 1), t(b2, 1)])?;
            let y = quotient_derivative(&ctx, c, t(b, 1), [t(b2, 2), t(b, 1)], [t(b2, 1), t(b, 1)])?;
            pair(format!("compat_t_t({},{})", b + 1, b2 + 1), x, y);
        }
    }
    for a in 0..q {
        for a2 in (a + 1)..q {
            if !nonzero([s(a, 1), s(a2, 1)])? {
                continue;
            }
            let x = quotient_derivative(&ctx, c, s(a2, 1), [s(a, 2), s(a2, 1)], [s(a, 1), s(a2, 1)])?;
            let y = quotient_derivative(&ctx, c, s(a, 1), [s(a2, 2), s(a, 1)], [s(a2, 1), s(a, 1)])?;
            pair(format!("compat_s_s({},{})", a + 1, a2 + 1), x, y);
        }
    }
    for a in 0..q {
        for b in 0..p {
            if !nonzero([t(b, 1), s(a, 1)])? {
                continue;
            }
            let x = quotient_derivative(&ctx, c, s(a, 1), [t(b, 2), s(a, 1)], [t(b, 1), s(a, 1)])?;
            let y = quotient_derivative(&ctx, c, t(b, 1), [s(a, 2), t(b, 1)], [s(a, 1), t(b, 1)])?;
            pair(format!("compat_s_t({},{})", a + 1, b + 1), x, y);
        }
    }
    if p == 1 && q == 1 {
        // {D(t1,s2), D(t1,s1)}_{t1} + {D(s1,t2), D(t1,s1)}_{s1} with
        // {f, g}_x = f_x g - f g_x.
        let d = |dirs: &[Direction]| ctx.log_tau_derivative_scaled(c, dirs);
        let g = d(&[t(0, 1), s(0, 1)])?;
        let f1 = d(&[t(0, 1), s(0, 2)])?;
        let f2 = d(&[s(0, 1), t(0, 2)])?;
        let pairs = [
            (d(&[t(0, 1), t(0, 1), s(0, 2)])?, g, 1.0),
            (f1, d(&[t(0, 1), t(0, 1), s(0, 1)])?, -1.0),
            (d(&[s(0, 1), s(0, 1), t(0, 2)])?, g, 1.0),
            (f2, d(&[s(0, 1), t(0, 1), s(0, 1)])?, -1.0),
        ];
        let sum: f64 = pairs.iter().map(|(x, y, sign)| sign * x.0 * y.0).sum();
        let mag = pairs.iter().fold(0.0f64, |m, (x, y, _)| m.max((x.0 * y.0).abs()));
        let terms = pairs.iter().fold(0.0f64, |m, (x, y, _)| m.max(x.1 * y.0.abs() + x.0.abs() * y.1));
        out.push(CheckResult::new("wronskian", inputs.clone(), floored(sum, mag, terms, tol), tol));
    }
    Ok(out)
}
