//! The identity suite run on one inner product, composition and set of
//! times, and the tolerances it is judged against.

use serde::{Deserialize, Serialize};

use crate::cauchy_wave::{self, describe, WaveKind};
use crate::error::{Error, Result};
use crate::hirota_pde;
use crate::inner_product::{InnerProduct, Times};
use crate::moment_matrix::{Composition, TauContext};
use crate::mops::{self, MopsSolution};
use crate::report::CheckResult;
use crate::timealg::TimeVector;

/// Default truncation order of Cauchy-type series.
pub const DEFAULT_TRUNCATION: usize = 8;

/// Pass thresholds per identity family. Missing fields take the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tau_ratio: f64,
    pub orthogonality: f64,
    pub cauchy: f64,
    pub wave: f64,
    pub bilinear: f64,
    pub residue: f64,
    pub ladder: f64,
    pub compatibility: f64,
    pub scenario: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tau_ratio: 1e-8,
            orthogonality: 1e-9,
            cauchy: 1e-8,
            wave: 1e-8,
            bilinear: 1e-8,
            residue: 1e-10,
            ladder: 1e-7,
            compatibility: 1e-6,
            scenario: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn uniform(x: f64) -> Self {
        Self {
            tau_ratio: x,
            orthogonality: x,
            cauchy: x,
            wave: x,
            bilinear: x,
            residue: x,
            ladder: x,
            compatibility: x,
            scenario: x,
        }
    }
}

/// Which parts of the suite to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteParts {
    pub mops: bool,
    pub cauchy: bool,
    pub bilinear: bool,
    pub pde: bool,
}

impl Default for SuiteParts {
    fn default() -> Self {
        Self {
            mops: true,
            cauchy: true,
            bilinear: true,
            pde: true,
        }
    }
}

/// Tau-ratio and cofactor forms against linear solves, and orthogonality of
/// the solved forms.
pub fn mops_checks(ip: &InnerProduct, times: &Times, c: &Composition, tol: &Tolerances) -> Result<Vec<CheckResult>> {
    let block = c.m.iter().chain(&c.n).copied().max().unwrap_or(0);
    let ctx = TauContext::with_capacity(ip, times.clone(), block + 1, 2, 1)?;
    ctx.tau_nonzero(c)?;
    let inputs = describe(c, times);
    let mut ratio = [0.0f64; 5];
    let mut orth = [0.0f64; 4];
    let track = |ratio: &mut [f64; 5], orth: &mut [f64; 4], slot: usize, solved: &MopsSolution, from_tau: &MopsSolution| -> Result<()> {
        ratio[slot] = ratio[slot].max(solved.distance(from_tau));
        let (r, scale) = mops::orthogonality_residual(&ctx, solved)?;
        orth[slot] = orth[slot].max(r / scale.max(f64::MIN_POSITIVE));
        Ok(())
    };
    for b in 0..c.p() {
        let solved = mops::solve_type_ii(&ctx, c, b)?;
        track(&mut ratio, &mut orth, 0, &solved, &mops::type_ii_from_tau(&ctx, c, b)?)?;
        for a in 0..c.q() {
            ratio[4] = ratio[4].max(solved.distance(&mops::type_ii_from_cofactors(&ctx, c, b, a)?));
        }
    }
    for a in 0..c.q() {
        if c.m[a] > 0 {
            let solved = mops::solve_type_i(&ctx, c, a)?;
            track(&mut ratio, &mut orth, 1, &solved, &mops::type_i_from_tau(&ctx, c, a)?)?;
        }
    }
    for b in 0..c.p() {
        if c.n[b] > 0 {
            let solved = mops::solve_dual_type_i(ip, times, c, b)?;
            track(&mut ratio, &mut orth, 2, &solved, &mops::dual_type_i_from_tau(&ctx, c, b)?)?;
        }
    }
    for a in 0..c.q() {
        let solved = mops::solve_dual_type_ii(ip, times, c, a)?;
        track(&mut ratio, &mut orth, 3, &solved, &mops::dual_type_ii_from_tau(&ctx, c, a)?)?;
    }
    let names = ["type_ii", "type_i", "dual_type_i", "dual_type_ii"];
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        out.push(CheckResult::new(format!("tau_ratio_{name}"), inputs.clone(), ratio[k], tol.tau_ratio));
        out.push(CheckResult::new(format!("orthogonality_{name}"), inputs.clone(), orth[k], tol.orthogonality));
    }
    out.push(CheckResult::new("cofactor_type_ii", inputs, ratio[4], tol.tau_ratio));
    Ok(out)
}

/// Cauchy identities, residue identities and, for symmetric pairings,
/// `Y Y*^T = I`. Without the symmetry `Y` is not invertible in this form:
/// on the circle at zero times `det Y = 1 - z^-2` for `n = 1`.
pub fn cauchy_checks(
    ip: &InnerProduct,
    times: &Times,
    c: &Composition,
    l: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<Vec<CheckResult>> {
    let mut out = cauchy_wave::verify_cauchy_identities(ip, times, c, l, tol.cauchy)?;
    out.extend(cauchy_wave::verify_residue_identities(ip, times, c, seed, tol.residue)?);
    if !ip.is_symmetric() {
        return Ok(out);
    }
    let wl = l + 4;
    let ctx = cauchy_wave::context_for(ip, times, c, wl)?;
    let y = cauchy_wave::build_wave(&ctx, c, wl, WaveKind::Y)?;
    let ys = cauchy_wave::build_wave(&ctx, c, wl, WaveKind::Ystar)?;
    let r = cauchy_wave::wave_inverse_residual(&y, &ys, wl)?;
    out.push(CheckResult::new("wave_inverse", describe(c, times), r, tol.wave));
    Ok(out)
}

/// Times `times + delta` where `delta` perturbs the first two entries of
/// every block; used as the starred times of bilinear checks.
pub fn perturbed_times(times: &Times, h: f64) -> Times {
    let bump = |v: &TimeVector, k: usize| {
        let mut w = v.clone();
        let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        w.set(1, v.get(1) + sign * h).expect("depth is at least 1");
        w.set(2, v.get(2) - 0.5 * sign * h).expect("depth is at least 2");
        w
    };
    Times {
        s: times.s.iter().enumerate().map(|(k, v)| bump(v, k)).collect(),
        t: times.t.iter().enumerate().map(|(k, v)| bump(v, k + 1)).collect(),
    }
}

/// Tau form of the bilinear identity around `c`, its matrix form and the
/// relabeling comparison, with starred times `times_s`.
pub fn bilinear_checks(
    ip: &InnerProduct,
    times: &Times,
    times_s: &Times,
    c: &Composition,
    l: usize,
    tol: &Tolerances,
) -> Result<Vec<CheckResult>> {
    let inputs = format!("{} | {}", describe(c, times), describe(c, times_s));
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for b in 0..c.p() {
        for a in 0..c.q() {
            let lo = c.shifted(&[], &[(b, 1)]).expect("adding to a block");
            let hi = c.shifted(&[(a, 1)], &[]).expect("adding to a block");
            let r = cauchy_wave::verify_bilinear(ip, &lo, times, &hi, times_s, l)?;
            worst = worst.max(r.residual);
        }
    }
    out.push(CheckResult::new("bilinear_tau", inputs.clone(), worst, tol.bilinear));
    let ml = 4 * l + 8;
    let r = cauchy_wave::bilinear_matrix_residual(ip, c, times, c, times_s, ml)?;
    out.push(CheckResult::new("bilinear_matrix", inputs.clone(), r, tol.bilinear));
    let mut worst = 0.0f64;
    for b1 in 0..c.p() {
        for b2 in 0..c.p() {
            if c.n[b2] == 0 {
                continue;
            }
            let r = cauchy_wave::bilinear_relabel_residual(ip, c, times, c, times_s, (b1, b2), ml)?;
            worst = worst.max(r);
        }
    }
    out.push(CheckResult::new("bilinear_relabel", inputs, worst, tol.residue));
    Ok(out)
}

/// Runs the selected parts of the suite. The bilinear part uses starred
/// times perturbed from `times` by `0.05`.
pub fn identity_suite(
    ip: &InnerProduct,
    times: &Times,
    c: &Composition,
    parts: SuiteParts,
    l: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<Vec<CheckResult>> {
    c.check_square()?;
    if c.m_total() == 0 {
        return Err(Error::ConfigInvalid("the identity suite needs |m| = |n| > 0".into()));
    }
    let mut out = Vec::new();
    if parts.mops {
        out.extend(mops_checks(ip, times, c, tol)?);
    }
    if parts.cauchy {
        out.extend(cauchy_checks(ip, times, c, l, seed, tol)?);
    }
    if parts.bilinear {
        out.extend(bilinear_checks(ip, times, &perturbed_times(times, 0.05), c, l, tol)?);
    }
    if parts.pde {
        out.extend(hirota_pde::verify_pde_ladder(ip, times, c, tol.ladder)?);
        out.extend(hirota_pde::verify_compatibility_pdes(ip, times, c, tol.compatibility)?);
    }
    Ok(out)
}
