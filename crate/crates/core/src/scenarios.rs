//! Preset configurations with their special identities, the
//! Karlin-McGregor probability of non-intersecting Brownian bridges and a
//! Monte-Carlo cross-check of it.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cauchy_wave::{cauchy_transform, describe};
use crate::error::{Error, Result};
use crate::inner_product::{
    Direction, Domain, InnerProduct, MeasureSpec, PlaneDensity, Times, WeightDescriptor, WeightFamily,
};
use crate::moment_matrix::{Composition, Shift, TauContext};
use crate::mops::{self, MopsSolution, Problem};
use crate::report::{digest, CheckResult, VerificationReport};
use crate::suite::{identity_suite, SuiteParts, Tolerances, DEFAULT_TRUNCATION};
use crate::timealg::TimeVector;

/// Nodes per interval for chain kernels; the three-site kernel costs the
/// cube of this.
pub const CHAIN_NODES: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Gue,
    Biorthogonal,
    Circle,
    BrownianTwoEndpoints,
    BrownianChain,
    BrownianGeneral,
}

/// Endpoints, observation times and windows of a Brownian preset.
///
/// `starts` and `ends` list one position per path; equal positions are
/// merged into one block. The two-endpoint preset may instead give `a` and
/// `paths = [n1, n2]`: every path starts at 0, `n1` end at `a` and `n2` at
/// `-a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Geometry {
    pub starts: Vec<f64>,
    pub ends: Vec<f64>,
    pub a: Option<f64>,
    pub paths: Vec<usize>,
    /// Observation times `0 < t_1 < .. < t_m < 1`.
    pub slices: Vec<f64>,
    /// One window per slice.
    pub windows: Vec<Domain>,
    /// General quadratic couplings of the chain density; not supported.
    pub extra_couplings: Vec<f64>,
    /// General linear terms of the chain density; not supported.
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    #[serde(default)]
    pub geometry: Geometry,
    /// Composition for the identity suite; a preset default if absent.
    #[serde(default)]
    pub composition: Option<Composition>,
    #[serde(default)]
    pub times: Option<Times>,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    /// Overrides every tolerance when set.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Gauss-Legendre nodes per interval for windowed measures.
    #[serde(default)]
    pub nodes: Option<usize>,
}

fn default_truncation() -> usize {
    DEFAULT_TRUNCATION
}

impl ScenarioConfig {
    pub fn preset(name: ScenarioName) -> Self {
        let geometry = match name {
            ScenarioName::BrownianTwoEndpoints => Geometry {
                a: Some(0.8),
                paths: vec![2, 1],
                slices: vec![0.5],
                windows: vec![Domain::interval(-1.0, 1.0)],
                ..Geometry::default()
            },
            ScenarioName::BrownianGeneral => Geometry {
                starts: vec![-0.5, -0.5, 0.7],
                ends: vec![-0.4, 0.6, 0.6],
                slices: vec![0.4],
                windows: vec![Domain::interval(-1.5, 2.0)],
                ..Geometry::default()
            },
            ScenarioName::BrownianChain => Geometry {
                starts: vec![0.0, 0.0],
                ends: vec![-0.6, 0.6],
                slices: vec![0.3, 0.7],
                windows: vec![Domain::interval(-1.5, 1.5), Domain::interval(-1.2, 1.8)],
                ..Geometry::default()
            },
            _ => Geometry::default(),
        };
        Self {
            name,
            geometry,
            composition: None,
            times: None,
            truncation: DEFAULT_TRUNCATION,
            tolerance: None,
            seed: 0,
            nodes: None,
        }
    }

    fn tol(&self, default: f64) -> f64 {
        self.tolerance.unwrap_or(default)
    }

    fn tolerances(&self) -> Tolerances {
        self.tolerance.map(Tolerances::uniform).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDiagnostics {
    pub composition: String,
    /// Drifts of the start and end weights in rescaled coordinates.
    pub start_drifts: Vec<f64>,
    pub end_drifts: Vec<f64>,
    /// Windows in rescaled coordinates, one per slice.
    pub windows: Vec<Domain>,
    /// Couplings of consecutive slices in rescaled coordinates.
    pub couplings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityResult {
    pub numerator: f64,
    pub denominator: f64,
    pub probability: f64,
    pub diagnostics: ProbabilityDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub accepted: u64,
    pub proposed: u64,
    pub steps: usize,
}

/// Positions and multiplicities of coincident points, in order of first
/// appearance.
fn merge(points: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut at: Vec<f64> = Vec::new();
    let mut mult: Vec<usize> = Vec::new();
    for &x in points {
        match at.iter().position(|&y| y == x) {
            Some(k) => mult[k] += 1,
            None => {
                at.push(x);
                mult.push(1);
            }
        }
    }
    (at, mult)
}

/// Brownian geometry after validation: merged endpoint blocks and slices.
#[derive(Debug, Clone)]
pub struct Bridges {
    pub starts: Vec<f64>,
    pub m: Vec<usize>,
    pub ends: Vec<f64>,
    pub n: Vec<usize>,
    pub slices: Vec<f64>,
    pub windows: Vec<Domain>,
}

impl Bridges {
    pub fn from_geometry(g: &Geometry) -> Result<Self> {
        if !g.extra_couplings.is_empty() || !g.gammas.is_empty() {
            return Err(Error::ConfigInvalid(
                "general chain couplings and linear terms are not supported; only nearest-slice couplings".into(),
            ));
        }
        let (starts, ends) = match (g.a, g.paths.as_slice()) {
            (Some(a), &[n1, n2]) => {
                if !g.starts.is_empty() || !g.ends.is_empty() {
                    return Err(Error::ConfigInvalid("give either a/paths or starts/ends".into()));
                }
                let mut ends = vec![a; n1];
                ends.extend(std::iter::repeat_n(-a, n2));
                (vec![0.0; n1 + n2], ends)
            }
            (None, []) => (g.starts.clone(), g.ends.clone()),
            _ => return Err(Error::ConfigInvalid("a needs paths = [n1, n2]".into())),
        };
        if starts.is_empty() || starts.len() != ends.len() {
            return Err(Error::ConfigInvalid(format!(
                "need as many starts as ends, got {} and {}",
                starts.len(),
                ends.len()
            )));
        }
        if starts.iter().chain(&ends).any(|x| !x.is_finite()) {
            return Err(Error::ConfigInvalid("endpoints must be finite".into()));
        }
        if g.slices.is_empty() || g.slices.len() > 3 {
            return Err(Error::ConfigInvalid("need 1 to 3 observation times".into()));
        }
        let mut prev = 0.0;
        for &t in &g.slices {
            if !(t > prev && t < 1.0) {
                return Err(Error::ConfigInvalid("observation times must satisfy 0 < t_1 < .. < t_m < 1".into()));
            }
            prev = t;
        }
        let windows = if g.windows.is_empty() {
            vec![Domain::real_line(); g.slices.len()]
        } else {
            g.windows.clone()
        };
        if windows.len() != g.slices.len() {
            return Err(Error::ConfigInvalid("need one window per observation time".into()));
        }
        let (starts, m) = merge(&starts);
        let (ends, n) = merge(&ends);
        Ok(Self {
            starts,
            m,
            ends,
            n,
            slices: g.slices.clone(),
            windows,
        })
    }

    pub fn paths(&self) -> usize {
        self.m.iter().sum()
    }

    pub fn composition(&self) -> Composition {
        Composition::new(self.m.clone(), self.n.clone())
    }

    /// `w_l = 1/(t_l - t_{l-1}) + 1/(t_{l+1} - t_l)` with `t_0 = 0`, `t_{m+1} = 1`.
    fn site_weights(&self) -> Vec<f64> {
        let mut t = vec![0.0];
        t.extend(&self.slices);
        t.push(1.0);
        (1..t.len() - 1).map(|l| 1.0 / (t[l] - t[l - 1]) + 1.0 / (t[l + 1] - t[l])).collect()
    }

    /// Inner product in rescaled coordinates with the given windows.
    fn rescaled(&self, windows: &[Domain], nodes: Option<usize>) -> Result<(InnerProduct, ProbabilityDiagnostics)> {
        let w = self.site_weights();
        let k = self.slices.len();
        let (t1, tm) = (self.slices[0], self.slices[k - 1]);
        let start_drifts: Vec<f64> = self.starts.iter().map(|a| a / (t1 * w[0].sqrt())).collect();
        let end_drifts: Vec<f64> = self.ends.iter().map(|b| b / ((1.0 - tm) * w[k - 1].sqrt())).collect();
        let scaled: Vec<Domain> = windows.iter().zip(&w).map(|(d, wl)| d.scaled(wl.sqrt())).collect();
        let couplings: Vec<f64> = (0..k.saturating_sub(1))
            .map(|l| 1.0 / ((self.slices[l + 1] - self.slices[l]) * (w[l] * w[l + 1]).sqrt()))
            .collect();
        let weights = WeightFamily::new(
            start_drifts.iter().map(|&c| WeightDescriptor::PlainExponential { c }).collect(),
            end_drifts.iter().map(|&c| WeightDescriptor::PlainExponential { c }).collect(),
        );
        let ip = if k == 1 {
            let measure = MeasureSpec::Line {
                domain: scaled[0].clone(),
                density: WeightDescriptor::standard_gaussian(),
            };
            match nodes {
                Some(n) => InnerProduct::with_nodes(measure, weights, n)?,
                None => InnerProduct::new(measure, weights)?,
            }
        } else {
            let measure = MeasureSpec::Chain {
                domains: scaled.clone(),
                couplings: couplings.clone(),
            };
            InnerProduct::with_nodes(measure, weights, nodes.unwrap_or(CHAIN_NODES))?
        };
        let diagnostics = ProbabilityDiagnostics {
            composition: self.composition().label(),
            start_drifts,
            end_drifts,
            windows: scaled,
            couplings,
        };
        Ok((ip, diagnostics))
    }

    /// Single-slice inner product in the original coordinates:
    /// `exp(-x^2 / (2t(1-t)) + a x / t + b x / (1-t))` on the window.
    fn raw(&self, window: &Domain, nodes: Option<usize>) -> Result<InnerProduct> {
        if self.slices.len() != 1 {
            return Err(Error::ConfigInvalid("the raw form exists for one observation time".into()));
        }
        let t = self.slices[0];
        let measure = MeasureSpec::Line {
            domain: window.clone(),
            density: WeightDescriptor::GaussianExponent {
                c0: 0.0,
                c1: 0.0,
                c2: -0.5 / (t * (1.0 - t)),
            },
        };
        let weights = WeightFamily::new(
            self.starts.iter().map(|a| WeightDescriptor::PlainExponential { c: a / t }).collect(),
            self.ends.iter().map(|b| WeightDescriptor::PlainExponential { c: b / (1.0 - t) }).collect(),
        );
        match nodes {
            Some(n) => InnerProduct::with_nodes(measure, weights, n),
            None => InnerProduct::new(measure, weights),
        }
    }
}

fn zero_time_tau(ip: &InnerProduct, c: &Composition) -> Result<f64> {
    let times = Times::zeros(c.q(), c.p());
    let n = c.m_total().max(1);
    TauContext::new(ip, times, n, n)?.tau(c)
}

fn ratio(numerator: f64, denominator: f64) -> Result<f64> {
    if !(denominator.abs() > 0.0) || !denominator.is_finite() {
        return Err(Error::DegenerateTau {
            value: denominator,
            threshold: 0.0,
        });
    }
    Ok(numerator / denominator)
}

/// Probability that all paths lie in the windows at the observation times,
/// as a ratio of moment determinants in rescaled coordinates.
pub fn km_probability(g: &Geometry, nodes: Option<usize>) -> Result<ProbabilityResult> {
    let br = Bridges::from_geometry(g)?;
    let c = br.composition();
    let (num_ip, diagnostics) = br.rescaled(&br.windows, nodes)?;
    let full = vec![Domain::real_line(); br.slices.len()];
    let (den_ip, _) = br.rescaled(&full, nodes)?;
    let numerator = zero_time_tau(&num_ip, &c)?;
    let denominator = zero_time_tau(&den_ip, &c)?;
    Ok(ProbabilityResult {
        numerator,
        denominator,
        probability: ratio(numerator, denominator)?,
        diagnostics,
    })
}

/// The single-slice probability computed in the original coordinates.
pub fn km_probability_raw(g: &Geometry, nodes: Option<usize>) -> Result<f64> {
    let br = Bridges::from_geometry(g)?;
    let c = br.composition();
    let num = zero_time_tau(&br.raw(&br.windows[0], nodes)?, &c)?;
    let den = zero_time_tau(&br.raw(&Domain::real_line(), nodes)?, &c)?;
    ratio(num, den)
}

/// Proposals per batch and batches per round of the Monte-Carlo sampler.
const MC_BATCH: usize = 2048;
const MC_ROUND: usize = 64;

#[derive(Default, Clone, Copy)]
struct Tally {
    proposed: u64,
    accepted: u64,
    inside: u64,
}

/// Estimates the probability by sampling independent bridges between
/// distinct ordered endpoints on a uniform grid of `steps` steps (with the
/// observation times inserted), keeping non-crossing configurations. The
/// chance of a crossing between grid points is removed by accepting with
/// the product of the bridge non-crossing probabilities of neighbouring
/// gaps. Sampling stops after the first round with at least `accepted`
/// accepted configurations; the result does not depend on the thread count.
pub fn km_monte_carlo(g: &Geometry, accepted: u64, steps: usize, seed: u64) -> Result<McEstimate> {
    let br = Bridges::from_geometry(g)?;
    let npaths = br.paths();
    if npaths > 3 {
        return Err(Error::ConfigInvalid("Monte Carlo supports at most 3 paths".into()));
    }
    if accepted < 1 || steps < 2 {
        return Err(Error::ConfigInvalid("need at least one path and two steps".into()));
    }
    if br.m.iter().chain(&br.n).any(|&k| k > 1) {
        return Err(Error::ConfigInvalid(
            "Monte Carlo needs distinct start and end points (coincident points are never non-crossing)".into(),
        ));
    }
    let mut alpha = br.starts.clone();
    let mut beta = br.ends.clone();
    alpha.sort_by(f64::total_cmp);
    beta.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    grid.extend(&br.slices);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let slot: Vec<usize> = br
        .slices
        .iter()
        .map(|t| grid.iter().position(|g| (g - t).abs() < 1e-12).expect("slice on grid"))
        .collect();

    let batch = |index: u64| -> Tally {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut tally = Tally::default();
        let mut w = vec![vec![0.0; grid.len()]; npaths];
        let mut x = vec![vec![0.0; grid.len()]; npaths];
        for _ in 0..MC_BATCH {
            tally.proposed += 1;
            for (i, wi) in w.iter_mut().enumerate() {
                for k in 1..grid.len() {
                    let z: f64 = rng.sample(StandardNormal);
                    wi[k] = wi[k - 1] + z * (grid[k] - grid[k - 1]).sqrt();
                }
                let w1 = wi[grid.len() - 1];
                for (k, &t) in grid.iter().enumerate() {
                    x[i][k] = alpha[i] + (beta[i] - alpha[i]) * t + wi[k] - t * w1;
                }
            }
            let mut keep = 1.0;
            'pairs: for i in 0..npaths.saturating_sub(1) {
                for k in 0..grid.len() {
                    let d = x[i + 1][k] - x[i][k];
                    if d <= 0.0 {
                        keep = 0.0;
                        break 'pairs;
                    }
                    if k > 0 {
                        let d0 = x[i + 1][k - 1] - x[i][k - 1];
                        keep *= 1.0 - (-d0 * d / (grid[k] - grid[k - 1])).exp();
                    }
                }
            }
            if keep <= 0.0 || rng.random::<f64>() >= keep {
                continue;
            }
            tally.accepted += 1;
            let inside = slot
                .iter()
                .zip(&br.windows)
                .all(|(&k, e)| (0..npaths).all(|i| e.contains(x[i][k])));
            if inside {
                tally.inside += 1;
            }
        }
        tally
    };

    let mut total = Tally::default();
    let mut round = 0u64;
    while total.accepted < accepted {
        let base = round * MC_ROUND as u64;
        let parts: Vec<Tally> = (0..MC_ROUND as u64).into_par_iter().map(|b| batch(base + b)).collect();
        for t in parts {
            total.proposed += t.proposed;
            total.accepted += t.accepted;
            total.inside += t.inside;
        }
        let rate = total.accepted as f64 / total.proposed as f64;
        if rate < 1e-4 {
            return Err(Error::RejectionStarvation { rate });
        }
        round += 1;
    }
    let p = total.inside as f64 / total.accepted as f64;
    Ok(McEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / total.accepted as f64).sqrt(),
        accepted: total.accepted,
        proposed: total.proposed,
        steps,
    })
}

fn unit_weights(q: usize, p: usize) -> WeightFamily {
    WeightFamily::unit(q, p)
}

fn gue_ip() -> Result<InnerProduct> {
    InnerProduct::new(MeasureSpec::gaussian_line(), unit_weights(1, 1))
}

fn biorthogonal_ip(nodes: Option<usize>) -> Result<InnerProduct> {
    let measure = MeasureSpec::Plane {
        x_domain: Domain::real_line(),
        y_domain: Domain::real_line(),
        density: PlaneDensity {
            cxx: -0.5,
            cxy: 0.5,
            cyy: -0.5,
            cx: 0.0,
            cy: 0.0,
            c0: 0.0,
        },
    };
    InnerProduct::with_nodes(measure, unit_weights(1, 1), nodes.unwrap_or(CHAIN_NODES))
}

fn circle_ip() -> Result<InnerProduct> {
    InnerProduct::new(MeasureSpec::Circle, unit_weights(1, 1))
}

fn single(n: usize) -> Composition {
    Composition::new(vec![n], vec![n])
}

/// `He_n` by `He_{n+1} = x He_n - n He_{n-1}`, ascending coefficients.
pub fn hermite_he(n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0], vec![0.0, 1.0]];
    for k in 1..n {
        let mut next = vec![0.0; k + 2];
        for (j, &c) in out[k].iter().enumerate() {
            next[j + 1] += c;
        }
        for (j, &c) in out[k - 1].iter().enumerate() {
            next[j] -= k as f64 * c;
        }
        out.push(next);
    }
    out.truncate(n + 1);
    out
}

fn rel_poly_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1e-300f64, |m, x| m.max(x.abs()));
    (0..a.len().max(b.len()))
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Monic polynomials against Hermite, `h_1` and the mixed second
/// derivative of `ln tau_1`.
pub fn gue_checks(max_n: usize, tol: Option<f64>) -> Result<Vec<CheckResult>> {
    let ip = gue_ip()?;
    let zero = Times::zeros(1, 1);
    let ctx = TauContext::with_capacity(&ip, zero.clone(), max_n + 1, 2, 1)?;
    let he = hermite_he(max_n);
    let mut worst = 0.0f64;
    for (n, h) in he.iter().enumerate().skip(1) {
        let sol = mops::solve_type_ii(&ctx, &single(n), 0)?;
        worst = worst.max(rel_poly_error(&sol.components[0], h));
    }
    let t = |d| tol.unwrap_or(d);
    let h1 = ctx.tau(&single(2))? / ctx.tau(&single(1))?;
    let d2 = ctx.log_tau_derivative(&single(1), &[Direction::s(0, 1), Direction::t(0, 1)])?;
    let inputs = format!("gue n<={max_n}");
    Ok(vec![
        CheckResult::new("gue_hermite", inputs.clone(), worst, t(1e-10)),
        CheckResult::new("gue_h1", inputs.clone(), (h1 - (2.0 * std::f64::consts::PI).sqrt()).abs(), t(1e-10)),
        CheckResult::new("gue_mixed_second_derivative", inputs, (d2 + 1.0).abs(), t(1e-9)),
    ])
}

/// Largest difference of two Laurent coefficient lists over exponents
/// `lo..=hi`, relative to the largest coefficient.
fn laurent_gap(a: &crate::series::LaurentSeries, b: &crate::series::LaurentSeries, lo: i32, hi: i32) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut scale = 1e-300f64;
    for e in lo..=hi {
        let (x, y) = (a.coeff(e)?, b.coeff(e)?);
        worst = worst.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    Ok(worst / scale)
}

/// The four tau-shift formulas for one pair of biorthogonal polynomials
/// and their Cauchy transforms, plus biorthogonality.
pub fn biorthogonal_checks(
    ip: &InnerProduct,
    times: &Times,
    max_n: usize,
    l: usize,
    tol: &Tolerances,
) -> Result<Vec<CheckResult>> {
    if ip.p() != 1 || ip.q() != 1 {
        return Err(Error::ConfigInvalid("biorthogonal checks need p = q = 1".into()));
    }
    let ctx = TauContext::with_capacity(ip, times.clone(), max_n + 2, l, 1)?;
    let mut gap = [0.0f64; 4];
    let mut p1: Vec<MopsSolution> = Vec::new();
    let mut p2: Vec<MopsSolution> = Vec::new();
    let mut h = Vec::new();
    for n in 0..=max_n {
        let c = single(n);
        let up = single(n + 1);
        let tau = ctx.tau_nonzero(&c)?;
        h.push(ctx.tau_nonzero(&up)? / tau);
        let a = mops::solve_type_ii(&ctx, &c, 0)?;
        let b = mops::solve_dual_type_ii(ip, times, &c, 0)?;
        let n_i = n as i32;
        // z^n tau_n(t - [1/z]) / tau_n
        let lhs = ctx.shift_t_series(&c, 0, Shift::Minus, 0)?.shift(n_i).scale(1.0 / tau);
        let poly = crate::series::LaurentSeries::polynomial(0, a.components[0].clone());
        gap[0] = gap[0].max(laurent_gap(&lhs, &poly, 0, n_i)?);
        // z^n tau_n(s + [1/z]) / tau_n
        let lhs = ctx.shift_s_series(&c, 0, Shift::Plus, 0)?.shift(n_i).scale(1.0 / tau);
        let poly = crate::series::LaurentSeries::polynomial(0, b.components[0].clone());
        gap[1] = gap[1].max(laurent_gap(&lhs, &poly, 0, n_i)?);
        let lo = -n_i - 1 - l as i32;
        // z^{-n-1} tau_{n+1}(t + [1/z]) / tau_n
        let lhs = ctx.shift_t_series(&up, 0, Shift::Plus, l)?.shift(-n_i - 1).scale(1.0 / tau);
        let rhs = cauchy_transform(&ctx, &b, 0, n + l);
        gap[2] = gap[2].max(laurent_gap(&lhs, &rhs, lo, -n_i - 1)?);
        // z^{-n-1} tau_{n+1}(s - [1/z]) / tau_n
        let lhs = ctx.shift_s_series(&up, 0, Shift::Minus, l)?.shift(-n_i - 1).scale(1.0 / tau);
        let rhs = cauchy_transform(&ctx, &a, 0, n + l);
        gap[3] = gap[3].max(laurent_gap(&lhs, &rhs, lo, -n_i - 1)?);
        p1.push(a);
        p2.push(b);
    }
    let pr = ctx.pairing();
    let mut orth = 0.0f64;
    for (n, b) in p2.iter().enumerate() {
        for (k, a) in p1.iter().enumerate() {
            let mut v = 0.0;
            let mut mag = 0.0;
            for (i, &f) in b.components[0].iter().enumerate() {
                for (j, &g) in a.components[0].iter().enumerate() {
                    let term = f * g * pr.get(0, i, 0, j);
                    v += term;
                    mag += term.abs();
                }
            }
            let target = if n == k { h[n] } else { 0.0 };
            orth = orth.max((v - target).abs() / mag.max(h[n].abs()));
        }
    }
    let inputs = format!("n<={max_n} {}", describe(&single(max_n), times));
    let names = [
        "taushift_type_ii",
        "taushift_dual_type_ii",
        "taushift_cauchy_dual",
        "taushift_cauchy",
    ];
    let tols = [tol.tau_ratio, tol.tau_ratio, tol.cauchy, tol.cauchy];
    let mut out: Vec<CheckResult> = names
        .iter()
        .zip(gap.iter().zip(tols))
        .map(|(id, (&r, t))| CheckResult::new(*id, inputs.clone(), r, t))
        .collect();
    out.push(CheckResult::new("biorthogonality", inputs, orth, tol.orthogonality));
    Ok(out)
}

/// For the line measure the moments depend on `t - s` only.
pub fn reduction_check(max_n: usize, tol: f64) -> Result<CheckResult> {
    let ip = gue_ip()?;
    let c = single(max_n);
    let mut worst = 0.0f64;
    let grid = [-0.15, -0.05, 0.05, 0.15];
    for &s1 in &grid {
        for &t1 in &grid {
            for &s2 in &[-0.1, 0.1] {
                let mut times = Times::zeros(1, 1);
                times.s[0] = TimeVector::from_slice(&[s1, s2]);
                times.t[0] = TimeVector::from_slice(&[t1, -0.05]);
                let mut shifted = Times::zeros(1, 1);
                shifted.t[0] = times.t[0].sub(&times.s[0]);
                let a = TauContext::new(&ip, times, max_n, max_n)?.tau(&c)?;
                let b = TauContext::new(&ip, shifted, max_n, max_n)?.tau(&c)?;
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
            }
        }
    }
    Ok(CheckResult::new("reduction_t_minus_s", format!("line n={max_n}"), worst, tol))
}

/// `tau_n = 1` at zero times, the Szego-type recurrence and the product
/// identity for `h_n = tau_{n+1} / tau_n`.
pub fn circle_checks(max_n: usize, times: &Times, tol: Option<f64>) -> Result<Vec<CheckResult>> {
    let ip = circle_ip()?;
    let t = |d| tol.unwrap_or(d);
    let zero = TauContext::new(&ip, Times::zeros(1, 1), max_n + 1, max_n + 1)?;
    let mut unit = 0.0f64;
    for n in 0..=max_n {
        unit = unit.max((zero.tau(&single(n))? - 1.0).abs());
    }
    let ctx = TauContext::with_capacity(&ip, times.clone(), max_n + 2, 2, 1)?;
    let mut rec = 0.0f64;
    for n in 0..max_n {
        let a = mops::solve_type_ii(&ctx, &single(n), 0)?.components.remove(0);
        let a1 = mops::solve_type_ii(&ctx, &single(n + 1), 0)?.components.remove(0);
        let b = mops::solve_dual_type_ii(&ip, times, &single(n), 0)?.components.remove(0);
        // p1_{n+1}(z) - z p1_n(z)
        let mut lhs = a1.clone();
        for (k, &c) in a.iter().enumerate() {
            lhs[k + 1] -= c;
        }
        // p1_{n+1}(0) z^n p2_n(1/z)
        let rhs: Vec<f64> = (0..=n + 1)
            .map(|k| if k <= n { a1[0] * b[n - k] } else { 0.0 })
            .collect();
        rec = rec.max(rel_poly_error(&lhs, &rhs) * lhs.iter().chain(&rhs).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300)
            / a1.iter().chain(&a).fold(1.0f64, |m, x| m.max(x.abs())));
    }
    let h = |n: usize| -> Result<f64> { Ok(ctx.tau_nonzero(&single(n + 1))? / ctx.tau_nonzero(&single(n))?) };
    let dlog_h = |n: usize, d: Direction| -> Result<f64> {
        Ok(ctx.log_tau_derivative(&single(n + 1), &[d])? - ctx.log_tau_derivative(&single(n), &[d])?)
    };
    let mut prod = 0.0f64;
    for n in 1..max_n {
        let lhs = (1.0 - h(n + 1)? / h(n)?) * (1.0 - h(n)? / h(n - 1)?);
        let rhs = -dlog_h(n, Direction::t(0, 1))? * dlog_h(n, Direction::s(0, 1))?;
        prod = prod.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    let inputs = format!("circle n<={max_n} {}", describe(&single(max_n), times));
    Ok(vec![
        CheckResult::new("circle_tau_unit", format!("circle n<={max_n} zero times"), unit, t(1e-12)),
        CheckResult::new("circle_recurrence", inputs.clone(), rec, t(1e-9)),
        CheckResult::new("circle_h_product", inputs, prod, t(1e-9)),
    ])
}

fn small_times(q: usize, p: usize) -> Times {
    let mut times = Times::zeros(q, p);
    for (k, v) in times.t.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *v = TimeVector::from_slice(&[0.1 * sign, -0.05]);
    }
    for (k, v) in times.s.iter_mut().enumerate() {
        *v = TimeVector::from_slice(&[0.04 * (k as f64 + 1.0), -0.03]);
    }
    times
}

/// Small times used by the circle preset.
pub fn circle_times() -> Times {
    let mut times = Times::zeros(1, 1);
    times.s[0] = TimeVector::from_slice(&[0.05, -0.03]);
    times.t[0] = TimeVector::from_slice(&[0.08, 0.02, -0.01]);
    times
}

/// The inner product of a preset with the composition and times its
/// identity suite runs at. Brownian presets use the whole-line rescaled
/// measure.
pub fn preset_problem(cfg: &ScenarioConfig) -> Result<Problem> {
    let (ip, c) = match cfg.name {
        ScenarioName::Gue => (gue_ip()?, single(3)),
        ScenarioName::Biorthogonal => (biorthogonal_ip(cfg.nodes)?, single(3)),
        ScenarioName::Circle => (circle_ip()?, single(3)),
        ScenarioName::BrownianTwoEndpoints | ScenarioName::BrownianChain | ScenarioName::BrownianGeneral => {
            let br = Bridges::from_geometry(&cfg.geometry)?;
            let full = vec![Domain::real_line(); br.slices.len()];
            (br.rescaled(&full, cfg.nodes)?.0, br.composition())
        }
    };
    let composition = cfg.composition.clone().unwrap_or(c);
    let times = match (&cfg.times, cfg.name) {
        (Some(t), _) => t.clone(),
        (None, ScenarioName::Gue) => {
            let mut t = Times::zeros(1, 1);
            t.t[0] = TimeVector::from_slice(&[0.1, -0.05]);
            t
        }
        (None, ScenarioName::Circle) => circle_times(),
        (None, _) => small_times(composition.q(), composition.p()),
    };
    if (composition.q(), composition.p()) != (ip.q(), ip.p()) {
        return Err(Error::ConfigInvalid(format!(
            "composition {} does not match q = {}, p = {}",
            composition.label(),
            ip.q(),
            ip.p()
        )));
    }
    Ok(Problem { ip, times, composition })
}

/// Runs a preset: the identity suite on its inner product plus the checks
/// specific to it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<VerificationReport> {
    let tol = cfg.tolerances();
    let l = cfg.truncation;
    let parts = SuiteParts::default();
    let mut checks = Vec::new();
    match cfg.name {
        ScenarioName::Gue => {
            checks.extend(gue_checks(6, cfg.tolerance)?);
            checks.push(reduction_check(4, cfg.tol(1e-12))?);
        }
        ScenarioName::Biorthogonal => {
            let pr = preset_problem(cfg)?;
            checks.extend(biorthogonal_checks(&pr.ip, &pr.times, 4, l, &tol)?);
            checks.push(reduction_check(4, cfg.tol(1e-12))?);
        }
        ScenarioName::Circle => {
            let times = cfg.times.clone().unwrap_or_else(circle_times);
            checks.extend(circle_checks(4, &times, cfg.tolerance)?);
        }
        ScenarioName::BrownianTwoEndpoints | ScenarioName::BrownianChain | ScenarioName::BrownianGeneral => {
            let br = Bridges::from_geometry(&cfg.geometry)?;
            match cfg.name {
                ScenarioName::BrownianTwoEndpoints if br.m.len() != 1 || br.n.len() != 2 => {
                    return Err(Error::ConfigInvalid("two-endpoint preset needs one start and two end points".into()))
                }
                ScenarioName::BrownianChain if br.slices.len() < 2 => {
                    return Err(Error::ConfigInvalid("chain preset needs 2 or 3 observation times".into()))
                }
                ScenarioName::BrownianGeneral | ScenarioName::BrownianTwoEndpoints if br.slices.len() != 1 => {
                    return Err(Error::ConfigInvalid("single-time preset needs one observation time".into()))
                }
                _ => {}
            }
            let prob = km_probability(&cfg.geometry, cfg.nodes)?;
            let inputs = format!("{} windows {:?}", prob.diagnostics.composition, br.windows);
            let p = prob.probability;
            let out_of_range = (-p).max(p - 1.0).max(0.0);
            checks.push(CheckResult::new("km_probability_range", inputs.clone(), out_of_range, cfg.tol(1e-9)));
            if br.slices.len() == 1 {
                let raw = km_probability_raw(&cfg.geometry, cfg.nodes)?;
                checks.push(CheckResult::new("km_change_of_variables", inputs.clone(), (raw - p).abs(), cfg.tol(1e-9)));
            }
            let full = Geometry {
                windows: vec![Domain::real_line(); br.slices.len()],
                ..cfg.geometry.clone()
            };
            let whole = km_probability(&full, cfg.nodes)?.probability;
            checks.push(CheckResult::new("km_whole_line", inputs, (whole - 1.0).abs(), cfg.tol(1e-10)));
        }
    }
    let pr = preset_problem(cfg)?;
    checks.extend(identity_suite(&pr.ip, &pr.times, &pr.composition, parts, l, cfg.seed, &tol)?);
    let config_digest = digest(&serde_json::to_string(cfg).expect("config serialises"));
    Ok(VerificationReport::new(config_digest, checks))
}
