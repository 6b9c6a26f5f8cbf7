//! Deformed moments `<x^i psi_a^{-s}, y^j phi_b^t>` for several pairings.
//!
//! `psi_a^{-s}(x) = psi_a(x) exp(-sum_k s_{a,k} x^k)` and
//! `phi_b^t(y) = phi_b(y) exp(sum_k t_{b,k} y^k)`.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timealg::{schur_coeffs, TimeVector};

pub const DEFAULT_LEGENDRE_NODES: usize = 400;
pub const DEFAULT_HERMITE_NODES: usize = 200;
/// Truncation of infinite integration ranges, in standard deviations.
const TAIL_SIGMAS: f64 = 30.0;
/// Truncation for two-variable kernels, whose node counts are kept small.
const KERNEL_TAIL_SIGMAS: f64 = 14.0;
/// Number of Schur coefficients kept in circle convolutions.
pub const CIRCLE_TERMS: usize = 40;

/// A base weight `exp(c0 + c1 x + c2 x^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightDescriptor {
    GaussianExponent { c0: f64, c1: f64, c2: f64 },
    PlainExponential { c: f64 },
    Unit,
}

impl WeightDescriptor {
    pub fn standard_gaussian() -> Self {
        Self::GaussianExponent {
            c0: 0.0,
            c1: 0.0,
            c2: -0.5,
        }
    }

    /// `(c0, c1, c2)` of the exponent.
    pub fn exponent(&self) -> [f64; 3] {
        match *self {
            Self::GaussianExponent { c0, c1, c2 } => [c0, c1, c2],
            Self::PlainExponential { c } => [0.0, c, 0.0],
            Self::Unit => [0.0; 3],
        }
    }

    pub fn log_eval(&self, x: f64) -> f64 {
        let [c0, c1, c2] = self.exponent();
        c0 + x * (c1 + x * c2)
    }

    pub fn is_unit(&self) -> bool {
        self.exponent() == [0.0; 3]
    }
}

/// `q` row weights `psi` and `p` column weights `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFamily {
    pub psi: Vec<WeightDescriptor>,
    pub phi: Vec<WeightDescriptor>,
}

impl WeightFamily {
    pub fn new(psi: Vec<WeightDescriptor>, phi: Vec<WeightDescriptor>) -> Self {
        Self { psi, phi }
    }

    pub fn unit(q: usize, p: usize) -> Self {
        Self::new(vec![WeightDescriptor::Unit; q], vec![WeightDescriptor::Unit; p])
    }

    pub fn q(&self) -> usize {
        self.psi.len()
    }

    pub fn p(&self) -> usize {
        self.phi.len()
    }
}

/// Closed interval with possibly infinite ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "extended_f64")]
    pub lo: f64,
    #[serde(with = "extended_f64")]
    pub hi: f64,
}

/// Finite union of intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Domain {
    pub pieces: Vec<Interval>,
}

impl Domain {
    pub fn real_line() -> Self {
        Self::interval(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self {
            pieces: vec![Interval { lo, hi }],
        }
    }

    pub fn is_real_line(&self) -> bool {
        self.pieces.len() == 1
            && self.pieces[0].lo == f64::NEG_INFINITY
            && self.pieces[0].hi == f64::INFINITY
    }

    pub fn is_bounded(&self) -> bool {
        self.pieces.iter().all(|p| p.lo.is_finite() && p.hi.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        debug_assert!(c > 0.0);
        Self {
            pieces: self
                .pieces
                .iter()
                .map(|p| Interval {
                    lo: p.lo * c,
                    hi: p.hi * c,
                })
                .collect(),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.pieces.iter().any(|p| p.lo <= x && x <= p.hi)
    }

    fn validate(&self) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(Error::ConfigInvalid("empty domain".into()));
        }
        for p in &self.pieces {
            if p.lo.is_nan() || p.hi.is_nan() || p.lo >= p.hi {
                return Err(Error::ConfigInvalid(format!(
                    "bad interval [{}, {}]",
                    p.lo, p.hi
                )));
            }
        }
        Ok(())
    }
}

/// Density `exp(cxx x^2 + cxy x y + cyy y^2 + cx x + cy y + c0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneDensity {
    pub cxx: f64,
    pub cxy: f64,
    pub cyy: f64,
    #[serde(default)]
    pub cx: f64,
    #[serde(default)]
    pub cy: f64,
    #[serde(default)]
    pub c0: f64,
}

impl PlaneDensity {
    fn log_eval(&self, x: f64, y: f64) -> f64 {
        self.cxx * x * x + self.cxy * x * y + self.cyy * y * y + self.cx * x + self.cy * y + self.c0
    }

    fn transposed(&self) -> Self {
        Self {
            cxx: self.cyy,
            cyy: self.cxx,
            cx: self.cy,
            cy: self.cx,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureSpec {
    /// `delta(x - y) rho(y)` restricted to `domain`.
    Line {
        domain: Domain,
        density: WeightDescriptor,
    },
    /// `rho(x, y)` on `x_domain x y_domain`.
    Plane {
        x_domain: Domain,
        y_domain: Domain,
        density: PlaneDensity,
    },
    /// `<f, g> = contour integral of f(1/z) g(z) dz / (2 pi i z)` on `|z| = 1`.
    Circle,
    /// `int f(x_1) g(x_m) exp(-sum x_l^2 / 2 + sum c_l x_l x_{l+1})` over
    /// `domains[0] x .. x domains[m-1]`.
    Chain {
        domains: Vec<Domain>,
        couplings: Vec<f64>,
    },
}

impl MeasureSpec {
    pub fn gaussian_line() -> Self {
        Self::Line {
            domain: Domain::real_line(),
            density: WeightDescriptor::standard_gaussian(),
        }
    }

    /// The measure with the roles of `x` and `y` exchanged.
    pub fn transposed(&self) -> Self {
        match self {
            Self::Line { .. } | Self::Circle => self.clone(),
            Self::Plane {
                x_domain,
                y_domain,
                density,
            } => Self::Plane {
                x_domain: y_domain.clone(),
                y_domain: x_domain.clone(),
                density: density.transposed(),
            },
            Self::Chain { domains, couplings } => Self::Chain {
                domains: domains.iter().rev().cloned().collect(),
                couplings: couplings.iter().rev().copied().collect(),
            },
        }
    }
}

/// Which coordinate of which block a time derivative acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    S,
    T,
}

/// `d/ds_{block,index}` or `d/dt_{block,index}` (blocks 0-based, index >= 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub side: Side,
    pub block: usize,
    pub index: usize,
}

impl Direction {
    pub fn s(block: usize, index: usize) -> Self {
        Self {
            side: Side::S,
            block,
            index,
        }
    }

    pub fn t(block: usize, index: usize) -> Self {
        Self {
            side: Side::T,
            block,
            index,
        }
    }
}

/// Deformation times: `s[a]` for row blocks, `t[b]` for column blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Times {
    pub s: Vec<TimeVector>,
    pub t: Vec<TimeVector>,
}

impl Times {
    pub fn zeros(q: usize, p: usize) -> Self {
        Self {
            s: vec![TimeVector::default(); q],
            t: vec![TimeVector::default(); p],
        }
    }

    pub fn get(&self, d: Direction) -> f64 {
        match d.side {
            Side::S => self.s[d.block].get(d.index),
            Side::T => self.t[d.block].get(d.index),
        }
    }

    pub fn set(&mut self, d: Direction, v: f64) -> Result<()> {
        match d.side {
            Side::S => self.s[d.block].set(d.index, v),
            Side::T => self.t[d.block].set(d.index, v),
        }
    }

    pub fn bumped(&self, d: Direction, h: f64) -> Result<Self> {
        let mut out = self.clone();
        out.set(d, self.get(d) + h)?;
        Ok(out)
    }

    /// Times of the transposed problem: `(s, t) -> (-t, -s)`.
    pub fn dual(&self) -> Self {
        Self {
            s: self.t.iter().map(TimeVector::neg).collect(),
            t: self.s.iter().map(TimeVector::neg).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.s
            .iter()
            .chain(&self.t)
            .fold(0.0, |m, v| m.max(v.max_abs()))
    }

    fn check(&self, q: usize, p: usize) -> Result<()> {
        if self.s.len() != q || self.t.len() != p {
            return Err(Error::SizeMismatch(format!(
                "times have {} s-blocks and {} t-blocks, weights need {q} and {p}",
                self.s.len(),
                self.t.len()
            )));
        }
        Ok(())
    }
}

enum Prepared {
    /// Line measure on the whole real line with a Gaussian-type density.
    RealLine { density: [f64; 3] },
    /// Line measure discretised on nodes; weights include the density.
    LineNodes { nodes: Vec<f64>, weights: Vec<f64> },
    /// Two-variable kernel on `x` and `y` nodes, quadrature weights folded in.
    Kernel {
        x: Vec<f64>,
        y: Vec<f64>,
        k: DMatrix<f64>,
    },
    Circle,
}

/// A measure together with its weight family, quadrature prepared once.
pub struct InnerProduct {
    measure: MeasureSpec,
    weights: WeightFamily,
    prepared: Prepared,
}

impl std::fmt::Debug for InnerProduct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InnerProduct")
            .field("measure", &self.measure)
            .field("weights", &self.weights)
            .finish()
    }
}

impl InnerProduct {
    pub fn new(measure: MeasureSpec, weights: WeightFamily) -> Result<Self> {
        Self::with_nodes(measure, weights, DEFAULT_LEGENDRE_NODES)
    }

    /// As [`InnerProduct::new`] with `legendre_nodes` Gauss-Legendre nodes per interval.
    pub fn with_nodes(
        measure: MeasureSpec,
        weights: WeightFamily,
        legendre_nodes: usize,
    ) -> Result<Self> {
        let prepared = prepare(&measure, &weights, legendre_nodes)?;
        Ok(Self {
            measure,
            weights,
            prepared,
        })
    }

    pub fn measure(&self) -> &MeasureSpec {
        &self.measure
    }

    pub fn weights(&self) -> &WeightFamily {
        &self.weights
    }

    pub fn q(&self) -> usize {
        self.weights.q()
    }

    pub fn p(&self) -> usize {
        self.weights.p()
    }

    /// Whether multiplication by the variable is symmetric,
    /// `<x f, g> = <f, y g>`: true for measures carried by a line.
    pub fn is_symmetric(&self) -> bool {
        match &self.measure {
            MeasureSpec::Line { .. } => true,
            MeasureSpec::Chain { domains, .. } => domains.len() == 1,
            MeasureSpec::Plane { .. } | MeasureSpec::Circle => false,
        }
    }

    /// The transposed problem: weights swapped and the measure transposed.
    pub fn dual(&self) -> Result<Self> {
        let weights = WeightFamily::new(self.weights.phi.clone(), self.weights.psi.clone());
        let prepared = match &self.prepared {
            Prepared::RealLine { density } => Prepared::RealLine { density: *density },
            Prepared::LineNodes { nodes, weights } => Prepared::LineNodes {
                nodes: nodes.clone(),
                weights: weights.clone(),
            },
            Prepared::Kernel { x, y, k } => Prepared::Kernel {
                x: y.clone(),
                y: x.clone(),
                k: k.transpose(),
            },
            Prepared::Circle => Prepared::Circle,
        };
        Ok(Self {
            measure: self.measure.transposed(),
            weights,
            prepared,
        })
    }

    /// Moment tables for `i <= max_i`, `j <= max_j` at the given times.
    pub fn pairing(&self, times: &Times, max_i: usize, max_j: usize) -> Result<Pairing> {
        times.check(self.q(), self.p())?;
        if matches!(self.prepared, Prepared::LineNodes { .. } | Prepared::Kernel { .. }) && self.unbounded() {
            let cubic = times.s.iter().chain(&times.t).any(|v| v.as_slice().iter().skip(2).any(|&x| x != 0.0));
            if cubic {
                return Err(Error::DivergentIntegral(
                    "times of index 3 or more on an unbounded domain".into(),
                ));
            }
        }
        let q = self.q();
        let p = self.p();
        let mut tables = Vec::with_capacity(q);
        match &self.prepared {
            Prepared::RealLine { density } => {
                for a in 0..q {
                    let mut row = Vec::with_capacity(p);
                    for b in 0..p {
                        let poly = combined_exponent(
                            *density,
                            &self.weights.psi[a],
                            &self.weights.phi[b],
                            &times.s[a],
                            &times.t[b],
                        );
                        row.push(Table::ByDegree(real_line_moments(&poly, max_i + max_j)?));
                    }
                    tables.push(row);
                }
            }
            Prepared::LineNodes { nodes, weights } => {
                for a in 0..q {
                    let mut row = Vec::with_capacity(p);
                    for b in 0..p {
                        let poly = combined_exponent(
                            [0.0; 3],
                            &self.weights.psi[a],
                            &self.weights.phi[b],
                            &times.s[a],
                            &times.t[b],
                        );
                        let mut m = vec![0.0; max_i + max_j + 1];
                        for (&x, &w) in nodes.iter().zip(weights) {
                            let mut v = w * eval_poly(&poly, x).exp();
                            for mk in m.iter_mut() {
                                *mk += v;
                                v *= x;
                            }
                        }
                        row.push(Table::ByDegree(m));
                    }
                    tables.push(row);
                }
            }
            Prepared::Kernel { x, y, k } => {
                let left: Vec<DMatrix<f64>> = (0..q)
                    .map(|a| {
                        let f = |u: f64| {
                            (self.weights.psi[a].log_eval(u) - times.s[a].xi(u)).exp()
                        };
                        power_matrix(x, max_i, f).transpose() * k
                    })
                    .collect();
                let right: Vec<DMatrix<f64>> = (0..p)
                    .map(|b| {
                        let g = |u: f64| {
                            (self.weights.phi[b].log_eval(u) + times.t[b].xi(u)).exp()
                        };
                        power_matrix(y, max_j, g)
                    })
                    .collect();
                for l in &left {
                    tables.push(right.iter().map(|r| Table::Full(l * r)).collect());
                }
            }
            Prepared::Circle => {
                for a in 0..q {
                    let mut row = Vec::with_capacity(p);
                    for b in 0..p {
                        row.push(Table::Circle {
                            offset: max_j,
                            c: circle_moments(&times.s[a], &times.t[b], max_i, max_j),
                        });
                    }
                    tables.push(row);
                }
            }
        }
        Ok(Pairing {
            tables,
            max_i,
            max_j,
        })
    }

    fn unbounded(&self) -> bool {
        match &self.measure {
            MeasureSpec::Line { domain, .. } => !domain.is_bounded(),
            MeasureSpec::Plane { x_domain, y_domain, .. } => !(x_domain.is_bounded() && y_domain.is_bounded()),
            MeasureSpec::Chain { domains, .. } => !domains.iter().all(Domain::is_bounded),
            MeasureSpec::Circle => false,
        }
    }

    /// A single moment `<x^i psi_a^{-s}, y^j phi_b^t>`.
    pub fn moment(&self, a: usize, i: usize, b: usize, j: usize, times: &Times) -> Result<f64> {
        Ok(self.pairing(times, i, j)?.get(a, i, b, j))
    }

    /// Derivative of a moment along `d`, by monomial insertion.
    pub fn moment_time_derivative(
        &self,
        a: usize,
        i: usize,
        b: usize,
        j: usize,
        times: &Times,
        d: Direction,
    ) -> Result<f64> {
        let vecs = match d.side {
            Side::S => &times.s,
            Side::T => &times.t,
        };
        let depth = vecs
            .get(d.block)
            .ok_or_else(|| Error::SizeMismatch(format!("no time block {}", d.block)))?
            .depth();
        if d.index == 0 || d.index > depth {
            return Err(Error::IndexOutOfRange {
                index: d.index,
                max: depth,
            });
        }
        let pairing = self.pairing(times, i + d.index, j + d.index)?;
        Ok(pairing.derivative(a, i, b, j, &[d]))
    }
}

/// `sum_k c_k x^k`, coefficients in ascending order.
fn eval_poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Exponent of `rho psi_a phi_b exp(-xi(s_a) + xi(t_b))` as ascending coefficients.
fn combined_exponent(
    density: [f64; 3],
    psi: &WeightDescriptor,
    phi: &WeightDescriptor,
    s: &TimeVector,
    t: &TimeVector,
) -> Vec<f64> {
    let depth = s.depth().max(t.depth()).max(2);
    let mut c = vec![0.0; depth + 1];
    for (k, ck) in c.iter_mut().enumerate().take(3) {
        *ck = density[k] + psi.exponent()[k] + phi.exponent()[k];
    }
    for (k, ck) in c.iter_mut().enumerate().skip(1) {
        *ck += t.get(k) - s.get(k);
    }
    c
}

/// `int_R x^k exp(P(x)) dx` for `k = 0..=n`.
fn real_line_moments(poly: &[f64], n: usize) -> Result<Vec<f64>> {
    let top = poly.iter().rposition(|&c| c != 0.0).unwrap_or(0);
    if top < 2 || top % 2 == 1 || poly[top] > 0.0 {
        return Err(Error::DivergentIntegral(format!(
            "exponent of degree {top} with leading coefficient {} on the real line",
            poly[top]
        )));
    }
    if top == 2 {
        return Ok(gaussian_moments(poly[0], poly[1], poly[2], n));
    }
    // Higher even degree with negative leading term: Hermite quadrature
    // centred on the quadratic part when it is confining.
    let (mu, sigma) = if poly[2] < 0.0 {
        let var = -0.5 / poly[2];
        (poly[1] * var, var.sqrt())
    } else {
        (0.0, 1.0)
    };
    let rule = hermite_rule(DEFAULT_HERMITE_NODES);
    let scale = std::f64::consts::SQRT_2 * sigma;
    let mut m = vec![0.0; n + 1];
    for &(u, w) in rule {
        let x = mu + scale * u;
        let mut v = scale * (w.ln() + u * u + eval_poly(poly, x)).exp();
        for mk in m.iter_mut() {
            *mk += v;
            v *= x;
        }
    }
    Ok(m)
}

/// `int_R x^k exp(c0 + c1 x + c2 x^2) dx`, `c2 < 0`, via `m_k = mu m_{k-1} + (k-1) var m_{k-2}`.
pub fn gaussian_moments(c0: f64, c1: f64, c2: f64, n: usize) -> Vec<f64> {
    let var = -0.5 / c2;
    let mu = c1 * var;
    let z = (c0 + 0.5 * mu * mu / var).exp() * (2.0 * std::f64::consts::PI * var).sqrt();
    let mut m = vec![0.0; n + 1];
    m[0] = 1.0;
    if n >= 1 {
        m[1] = mu;
    }
    for k in 2..=n {
        m[k] = mu * m[k - 1] + (k - 1) as f64 * var * m[k - 2];
    }
    m.iter().map(|v| v * z).collect()
}

/// `c[d + max_j]` is the circle moment for `i - j = d`.
fn circle_moments(s: &TimeVector, t: &TimeVector, max_i: usize, max_j: usize) -> Vec<f64> {
    let st = schur_coeffs(t, CIRCLE_TERMS + max_i);
    let ss = schur_coeffs(&s.neg(), CIRCLE_TERMS + max_j);
    let mut c = vec![0.0; max_i + max_j + 1];
    for (idx, cd) in c.iter_mut().enumerate() {
        let d = idx as i64 - max_j as i64;
        // sum_{a - b = d} S_a(t) S_b(-s)
        let b0 = (-d).max(0) as usize;
        let mut acc = 0.0;
        for b in b0..=CIRCLE_TERMS {
            let a = (b as i64 + d) as usize;
            if a < st.len() && b < ss.len() {
                acc += st[a] * ss[b];
            }
        }
        *cd = acc;
    }
    c
}

/// Rows indexed by node, columns by power: `f(u) u^j`.
fn power_matrix(nodes: &[f64], max_pow: usize, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nodes.len(), max_pow + 1);
    for (r, &u) in nodes.iter().enumerate() {
        let mut v = f(u);
        for c in 0..=max_pow {
            m[(r, c)] = v;
            v *= u;
        }
    }
    m
}

fn hermite_rule(n: usize) -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    debug_assert_eq!(n, DEFAULT_HERMITE_NODES);
    RULE.get_or_init(|| {
        GaussHermite::new(NonZeroUsize::new(n).expect("nonzero"))
            .as_node_weight_pairs()
            .to_vec()
    })
}

fn legendre_rule(n: usize) -> Vec<(f64, f64)> {
    static DEFAULT: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    let build = |n| {
        GaussLegendre::new(NonZeroUsize::new(n).expect("nonzero"))
            .as_node_weight_pairs()
            .to_vec()
    };
    if n == DEFAULT_LEGENDRE_NODES {
        DEFAULT.get_or_init(|| build(n)).clone()
    } else {
        build(n)
    }
}

/// Nodes and weights for `int_D f` after truncating infinite ends at
/// `center +- tail * sigma`.
fn domain_rule(domain: &Domain, center: f64, sigma: f64, tail: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = legendre_rule(n);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for piece in &domain.pieces {
        let lo = if piece.lo.is_finite() {
            piece.lo
        } else {
            center.min(piece.hi) - tail * sigma
        };
        let hi = if piece.hi.is_finite() {
            piece.hi
        } else {
            center.max(lo) + tail * sigma
        };
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for &(u, w) in &rule {
            nodes.push(mid + half * u);
            weights.push(half * w);
        }
    }
    (nodes, weights)
}

/// Largest drift `|c1|` among the weights, used to widen truncations.
fn max_drift(weights: &WeightFamily) -> f64 {
    weights
        .psi
        .iter()
        .chain(&weights.phi)
        .fold(0.0, |m, w| m.max(w.exponent()[1].abs()))
}

fn prepare(measure: &MeasureSpec, weights: &WeightFamily, n: usize) -> Result<Prepared> {
    match measure {
        MeasureSpec::Circle => {
            if !weights.psi.iter().chain(&weights.phi).all(|w| w.is_unit()) {
                return Err(Error::UnsupportedBackend(
                    "circle pairing requires unit base weights".into(),
                ));
            }
            Ok(Prepared::Circle)
        }
        MeasureSpec::Line { domain, density } => {
            domain.validate()?;
            let d = density.exponent();
            if domain.is_real_line() {
                return Ok(Prepared::RealLine { density: d });
            }
            let (center, sigma) = line_spread(d, weights, domain)?;
            let (nodes, w) = domain_rule(domain, center, sigma, TAIL_SIGMAS, n);
            let weights = nodes
                .iter()
                .zip(&w)
                .map(|(&x, &w)| w * density.log_eval(x).exp())
                .collect();
            Ok(Prepared::LineNodes { nodes, weights })
        }
        MeasureSpec::Plane {
            x_domain,
            y_domain,
            density,
        } => {
            x_domain.validate()?;
            y_domain.validate()?;
            let bounded = x_domain.is_bounded() && y_domain.is_bounded();
            let det = 4.0 * density.cxx * density.cyy - density.cxy * density.cxy;
            if !bounded && !(density.cxx < 0.0 && density.cyy < 0.0 && det > 0.0) {
                return Err(Error::DivergentIntegral(
                    "plane density is not confining on an unbounded domain".into(),
                ));
            }
            let (sx, sy) = if bounded {
                (1.0, 1.0)
            } else {
                ((-2.0 * density.cyy / det).sqrt(), (-2.0 * density.cxx / det).sqrt())
            };
            let drift = max_drift(weights);
            let (xs, wx) = domain_rule(x_domain, 0.0, sx * (1.0 + drift * sx), KERNEL_TAIL_SIGMAS, n);
            let (ys, wy) = domain_rule(y_domain, 0.0, sy * (1.0 + drift * sy), KERNEL_TAIL_SIGMAS, n);
            let mut k = DMatrix::zeros(xs.len(), ys.len());
            for (a, (&x, &u)) in xs.iter().zip(&wx).enumerate() {
                for (b, (&y, &v)) in ys.iter().zip(&wy).enumerate() {
                    k[(a, b)] = u * v * density.log_eval(x, y).exp();
                }
            }
            Ok(Prepared::Kernel { x: xs, y: ys, k })
        }
        MeasureSpec::Chain { domains, couplings } => chain_kernel(domains, couplings, weights, n),
    }
}

/// Centre and width used to truncate an unbounded line domain.
fn line_spread(d: [f64; 3], weights: &WeightFamily, domain: &Domain) -> Result<(f64, f64)> {
    if domain.is_bounded() {
        return Ok((0.0, 1.0));
    }
    if d[2] >= 0.0 {
        return Err(Error::DivergentIntegral(
            "line density is not confining on an unbounded domain".into(),
        ));
    }
    let var = -0.5 / d[2];
    let sigma = var.sqrt();
    let center = d[1] * var;
    Ok((center, sigma * (1.0 + max_drift(weights) * sigma)))
}

fn chain_kernel(
    domains: &[Domain],
    couplings: &[f64],
    weights: &WeightFamily,
    n: usize,
) -> Result<Prepared> {
    let m = domains.len();
    if m == 0 || m > 3 || couplings.len() + 1 != m {
        return Err(Error::ConfigInvalid(format!(
            "chain needs 1..=3 sites and one coupling per link, got {m} sites and {} couplings",
            couplings.len()
        )));
    }
    for d in domains {
        d.validate()?;
    }
    // precision matrix of exp(-x^T L x / 2)
    let mut lam = DMatrix::<f64>::identity(m, m);
    for (l, &c) in couplings.iter().enumerate() {
        lam[(l, l + 1)] = -c;
        lam[(l + 1, l)] = -c;
    }
    let cov = if domains.iter().all(Domain::is_bounded) {
        DMatrix::identity(m, m)
    } else {
        match lam.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => {
                return Err(Error::DivergentIntegral(
                    "chain couplings are not confining".into(),
                ))
            }
        }
    };
    let drift = max_drift(weights) * cov.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
    let rules: Vec<(Vec<f64>, Vec<f64>)> = domains
        .iter()
        .enumerate()
        .map(|(l, d)| {
            let sigma = cov[(l, l)].sqrt();
            domain_rule(d, 0.0, sigma + drift, KERNEL_TAIL_SIGMAS, n)
        })
        .collect();
    // log of site factors
    let site = |l: usize| -> Vec<f64> {
        rules[l]
            .0
            .iter()
            .zip(&rules[l].1)
            .map(|(&x, &w)| w.ln() - 0.5 * x * x)
            .collect()
    };
    let (x, y) = (rules[0].0.clone(), rules[m - 1].0.clone());
    let k = match m {
        1 => {
            let s0 = site(0);
            let nodes = x.clone();
            let weights = s0.iter().map(|v| v.exp()).collect();
            return Ok(Prepared::LineNodes { nodes, weights });
        }
        2 => {
            let (s0, s1) = (site(0), site(1));
            DMatrix::from_fn(x.len(), y.len(), |a, b| {
                (s0[a] + s1[b] + couplings[0] * x[a] * y[b]).exp()
            })
        }
        _ => {
            let (s0, s1, s2) = (site(0), site(1), site(2));
            let mid = &rules[1].0;
            let mut k = DMatrix::zeros(x.len(), y.len());
            let mut buf = vec![0.0; mid.len()];
            for a in 0..x.len() {
                for c in 0..y.len() {
                    let mut top = f64::NEG_INFINITY;
                    for (bi, &u) in mid.iter().enumerate() {
                        let e = s1[bi] + couplings[0] * x[a] * u + couplings[1] * u * y[c];
                        buf[bi] = e;
                        top = top.max(e);
                    }
                    let sum: f64 = buf.iter().map(|e| (e - top).exp()).sum();
                    k[(a, c)] = (s0[a] + s2[c] + top).exp() * sum;
                }
            }
            k
        }
    };
    Ok(Prepared::Kernel { x, y, k })
}

enum Table {
    ByDegree(Vec<f64>),
    Full(DMatrix<f64>),
    Circle { offset: usize, c: Vec<f64> },
}

/// Moment tables at fixed times.
pub struct Pairing {
    tables: Vec<Vec<Table>>,
    max_i: usize,
    max_j: usize,
}

impl Pairing {
    pub fn q(&self) -> usize {
        self.tables.len()
    }

    pub fn p(&self) -> usize {
        self.tables.first().map_or(0, |r| r.len())
    }

    pub fn capacity(&self) -> (usize, usize) {
        (self.max_i, self.max_j)
    }

    /// `<x^i psi_a^{-s}, y^j phi_b^t>`.
    pub fn get(&self, a: usize, i: usize, b: usize, j: usize) -> f64 {
        assert!(
            i <= self.max_i && j <= self.max_j,
            "moment ({i}, {j}) beyond table capacity ({}, {})",
            self.max_i,
            self.max_j
        );
        match &self.tables[a][b] {
            Table::ByDegree(m) => m[i + j],
            Table::Full(m) => m[(i, j)],
            Table::Circle { offset, c } => c[i + offset - j],
        }
    }

    /// Mixed time derivative of a moment: each `t_{b,k}` inserts `y^k`,
    /// each `s_{a,k}` inserts `-x^k`; derivatives in other blocks vanish.
    pub fn derivative(&self, a: usize, i: usize, b: usize, j: usize, dirs: &[Direction]) -> f64 {
        let mut di = 0;
        let mut dj = 0;
        let mut sign = 1.0;
        for d in dirs {
            match d.side {
                Side::S => {
                    if d.block != a {
                        return 0.0;
                    }
                    di += d.index;
                    sign = -sign;
                }
                Side::T => {
                    if d.block != b {
                        return 0.0;
                    }
                    dj += d.index;
                }
            }
        }
        sign * self.get(a, i + di, b, j + dj)
    }
}

/// Serde helper writing infinities as strings.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => t
                .trim()
                .parse::<f64>()
                .map_err(|e| serde::de::Error::custom(format!("bad number {t:?}: {e}"))),
        }
    }
}
