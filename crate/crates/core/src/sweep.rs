//! Seeded random configurations and the sweeps run over them.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cauchy_wave;
use crate::error::{Error, Result};
use crate::hirota_pde;
use crate::inner_product::{Domain, InnerProduct, MeasureSpec, Times, WeightDescriptor, WeightFamily};
use crate::moment_matrix::{Composition, TauContext};
use crate::report::CheckResult;
use crate::suite::{self, Tolerances};
use crate::timealg::TimeVector;

/// Half-width of the window carrying the Gaussian density.
pub const WINDOW: f64 = 1.5;
const MAX_SIZE: usize = 5;
const MAX_REDRAWS: usize = 50;

/// One random problem: inner product, times and a square composition.
#[derive(Debug)]
pub struct RandomConfig {
    pub ip: InnerProduct,
    pub times: Times,
    pub composition: Composition,
    pub label: String,
}

fn weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    loop {
        let c: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let separated = c.iter().enumerate().all(|(i, x)| c[..i].iter().all(|y| (x - y).abs() >= 0.3));
        if separated {
            return c;
        }
    }
}

fn time_vector(rng: &mut ChaCha8Rng) -> TimeVector {
    let support = rng.random_range(0..=3usize);
    let v: Vec<f64> = (0..support).map(|_| rng.random_range(-0.2..0.2)).collect();
    TimeVector::from_slice(&v)
}

fn random_times(rng: &mut ChaCha8Rng, q: usize, p: usize) -> Times {
    Times {
        s: (0..q).map(|_| time_vector(rng)).collect(),
        t: (0..p).map(|_| time_vector(rng)).collect(),
    }
}

/// Splits `total` into `k` non-negative parts.
fn partition(rng: &mut ChaCha8Rng, total: usize, k: usize) -> Vec<usize> {
    let mut parts = vec![0; k];
    for _ in 0..total {
        parts[rng.random_range(0..k)] += 1;
    }
    parts
}

fn line_measure(rng: &mut ChaCha8Rng, q: usize, p: usize) -> Result<(InnerProduct, String)> {
    let c = weights(rng, q + p);
    let label = format!("line[-{WINDOW},{WINDOW}] psi={:?} phi={:?}", &c[..q], &c[q..]);
    let family = WeightFamily::new(
        c[..q].iter().map(|&c| WeightDescriptor::PlainExponential { c }).collect(),
        c[q..].iter().map(|&c| WeightDescriptor::PlainExponential { c }).collect(),
    );
    let measure = MeasureSpec::Line {
        domain: Domain::interval(-WINDOW, WINDOW),
        density: WeightDescriptor::standard_gaussian(),
    };
    Ok((InnerProduct::new(measure, family)?, label))
}

/// A random problem with `p, q <= 2` and `|m| = |n| <= 5`; one in four is
/// the circle with `p = q = 1`. Draws with a degenerate tau are redrawn.
pub fn random_config(rng: &mut ChaCha8Rng) -> Result<RandomConfig> {
    for _ in 0..MAX_REDRAWS {
        let circle = rng.random_range(0..4) == 0;
        let (q, p) = if circle {
            (1, 1)
        } else {
            (rng.random_range(1..=2), rng.random_range(1..=2))
        };
        let size = rng.random_range(1..=MAX_SIZE);
        let composition = Composition::new(partition(rng, size, q), partition(rng, size, p));
        let times = random_times(rng, q, p);
        let (ip, label) = if circle {
            (InnerProduct::new(MeasureSpec::Circle, WeightFamily::unit(1, 1))?, "circle".to_string())
        } else {
            line_measure(rng, q, p)?
        };
        let ctx = TauContext::new(&ip, times.clone(), size + 1, size + 1)?;
        match ctx.tau_nonzero(&composition) {
            Ok(_) => {
                return Ok(RandomConfig {
                    ip,
                    times,
                    composition,
                    label,
                })
            }
            Err(Error::DegenerateTau { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateTau {
        value: 0.0,
        threshold: 0.0,
    })
}

/// Prefixes the inputs with the configuration label and records the wall
/// time spent on the configuration.
fn tagged(mut checks: Vec<CheckResult>, label: &str, start: Instant) -> Vec<CheckResult> {
    let ms = start.elapsed().as_secs_f64() * 1e3;
    for c in &mut checks {
        *c = CheckResult::new(c.id.clone(), format!("{label} {}", c.inputs), c.residual, c.tolerance);
        c.wall_ms = Some(ms);
    }
    checks
}

/// Tau-ratio and orthogonality checks over `count` random problems.
pub fn mops_sweep(seed: u64, count: usize, tol: &Tolerances) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..count {
        let cfg = random_config(&mut rng)?;
        let start = Instant::now();
        out.extend(tagged(suite::mops_checks(&cfg.ip, &cfg.times, &cfg.composition, tol)?, &cfg.label, start));
    }
    Ok(out)
}

/// Cauchy, residue and wave-inverse checks over `count` random problems.
pub fn cauchy_sweep(seed: u64, count: usize, l: usize, tol: &Tolerances) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in 0..count {
        let cfg = random_config(&mut rng)?;
        let start = Instant::now();
        let checks = suite::cauchy_checks(&cfg.ip, &cfg.times, &cfg.composition, l, seed.wrapping_add(k as u64), tol)?;
        out.extend(tagged(checks, &cfg.label, start));
    }
    Ok(out)
}

/// Bilinear identity at `count` random `(m, n, m*, n*, s, t, s*, t*)` with
/// `|m| = |n| - 1` and `|m*| = |n*| + 1`, on the same random inner product
/// per draw.
pub fn bilinear_sweep(seed: u64, count: usize, l: usize, tol: &Tolerances) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < count {
        attempts += 1;
        if attempts > count * MAX_REDRAWS {
            return Err(Error::DegenerateTau {
                value: 0.0,
                threshold: 0.0,
            });
        }
        let base = random_config(&mut rng)?;
        let (q, p) = (base.ip.q(), base.ip.p());
        let size = rng.random_range(1..=MAX_SIZE - 1);
        let c = Composition::new(partition(&mut rng, size - 1, q), partition(&mut rng, size, p));
        let size_s = rng.random_range(1..=MAX_SIZE - 1);
        let cs = Composition::new(partition(&mut rng, size_s, q), partition(&mut rng, size_s - 1, p));
        let times_s = random_times(&mut rng, q, p);
        let start = Instant::now();
        match cauchy_wave::verify_bilinear(&base.ip, &c, &base.times, &cs, &times_s, l) {
            Ok(r) => {
                let inputs = format!(
                    "{} {} | {}",
                    base.label,
                    cauchy_wave::describe(&c, &base.times),
                    cauchy_wave::describe(&cs, &times_s)
                );
                let mut check = CheckResult::new("bilinear_tau", inputs, r.residual, tol.bilinear);
                check.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                out.push(check);
                drawn += 1;
            }
            Err(Error::DegenerateTau { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// PDE ladder and compatibility checks over `count` random problems.
pub fn pde_sweep(seed: u64, count: usize, tol: &Tolerances) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..count {
        let cfg = random_config(&mut rng)?;
        let (ip, times, c) = (&cfg.ip, &cfg.times, &cfg.composition);
        let start = Instant::now();
        let mut checks = hirota_pde::verify_pde_ladder(ip, times, c, tol.ladder)?;
        checks.extend(hirota_pde::verify_compatibility_pdes(ip, times, c, tol.compatibility)?);
        out.extend(tagged(checks, &cfg.label, start));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_are_reproducible() {
        let a = random_config(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = random_config(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.label, b.label);
        assert_eq!(a.composition, b.composition);
        assert_eq!(a.times, b.times);
    }

    #[test]
    fn configs_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..40 {
            let c = random_config(&mut rng).unwrap();
            assert!(c.composition.q() <= 2 && c.composition.p() <= 2);
            assert!(c.composition.m_total() == c.composition.n_total());
            assert!((1..=MAX_SIZE).contains(&c.composition.m_total()));
            for v in c.times.s.iter().chain(&c.times.t) {
                assert!(v.support() <= 3 && v.max_abs() <= 0.2);
            }
        }
    }

    #[test]
    fn small_sweeps_pass() {
        let tol = Tolerances::default();
        let mut all = mops_sweep(11, 4, &tol).unwrap();
        all.extend(cauchy_sweep(12, 3, 8, &tol).unwrap());
        all.extend(bilinear_sweep(13, 4, 8, &tol).unwrap());
        all.extend(pde_sweep(14, 2, &tol).unwrap());
        for r in &all {
            assert!(r.pass, "{r:?}");
        }
    }
}
