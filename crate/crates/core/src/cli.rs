//! Commands behind the `taumom` binary and their exit codes.

use serde::{Deserialize, Serialize};

use crate::config::{PolysPayload, RunConfig};
use crate::error::{Error, Result};
use crate::inner_product::Times;
use crate::moment_matrix::{Composition, TauContext};
use crate::mops::{self, MopsKind, MopsSolution};
use crate::report::{digest, VerificationReport};
use crate::scenarios::{self, McEstimate, ProbabilityResult, ScenarioConfig, ScenarioName};
use crate::sweep;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

/// Numerical failures exit with 3, everything else the input's fault with 2.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DegenerateTau { .. } | Error::WindowTooNarrow(_) | Error::RejectionStarvation { .. } => EXIT_DEGENERATE,
        _ => EXIT_CONFIG,
    }
}

pub fn report_exit_code(r: &VerificationReport) -> i32 {
    if r.all_pass() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

fn config_digest(cfg: &RunConfig, command: &str) -> String {
    digest(&format!("{command} {}", serde_json::to_string(cfg).expect("config serialises")))
}

/// The random sweeps, with the GUE and circle checks when asked for. Sweep
/// `k` is seeded with `seed + k`.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerificationReport> {
    let tol = cfg.effective_tolerances();
    let l = cfg.truncation_or_default();
    let v = &cfg.verify;
    let seed = cfg.seed;
    let ((mops, cauchy), (bilinear, pde)) = rayon::join(
        || {
            rayon::join(
                || sweep::mops_sweep(seed, v.mops, &tol),
                || sweep::cauchy_sweep(seed.wrapping_add(1), v.cauchy, l, &tol),
            )
        },
        || {
            rayon::join(
                || sweep::bilinear_sweep(seed.wrapping_add(2), v.bilinear, l, &tol),
                || sweep::pde_sweep(seed.wrapping_add(3), v.pde, &tol),
            )
        },
    );
    let mut checks = mops?;
    checks.extend(cauchy?);
    checks.extend(bilinear?);
    checks.extend(pde?);
    if v.presets {
        checks.extend(scenarios::gue_checks(6, cfg.tolerance)?);
        checks.extend(scenarios::circle_checks(4, &Times::zeros(1, 1), cfg.tolerance)?);
        checks.extend(scenarios::circle_checks(4, &scenarios::circle_times(), cfg.tolerance)?);
    }
    Ok(VerificationReport::new(config_digest(cfg, "verify"), checks))
}

pub fn cmd_scenario(cfg: &RunConfig, name: Option<ScenarioName>) -> Result<VerificationReport> {
    let sc = cfg.scenario_for(name)?;
    let mut report = scenarios::run_scenario(&sc)?;
    report.config_digest = config_digest(cfg, &format!("scenario {:?}", sc.name));
    Ok(report)
}

fn polys_payload(cfg: &RunConfig) -> Result<&PolysPayload> {
    cfg.polys
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("polys needs a preset".into()))
}

/// The polynomials of the requested kinds for a preset, at zero times
/// unless times are given.
pub fn cmd_polys(cfg: &RunConfig) -> Result<Vec<MopsSolution>> {
    let pl = polys_payload(cfg)?;
    let mut sc = ScenarioConfig::preset(pl.preset);
    if let Some(g) = &pl.geometry {
        sc.geometry = g.clone();
    }
    sc.nodes = cfg.nodes;
    sc.composition = match (pl.n, &pl.composition) {
        (Some(_), Some(_)) => return Err(Error::ConfigInvalid("give n or composition, not both".into())),
        (Some(n), None) => Some(Composition::new(vec![n], vec![n])),
        (None, c) => c.clone(),
    };
    let base = scenarios::preset_problem(&sc)?;
    let c = base.composition;
    let (q, p) = (c.q(), c.p());
    let times = pl.times.clone().unwrap_or_else(|| Times::zeros(q, p));
    let ip = base.ip;
    let block = c.m.iter().chain(&c.n).copied().max().unwrap_or(0);
    let ctx = TauContext::with_capacity(&ip, times.clone(), block + 1, 2, 1)?;
    ctx.tau_nonzero(&c)?;
    let mut out = Vec::new();
    for kind in &pl.kinds {
        match kind {
            MopsKind::TypeII => {
                for b in 0..p {
                    out.push(mops::solve_type_ii(&ctx, &c, b)?);
                }
            }
            MopsKind::TypeI => {
                for a in (0..q).filter(|&a| c.m[a] > 0) {
                    out.push(mops::solve_type_i(&ctx, &c, a)?);
                }
            }
            MopsKind::DualTypeI => {
                for b in (0..p).filter(|&b| c.n[b] > 0) {
                    out.push(mops::solve_dual_type_i(&ip, &times, &c, b)?);
                }
            }
            MopsKind::DualTypeII => {
                for a in 0..q {
                    out.push(mops::solve_dual_type_ii(&ip, &times, &c, a)?);
                }
            }
        }
    }
    Ok(out)
}

fn kind_name(k: MopsKind) -> &'static str {
    match k {
        MopsKind::TypeI => "type_i",
        MopsKind::TypeII => "type_ii",
        MopsKind::DualTypeI => "dual_type_i",
        MopsKind::DualTypeII => "dual_type_ii",
    }
}

/// Rounds to 14 significant digits so that exact values print exactly.
fn coefficient(x: f64) -> String {
    let v: f64 = format!("{x:.13e}").parse().expect("formatted float parses");
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// One row per (kind, block, component), ascending coefficients padded
/// with zeros to a common degree. Blocks and components are 1-based.
pub fn polys_csv(sols: &[MopsSolution]) -> String {
    let width = sols.iter().flat_map(|s| s.components.iter().map(Vec::len)).max().unwrap_or(0);
    let mut out = String::from("kind,beta_or_alpha,component");
    for d in 0..width {
        out.push_str(&format!(",c{d}"));
    }
    out.push('\n');
    for s in sols {
        for (k, comp) in s.components.iter().enumerate() {
            out.push_str(&format!("{},{},{}", kind_name(s.kind), s.index + 1, k + 1));
            for d in 0..width {
                out.push(',');
                out.push_str(&coefficient(comp.get(d).copied().unwrap_or(0.0)));
            }
            out.push('\n');
        }
    }
    out
}

/// Coarse and step-halved Monte-Carlo runs against the determinant value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub coarse: McEstimate,
    pub fine: McEstimate,
    /// `fine - coarse`; a large value means the grid is too coarse.
    pub step_sensitivity: f64,
    /// `(fine - determinant) / fine.stderr`.
    pub deviation_in_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbOutput {
    pub result: ProbabilityResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<McComparison>,
}

impl ProbOutput {
    pub fn to_csv(&self) -> String {
        let r = &self.result;
        match &self.monte_carlo {
            None => format!(
                "numerator,denominator,probability\n{:e},{:e},{}\n",
                r.numerator, r.denominator, r.probability
            ),
            Some(mc) => format!(
                "numerator,denominator,probability,mc_estimate,mc_stderr,mc_fine_estimate,mc_fine_stderr\n{:e},{:e},{},{},{},{},{}\n",
                r.numerator, r.denominator, r.probability, mc.coarse.estimate, mc.coarse.stderr, mc.fine.estimate, mc.fine.stderr
            ),
        }
    }
}

pub fn cmd_prob(cfg: &RunConfig) -> Result<ProbOutput> {
    let pl = cfg.prob.clone().unwrap_or_default();
    let g = pl.resolved_geometry()?;
    let result = scenarios::km_probability(&g, cfg.nodes)?;
    let monte_carlo = match &pl.monte_carlo {
        None => None,
        Some(req) => {
            let coarse = scenarios::km_monte_carlo(&g, req.accepted, req.steps, cfg.seed)?;
            let fine = scenarios::km_monte_carlo(&g, req.accepted, 2 * req.steps, cfg.seed)?;
            Some(McComparison {
                step_sensitivity: fine.estimate - coarse.estimate,
                deviation_in_stderr: (fine.estimate - result.probability) / fine.stderr,
                coarse,
                fine,
            })
        }
    };
    Ok(ProbOutput { result, monte_carlo })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients_print_exactly() {
        assert_eq!(coefficient(-2.9999999999999996), "-3");
        assert_eq!(coefficient(-0.0), "0");
        assert_eq!(coefficient(1e-20), "0.00000000000000000001");
        assert_eq!(coefficient(0.125), "0.125");
    }

    #[test]
    fn gue_cubic_row() {
        let cfg = RunConfig::from_json(r#"{"polys": {"preset": "gue", "n": "3", "kinds": ["type_ii"]}}"#).unwrap();
        let csv = polys_csv(&cmd_polys(&cfg).unwrap());
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("kind,beta_or_alpha,component,c0,c1,c2,c3"));
        assert_eq!(lines.next(), Some("type_ii,1,1,0,-3,0,1"));
    }

    #[test]
    fn degenerate_errors_map_to_three() {
        let e = Error::DegenerateTau {
            value: 0.0,
            threshold: 1.0,
        };
        assert_eq!(exit_code(&e), EXIT_DEGENERATE);
        assert_eq!(exit_code(&Error::ConfigInvalid("x".into())), EXIT_CONFIG);
    }
}
