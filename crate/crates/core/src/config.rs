//! Run configuration read by the command-line front end.
//!
//! Numbers may be written as decimal strings (`"1e-8"`, `"12"`); infinite
//! interval ends are `"inf"` and `"-inf"`. The schema is published in
//! `schema/run_config.schema.json`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::error::{Error, Result};
use crate::inner_product::Times;
use crate::moment_matrix::Composition;
use crate::mops::MopsKind;
use crate::scenarios::{Geometry, ScenarioConfig, ScenarioName};
use crate::suite::{Tolerances, DEFAULT_TRUNCATION};

/// The published schema of [`RunConfig`].
pub const SCHEMA: &str = include_str!("../schema/run_config.schema.json");

const MAX_TRUNCATION: usize = 32;
const MIN_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Sizes of the random sweeps run by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyPayload {
    pub mops: usize,
    pub cauchy: usize,
    pub bilinear: usize,
    pub pde: usize,
    /// Also run the GUE and circle preset checks.
    pub presets: bool,
}

impl Default for VerifyPayload {
    fn default() -> Self {
        Self {
            mops: 12,
            cauchy: 12,
            bilinear: 20,
            pde: 8,
            presets: true,
        }
    }
}

/// Coefficient tables of a preset's polynomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolysPayload {
    pub preset: ScenarioName,
    /// Shorthand for the composition `m = n = (n)` when `p = q = 1`.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub composition: Option<Composition>,
    /// Zero times when absent.
    #[serde(default)]
    pub times: Option<Times>,
    #[serde(default)]
    pub geometry: Option<Geometry>,
    #[serde(default = "all_kinds")]
    pub kinds: Vec<MopsKind>,
}

fn all_kinds() -> Vec<MopsKind> {
    vec![MopsKind::TypeI, MopsKind::TypeII, MopsKind::DualTypeI, MopsKind::DualTypeII]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloRequest {
    pub accepted: u64,
    /// Time steps of the coarse grid; the fine grid halves the step.
    pub steps: usize,
}

impl Default for MonteCarloRequest {
    fn default() -> Self {
        Self {
            accepted: 100_000,
            steps: 200,
        }
    }
}

/// Non-intersection probability of Brownian bridges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProbPayload {
    /// Preset whose geometry is used when `geometry` is absent.
    pub preset: Option<ScenarioName>,
    pub geometry: Option<Geometry>,
    pub monte_carlo: Option<MonteCarloRequest>,
}

impl ProbPayload {
    pub fn resolved_geometry(&self) -> Result<Geometry> {
        if let Some(g) = &self.geometry {
            return Ok(g.clone());
        }
        let name = self.preset.unwrap_or(ScenarioName::BrownianGeneral);
        match name {
            ScenarioName::BrownianTwoEndpoints | ScenarioName::BrownianChain | ScenarioName::BrownianGeneral => {
                Ok(ScenarioConfig::preset(name).geometry)
            }
            _ => Err(Error::ConfigInvalid(format!("preset {name:?} has no Brownian geometry"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Overrides every tolerance when set.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Truncation order `L` of Cauchy-type series.
    #[serde(default)]
    pub truncation: Option<usize>,
    /// Gauss-Legendre nodes per interval for windowed and kernel measures.
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub verify: VerifyPayload,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub polys: Option<PolysPayload>,
    #[serde(default)]
    pub prob: Option<ProbPayload>,
}

/// Replaces decimal strings by numbers. `"inf"` and other non-numeric
/// strings are kept.
fn numbers_from_strings(v: Value) -> Value {
    match v {
        Value::String(s) => match parse_number(s.trim()) {
            Some(n) => Value::Number(n),
            None => Value::String(s),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(numbers_from_strings).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, numbers_from_strings(v))).collect()),
        other => other,
    }
}

fn parse_number(s: &str) -> Option<Number> {
    let first = s.chars().next()?;
    if !(first.is_ascii_digit() || first == '-' || first == '+' || first == '.') {
        return None;
    }
    if !s.contains(['.', 'e', 'E']) {
        if let Ok(u) = s.parse::<u64>() {
            return Some(u.into());
        }
        if let Ok(i) = s.parse::<i64>() {
            return Some(i.into());
        }
    }
    s.parse::<f64>().ok().and_then(Number::from_f64)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(format!("not JSON: {e}")))?;
        let cfg: Self =
            serde_json::from_value(numbers_from_strings(raw)).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let tol = self.effective_tolerances();
        let all = [
            tol.tau_ratio,
            tol.orthogonality,
            tol.cauchy,
            tol.wave,
            tol.bilinear,
            tol.residue,
            tol.ladder,
            tol.compatibility,
            tol.scenario,
        ];
        if all.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::ConfigInvalid("tolerances must be finite and non-negative".into()));
        }
        if let Some(l) = self.truncation {
            if l == 0 || l > MAX_TRUNCATION {
                return Err(Error::ConfigInvalid(format!("truncation must be in 1..={MAX_TRUNCATION}")));
            }
        }
        if let Some(n) = self.nodes {
            if n < MIN_NODES {
                return Err(Error::ConfigInvalid(format!("nodes must be at least {MIN_NODES}")));
            }
        }
        Ok(())
    }

    pub fn effective_tolerances(&self) -> Tolerances {
        self.tolerance.map(Tolerances::uniform).unwrap_or(self.tolerances)
    }

    pub fn truncation_or_default(&self) -> usize {
        self.truncation.unwrap_or(DEFAULT_TRUNCATION)
    }

    /// The scenario payload for `name` with the global seed, tolerance,
    /// truncation and nodes applied.
    pub fn scenario_for(&self, name: Option<ScenarioName>) -> Result<ScenarioConfig> {
        let mut sc = match (&self.scenario, name) {
            (Some(sc), None) => sc.clone(),
            (Some(sc), Some(n)) if sc.name == n => sc.clone(),
            (_, Some(n)) => ScenarioConfig::preset(n),
            (None, None) => return Err(Error::ConfigInvalid("no scenario given".into())),
        };
        sc.seed = self.seed;
        if let Some(t) = self.tolerance {
            sc.tolerance = Some(t);
        }
        if let Some(l) = self.truncation {
            sc.truncation = l;
        }
        if self.nodes.is_some() {
            sc.nodes = self.nodes;
        }
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_strings_become_numbers() {
        let cfg = RunConfig::from_json(
            r#"{"seed": "7", "tolerance": "1e-6", "truncation": "6",
                "prob": {"geometry": {"starts": ["-0.5", "0.5"], "ends": ["0", "1"],
                         "slices": ["0.5"], "windows": [[{"lo": "-inf", "hi": "1.25"}]]}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.tolerance, Some(1e-6));
        assert_eq!(cfg.truncation, Some(6));
        let g = cfg.prob.unwrap().geometry.unwrap();
        assert_eq!(g.starts, vec![-0.5, 0.5]);
        assert_eq!(g.windows[0].pieces[0].lo, f64::NEG_INFINITY);
        assert_eq!(g.windows[0].pieces[0].hi, 1.25);
    }

    #[test]
    fn partial_tolerances_keep_defaults() {
        let cfg = RunConfig::from_json(r#"{"tolerances": {"ladder": "1e-5"}}"#).unwrap();
        let want = Tolerances {
            ladder: 1e-5,
            ..Tolerances::default()
        };
        assert_eq!(cfg.effective_tolerances(), want);
    }

    #[test]
    fn corrupt_configs_are_rejected() {
        for text in [
            "{",
            r#"{"seed": "x"}"#,
            r#"{"unknown": 1}"#,
            r#"{"tolerance": "-1"}"#,
            r#"{"truncation": "0"}"#,
            r#"{"nodes": "2"}"#,
            r#"{"verify": {"mops": "a"}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(Error::ConfigInvalid(_))), "{text}");
        }
    }

    #[test]
    fn words_stay_strings() {
        assert!(parse_number("inf").is_none());
        assert!(parse_number("gue").is_none());
        assert_eq!(parse_number("-3").unwrap().as_i64(), Some(-3));
        assert_eq!(parse_number("0.25").unwrap().as_f64(), Some(0.25));
    }

    #[test]
    fn schema_lists_every_field() {
        let schema: Value = serde_json::from_str(SCHEMA).unwrap();
        let props = schema["properties"].as_object().unwrap();
        let cfg = serde_json::to_value(RunConfig::default()).unwrap();
        for key in cfg.as_object().unwrap().keys() {
            assert!(props.contains_key(key), "{key}");
        }
        assert_eq!(props.len(), cfg.as_object().unwrap().len());
    }

    #[test]
    fn global_settings_reach_the_scenario() {
        let cfg = RunConfig::from_json(r#"{"seed": "3", "tolerance": "1e-5", "nodes": "64"}"#).unwrap();
        let sc = cfg.scenario_for(Some(ScenarioName::Circle)).unwrap();
        assert_eq!((sc.seed, sc.tolerance, sc.nodes), (3, Some(1e-5), Some(64)));
        assert!(cfg.scenario_for(None).is_err());
    }
}
