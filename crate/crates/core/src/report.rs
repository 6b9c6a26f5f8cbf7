//! Check results and the verification report.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of `text`.
pub fn digest(text: &str) -> String {
    let h = Sha256::digest(text.as_bytes());
    h.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    /// Identity name plus the block indices it was evaluated at.
    pub id: String,
    /// Human-readable inputs (composition, backend, times).
    pub inputs: String,
    pub inputs_digest: String,
    /// Residual already divided by the natural scale of the identity.
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

impl CheckResult {
    pub fn new(id: impl Into<String>, inputs: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        let inputs = inputs.into();
        Self {
            id: id.into(),
            inputs_digest: digest(&inputs),
            inputs,
            residual,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance,
            wall_ms: None,
        }
    }

    /// Re-evaluates pass/fail against another tolerance.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self.pass = self.residual.is_finite() && self.residual <= tolerance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub worst_id: Option<String>,
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub summary: Summary,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    /// Sorts checks by id (stable) and computes the summary.
    pub fn new(config_digest: String, mut checks: Vec<CheckResult>) -> Self {
        checks.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.inputs.cmp(&b.inputs)));
        let passed = checks.iter().filter(|c| c.pass).count();
        let mut worst_id = None;
        let mut worst_ratio = 0.0f64;
        for c in &checks {
            let r = if c.tolerance > 0.0 {
                c.residual / c.tolerance
            } else if c.residual == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            if worst_id.is_none() || r > worst_ratio || r.is_nan() {
                worst_ratio = r;
                worst_id = Some(c.id.clone());
            }
        }
        Self {
            config_digest,
            generated_at: None,
            summary: Summary {
                total: checks.len(),
                passed,
                failed: checks.len() - passed,
                worst_id,
                worst_ratio,
            },
            checks,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn strip_timing(&mut self) {
        self.generated_at = None;
        for c in &mut self.checks {
            c.wall_ms = None;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,inputs_digest,residual,tolerance,pass\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{},{:e},{:e},{}\n",
                csv_field(&c.id),
                c.inputs_digest,
                c.residual,
                c.tolerance,
                c.pass
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_summarised() {
        let r = VerificationReport::new(
            "x".into(),
            vec![
                CheckResult::new("b", "", 1e-3, 1e-2),
                CheckResult::new("a", "", 1e-1, 1e-2),
            ],
        );
        assert_eq!(r.checks[0].id, "a");
        assert_eq!(r.summary.failed, 1);
        assert_eq!(r.summary.worst_id.as_deref(), Some("a"));
        assert!(!r.all_pass());
    }

    #[test]
    fn nan_residual_fails() {
        assert!(!CheckResult::new("a", "", f64::NAN, 1.0).pass);
    }
}
