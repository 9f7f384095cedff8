//! Pass/fail reports shared by the validation and diagnostic checks.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Warn,
    Inconclusive,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
    /// Smallest slack observed; negative means violated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

impl Check {
    pub fn new(name: impl Into<String>, verdict: Verdict, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            verdict,
            detail: detail.into(),
            margin: None,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = Some(margin);
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict <= Verdict::Warn
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub at: f64,
    pub what: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub subject: String,
    pub checks: Vec<Check>,
    /// Empirical exponent range `[min, max]` of the growth ratio, plus one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tight_range: Option<(f64, f64)>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn new(subject: impl Into<String>) -> Self {
        ValidationReport {
            subject: subject.into(),
            checks: Vec::new(),
            tight_range: None,
            violations: Vec::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn violation(&mut self, at: f64, what: String) {
        self.violations.push(Violation { at, what });
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Worst verdict over all checks.
    pub fn verdict(&self) -> Verdict {
        self.checks
            .iter()
            .map(|c| c.verdict)
            .max()
            .unwrap_or(Verdict::Pass)
    }

    pub fn is_pass(&self) -> bool {
        self.verdict() <= Verdict::Warn
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = vec![format!("{} -> {:?}", self.subject, self.verdict())];
        for c in &self.checks {
            out.push(format!("  [{:?}] {}: {}", c.verdict, c.name, c.detail));
        }
        out
    }
}

/// `n` log-spaced points covering `[lo, hi]` inclusive.
pub fn log_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
