//! Verification suites shared by the CLI and the test targets: finite
//! differences over every op and block, structural equivalences, and the
//! acceptance criteria.

mod acceptance;
mod equiv;
mod grad;

use std::fmt::Write as _;
use std::time::Duration;

pub use acceptance::{criteria, run_criterion, Criterion, CriterionReport};
pub use equiv::equivcheck_suite;
pub use grad::{gradcheck_suite, module_gradcheck};

/// One named sub-check.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(label: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// `value` within `rel` of `target`.
    pub fn within(label: impl Into<String>, value: f64, target: f64, rel: f64) -> Self {
        let dev = (value - target) / target;
        Self::new(
            label,
            dev.abs() <= rel,
            format!("{value:.4} vs {target} ({:+.2}%, limit ±{:.0}%)", 100.0 * dev, 100.0 * rel),
        )
    }

    pub fn from_error(label: impl Into<String>, e: crate::Error) -> Self {
        Self::new(label, false, format!("error: {e}"))
    }
}

pub fn all_passed(outcomes: &[Outcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

/// `PASS  label  detail` lines.
pub fn format_outcomes(outcomes: &[Outcome]) -> String {
    let w = outcomes.iter().map(|o| o.label.len()).max().unwrap_or(0);
    let mut s = String::new();
    for o in outcomes {
        let _ = writeln!(s, "  {}  {:<w$}  {}", if o.passed { "PASS" } else { "FAIL" }, o.label, o.detail);
    }
    s
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}
