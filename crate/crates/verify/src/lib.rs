//! Reporting for the acceptance suite. Each criterion gathers named checks
//! and renders as a single PASS/FAIL line.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

#[derive(Debug)]
pub struct Criterion {
    pub id: u32,
    pub title: &'static str,
    checks: Vec<(bool, String)>,
    started: Instant,
}

impl Criterion {
    pub fn new(id: u32, title: &'static str) -> Self {
        Self {
            id,
            title,
            checks: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Records one check and returns its outcome.
    pub fn check(&mut self, pass: bool, detail: impl Into<String>) -> bool {
        self.checks.push((pass, detail.into()));
        pass
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    /// Passes when at least one check ran and none failed.
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.0)
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "criterion {:>2} {}  {} ({:.1}s):",
            self.id,
            if self.passed() { "PASS" } else { "FAIL" },
            self.title,
            self.elapsed().as_secs_f64()
        );
        for (i, (pass, detail)) in self.checks.iter().enumerate() {
            let sep = if i == 0 { " " } else { "; " };
            let _ = write!(s, "{sep}{detail}{}", if *pass { "" } else { " [FAIL]" });
        }
        if self.checks.is_empty() {
            s.push_str(" no checks ran");
        }
        s
    }
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_reports_failures() {
        let mut c = Criterion::new(3, "demo");
        assert!(!c.passed());
        c.check(true, "a ok");
        assert!(c.passed());
        c.check(false, "b off");
        assert!(!c.passed());
        let l = c.line();
        assert!(l.starts_with("criterion  3 FAIL  demo"), "{l}");
        assert!(l.ends_with("a ok; b off [FAIL]"), "{l}");
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
