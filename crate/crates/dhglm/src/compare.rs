//! Parameter-by-parameter agreement between two posterior summaries.

use serde::{Deserialize, Serialize};

use crate::io::fmt;
use crate::report::{ParameterRow, COMPARISON_HEADER};

/// A difference of means passes when it is at most
/// `max(absolute, sd_fraction · pooled sd)`, the pooled sd being
/// `sqrt((sd_a² + sd_b²) / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub absolute: f64,
    pub sd_fraction: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { absolute: 0.05, sd_fraction: 0.5 }
    }
}

impl Tolerance {
    pub fn absolute(v: f64) -> Self {
        Self { absolute: v, sd_fraction: 0.0 }
    }

    pub fn allowed(&self, sd_a: f64, sd_b: f64) -> f64 {
        let pooled = ((sd_a * sd_a + sd_b * sd_b) / 2.0).sqrt();
        self.absolute.max(self.sd_fraction * pooled)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub abs_diff: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    /// `sd_a / sd_b`.
    pub sd_ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn max_abs_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max)
    }

    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect()
    }

    pub fn csv_rows(&self) -> impl Iterator<Item = Vec<String>> + '_ {
        self.rows.iter().map(|r| {
            vec![
                r.name.clone(),
                fmt(r.mean_a),
                fmt(r.mean_b),
                fmt(r.abs_diff),
                fmt(r.sd_a),
                fmt(r.sd_b),
                fmt(r.sd_ratio),
                fmt(r.tolerance),
                r.pass.to_string(),
            ]
        })
    }

    pub fn csv_header() -> &'static [&'static str] {
        &COMPARISON_HEADER
    }

    pub fn text(&self, a: &str, b: &str) -> String {
        let mut out = format!("{:<14} {:>10} {:>10} {:>9} {:>8} {:>9}  result\n", "Parameter", a, b, "|diff|", "sd ratio", "allowed");
        for r in &self.rows {
            out += &format!(
                "{:<14} {:>10.4} {:>10.4} {:>9.4} {:>8.3} {:>9.4}  {}\n",
                r.name,
                r.mean_a,
                r.mean_b,
                r.abs_diff,
                r.sd_ratio,
                r.tolerance,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

#[derive(Debug, PartialEq, thiserror::Error)]
#[error("summaries cover different parameters (only in first: {only_a:?}; only in second: {only_b:?})")]
pub struct NameMismatch {
    pub only_a: Vec<String>,
    pub only_b: Vec<String>,
}

/// Compares every parameter of `a` with the same-named parameter of `b`,
/// in the order of `a`.
pub fn compare(a: &[ParameterRow], b: &[ParameterRow], tol: Tolerance) -> Result<ComparisonReport, NameMismatch> {
    let find = |rows: &[ParameterRow], n: &str| rows.iter().position(|r| r.name == n);
    let only_a: Vec<String> = a.iter().filter(|r| find(b, &r.name).is_none()).map(|r| r.name.clone()).collect();
    let only_b: Vec<String> = b.iter().filter(|r| find(a, &r.name).is_none()).map(|r| r.name.clone()).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(NameMismatch { only_a, only_b });
    }
    let rows = a
        .iter()
        .map(|ra| {
            let rb = &b[find(b, &ra.name).expect("checked above")];
            let (sa, sb) = (ra.summary, rb.summary);
            let abs_diff = (sa.mean - sb.mean).abs();
            let tolerance = tol.allowed(sa.sd, sb.sd);
            ComparisonRow {
                name: ra.name.clone(),
                mean_a: sa.mean,
                mean_b: sb.mean,
                abs_diff,
                sd_a: sa.sd,
                sd_b: sb.sd,
                sd_ratio: if sb.sd > 0.0 { sa.sd / sb.sd } else if sa.sd == 0.0 { 1.0 } else { f64::INFINITY },
                tolerance,
                pass: abs_diff <= tolerance,
            }
        })
        .collect();
    Ok(ComparisonReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dhglm_core::summary::Summary;

    fn rows(v: &[(&str, f64, f64)]) -> Vec<ParameterRow> {
        v.iter()
            .map(|&(n, m, s)| ParameterRow {
                name: n.into(),
                truth: None,
                summary: Summary { mean: m, sd: s, lower: m - 2.0 * s, upper: m + 2.0 * s },
            })
            .collect()
    }

    #[test]
    fn identical_summaries_pass_with_zero_difference() {
        let a = rows(&[("beta0", 1.0, 0.1), ("gamma1", 4.8, 0.5)]);
        let r = compare(&a, &a, Tolerance::default()).unwrap();
        assert!(r.all_pass());
        assert_eq!(r.max_abs_diff(), 0.0);
        assert!(r.rows.iter().all(|x| x.sd_ratio == 1.0));
    }

    #[test]
    fn perturbed_mean_fails_its_row_only() {
        let a = rows(&[("beta0", 1.0, 0.1), ("gamma1", 4.8, 0.5)]);
        let mut b = a.clone();
        b[1].summary.mean += 1.0;
        let r = compare(&a, &b, Tolerance::default()).unwrap();
        assert_eq!(r.failures(), ["gamma1"]);
    }

    #[test]
    fn name_mismatch_is_an_error() {
        let a = rows(&[("beta0", 1.0, 0.1)]);
        let b = rows(&[("beta1", 1.0, 0.1)]);
        let e = compare(&a, &b, Tolerance::default()).unwrap_err();
        assert_eq!(e.only_a, ["beta0"]);
        assert_eq!(e.only_b, ["beta1"]);
    }

    #[test]
    fn tolerance_scales_with_pooled_sd() {
        let t = Tolerance::default();
        assert_eq!(t.allowed(0.01, 0.01), 0.05);
        assert!((t.allowed(0.6, 0.8) - 0.5 * 0.5f64.sqrt()).abs() < 1e-12);
    }
}
