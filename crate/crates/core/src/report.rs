//! Evaluation of whole ledgers and rendering of the results as a text table
//! or as versioned JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{
    combine, empirical_exceedance, evidential_value_with, z_c_statistic, z_v_statistic, Bound,
    Case, CombinedEvidence, EvidentialValue, Mode,
};
use crate::geometry::DEFAULT_INFIMUM_TOL;
use crate::ledger::{StudyLedger, Warning};
use crate::parallel::Execution;

pub const SCHEMA_VERSION: u32 = 1;

/// Threshold for the "share of studies with V >= 2" line.
pub const REFERENCE_THRESHOLD: f64 = 2.0;

const WARNING_MARKER: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub n: f64,
    pub means: [f64; 3],
    pub sds: [f64; 3],
    pub value: EvidentialValue,
    pub v_rendered: String,
    pub z_v: f64,
    pub z_c: f64,
    pub case: Case,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub threshold: f64,
    pub count: usize,
    pub total: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub source: String,
    pub mode: Mode,
    pub rows: Vec<ReportRow>,
    pub combined: CombinedEvidence,
    pub exceedance: Exceedance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Rounds half away from zero at `decimals` places. The shortest decimal
/// representation is rounded, not the binary value, so `2.675` gives `2.68`.
pub fn round_half_up(x: f64, decimals: usize) -> String {
    let shortest = format!("{}", x.abs());
    let (int_part, frac_part) = match shortest.split_once('.') {
        Some((i, f)) => (i.to_string(), f.to_string()),
        None => (shortest.clone(), String::new()),
    };
    if shortest.contains('e') {
        return format!("{:.*}", decimals, x);
    }
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(
            frac_part
                .bytes()
                .chain(std::iter::repeat(b'0'))
                .take(decimals),
        )
        .map(|b| b - b'0')
        .collect();
    let round_up = frac_part
        .as_bytes()
        .get(decimals)
        .is_some_and(|d| *d >= b'5');
    if round_up {
        let mut k = digits.len();
        loop {
            if k == 0 {
                digits.insert(0, 1);
                break;
            }
            k -= 1;
            if digits[k] == 9 {
                digits[k] = 0;
            } else {
                digits[k] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let mut out = String::new();
    if x < 0.0 && digits.iter().any(|d| *d != 0) {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|d| char::from(b'0' + d)));
    if decimals > 0 {
        out.push('.');
        out.extend(digits[split..].iter().map(|d| char::from(b'0' + d)));
    }
    out
}

/// Table form of one bound: exactly 1 prints as `1`, values that would
/// print as `1.00` but exceed 1 get a third decimal, everything else two.
pub fn render_bound(b: Bound) -> String {
    match b {
        Bound::Unbounded => "∞".to_string(),
        Bound::Finite(1.0) => "1".to_string(),
        Bound::Finite(v) => {
            let two = round_half_up(v, 2);
            if two == "1.00" {
                round_half_up(v, 3)
            } else {
                two
            }
        }
    }
}

/// `3.92`, `4.95–9.41`, `13.95–∞`; an interval whose ends print the same is
/// shown as a single number.
pub fn render_value(v: &EvidentialValue) -> String {
    let lo = render_bound(v.lower);
    let hi = render_bound(v.upper);
    if lo == hi {
        lo
    } else {
        format!("{lo}–{hi}")
    }
}

fn render_n(n: f64) -> String {
    if n.fract() == 0.0 {
        format!("{n:.0}")
    } else {
        round_half_up(n, 2)
    }
}

fn join3(v: [f64; 3]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Evaluates every study of the ledger and combines the results.
pub fn evaluate_ledger(
    ledger: &StudyLedger,
    mode: Mode,
    prior_odds: f64,
    exec: Execution,
) -> Result<Report> {
    if ledger.is_empty() {
        return Err(Error::Empty);
    }
    // Exact mode parallelizes inside the grid search; keep the outer loop
    // sequential there to avoid nesting.
    let outer = if mode == Mode::Exact {
        Execution::Sequential
    } else {
        exec
    };
    let rows = outer.map_slice(&ledger.studies, |study| -> Result<ReportRow> {
        let value = evidential_value_with(study, mode, DEFAULT_INFIMUM_TOL, exec)?;
        Ok(ReportRow {
            id: study.id.clone(),
            n: study.n,
            means: study.means,
            sds: study.sds,
            v_rendered: render_value(&value),
            z_v: z_v_statistic(study)?,
            z_c: z_c_statistic(study)?,
            case: value.case,
            mode,
            value,
            warnings: study.warnings(),
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let values: Vec<(String, EvidentialValue)> =
        rows.iter().map(|r| (r.id.clone(), r.value)).collect();
    let combined = combine(&values, prior_odds)?;
    let plain: Vec<EvidentialValue> = rows.iter().map(|r| r.value).collect();
    let share = empirical_exceedance(&plain, REFERENCE_THRESHOLD);
    let count = plain
        .iter()
        .filter(|v| v.at_least(REFERENCE_THRESHOLD))
        .count();
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        source: ledger.source.clone(),
        mode,
        exceedance: Exceedance {
            threshold: REFERENCE_THRESHOLD,
            count,
            total: rows.len(),
            share,
        },
        rows,
        combined,
        errors: Vec::new(),
    })
}

fn render_product(lower: Bound, upper: Bound) -> String {
    let fmt = |b: Bound| match b {
        Bound::Unbounded => "∞".to_string(),
        Bound::Finite(v) => format!("{v:.6e}"),
    };
    if lower == upper {
        fmt(lower)
    } else {
        format!("{} – {}", fmt(lower), fmt(upper))
    }
}

/// Human-readable table in the layout of the published tables, followed by
/// the combination footer and any notes.
pub fn render_table(report: &Report) -> String {
    let headers = [
        "Study",
        "n",
        "x1, x2, x3",
        "s1, s2, s3",
        "V",
        "Z_V",
        "Z_C",
        "case",
    ];
    let cells: Vec<[String; 8]> = report
        .rows
        .iter()
        .map(|r| {
            let marker = if r.warnings.is_empty() {
                ""
            } else {
                WARNING_MARKER
            };
            [
                format!("{}{marker}", r.id),
                render_n(r.n),
                join3(r.means),
                join3(r.sds),
                r.v_rendered.clone(),
                format!("{:.4}", r.z_v),
                format!("{:.4}", r.z_c),
                r.case.to_string(),
            ]
        })
        .collect();
    let mut widths = headers.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |fields: &[String]| -> String {
        let parts: Vec<String> = fields
            .iter()
            .zip(widths)
            .map(|(f, w)| format!("{f}{}", " ".repeat(w - f.chars().count())))
            .collect();
        parts.join(" | ").trim_end().to_string()
    };

    let mut out = String::new();
    let _ = writeln!(out, "mode: {}", report.mode);
    let head: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(out, "{}", line(&head));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("-+-"));
    for row in &cells {
        let _ = writeln!(out, "{}", line(row));
    }
    out.push('\n');
    let c = &report.combined;
    let _ = writeln!(
        out,
        "combined V (product over {} studies): {}",
        report.rows.len(),
        render_product(c.product_lower, c.product_upper)
    );
    let _ = writeln!(
        out,
        "posterior odds at prior odds {}: {}",
        c.prior_odds,
        render_product(c.posterior_odds_lower, c.posterior_odds_upper)
    );
    let e = &report.exceedance;
    let _ = writeln!(
        out,
        "studies with V >= {}: {}/{} ({:.4})",
        e.threshold, e.count, e.total, e.share
    );

    let noted: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| !r.warnings.is_empty())
        .collect();
    if !noted.is_empty() {
        let _ = writeln!(out, "\nnotes:");
        for r in noted {
            let text: Vec<String> = r.warnings.iter().map(|w| w.to_string()).collect();
            let _ = writeln!(
                out,
                "  {}{WARNING_MARKER} n = {}: {}",
                r.id,
                r.n,
                text.join("; ")
            );
        }
    }
    if !report.errors.is_empty() {
        let _ = writeln!(out, "\nskipped rows:");
        for e in &report.errors {
            let _ = writeln!(out, "  {e}");
        }
    }
    out
}

pub fn render_json(report: &Report) -> String {
    serde_json::to_string_pretty(report).expect("report is always serializable")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(3.9228, 2), "3.92");
        assert_eq!(round_half_up(2.675, 2), "2.68");
        assert_eq!(round_half_up(0.125, 2), "0.13");
        assert_eq!(round_half_up(9.995, 2), "10.00");
        assert_eq!(round_half_up(-1.005, 2), "-1.01");
        assert_eq!(round_half_up(-0.001, 2), "0.00");
        assert_eq!(round_half_up(4.0, 2), "4.00");
    }

    #[test]
    fn bound_rendering() {
        assert_eq!(render_bound(Bound::Finite(1.0)), "1");
        assert_eq!(render_bound(Bound::Finite(1.0014)), "1.001");
        assert_eq!(render_bound(Bound::Finite(1.0146)), "1.01");
        assert_eq!(render_bound(Bound::Unbounded), "∞");
    }

    #[test]
    fn value_rendering() {
        let iv = |lo, hi| EvidentialValue {
            lower: lo,
            upper: hi,
            case: Case::Below,
            mode: Mode::Paper,
        };
        assert_eq!(
            render_value(&iv(Bound::Finite(4.9476), Bound::Finite(9.4121))),
            "4.95–9.41"
        );
        assert_eq!(
            render_value(&iv(Bound::Finite(13.9492), Bound::Unbounded)),
            "13.95–∞"
        );
        assert_eq!(
            render_value(&iv(Bound::Finite(2.7173), Bound::Finite(2.7184))),
            "2.72"
        );
    }

    #[test]
    fn empty_ledger_is_rejected() {
        let ledger = StudyLedger::new(vec![], "empty").unwrap();
        assert_eq!(
            evaluate_ledger(&ledger, Mode::Paper, 1.0, Execution::Sequential),
            Err(Error::Empty)
        );
    }
}
