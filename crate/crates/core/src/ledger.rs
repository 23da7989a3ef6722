//! Study summaries and the ledgers that hold them.
//!
//! A ledger is read either from comma-delimited text with the fixed header
//! `id, n, x1, x2, x3, s1, s2, s3` or from a JSON document of the form
//! `{"source": "...", "studies": [{"id": "1", "n": 20, "means": [..], "sds": [..]}]}`.
//! In both formats the per-cell sample size may be written as a quotient
//! such as `141/6`, which is how pooled designs report it.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 8] = ["id", "n", "x1", "x2", "x3", "s1", "s2", "s3"];

/// Per-cell sample sizes below this are flagged; the normal approximation
/// for cell means is doubtful there.
pub const SMALL_N_WARNING: f64 = 5.0;

/// Summary statistics of one published three-cell study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub id: String,
    #[serde(deserialize_with = "deserialize_n")]
    pub n: f64,
    pub means: [f64; 3],
    pub sds: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    NonPositiveN,
    NonPositiveSd,
    NonFiniteMean,
    EmptyId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::NonPositiveN => "n must be positive",
            Violation::NonPositiveSd => "sds must be positive",
            Violation::NonFiniteMean => "means must be finite",
            Violation::EmptyId => "id must not be empty",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    NonIntegerN,
    SmallN,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Warning::NonIntegerN => "non-integer per-cell n (used as the exact quotient)",
            Warning::SmallN => "per-cell n below 5",
        })
    }
}

impl StudySummary {
    pub fn new(id: impl Into<String>, n: f64, means: [f64; 3], sds: [f64; 3]) -> Self {
        Self {
            id: id.into(),
            n,
            means,
            sds,
        }
    }

    /// Every violated invariant; empty when the study is admissible.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push(Violation::EmptyId);
        }
        if !(self.n.is_finite() && self.n > 0.0) {
            out.push(Violation::NonPositiveN);
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            out.push(Violation::NonFiniteMean);
        }
        if self.sds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            out.push(Violation::NonPositiveSd);
        }
        out
    }

    /// Validates and converts the first violation into an error carrying the id.
    pub fn check(&self) -> Result<()> {
        match self.validate().first() {
            None => Ok(()),
            Some(v) => Err(Error::Invalid {
                id: self.id.clone(),
                message: v.to_string(),
            }),
        }
    }

    pub fn warnings(&self) -> Vec<Warning> {
        let mut out = Vec::new();
        if self.n.fract() != 0.0 {
            out.push(Warning::NonIntegerN);
        }
        if self.n < SMALL_N_WARNING {
            out.push(Warning::SmallN);
        }
        out
    }

    /// The regression contrast x1 - 2 x2 + x3.
    pub fn contrast(&self) -> f64 {
        self.means[0] - 2.0 * self.means[1] + self.means[2]
    }
}

/// Free-standing form of [`StudySummary::validate`].
pub fn validate(study: &StudySummary) -> Vec<Violation> {
    study.validate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyLedger {
    pub studies: Vec<StudySummary>,
    #[serde(default)]
    pub source: String,
}

impl StudyLedger {
    pub fn new(studies: Vec<StudySummary>, source: impl Into<String>) -> Result<Self> {
        let ledger = Self {
            studies,
            source: source.into(),
        };
        ledger.check_unique_ids()?;
        Ok(ledger)
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.studies {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(())
    }

    /// Comma-delimited rendering with the mandatory header. Numbers use the
    /// shortest representation that reads back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for s in &self.studies {
            let nums = std::iter::once(s.n)
                .chain(s.means)
                .chain(s.sds)
                .map(|v| v.to_string());
            let record: Vec<String> = std::iter::once(s.id.clone()).chain(nums).collect();
            w.write_record(&record).expect("in-memory write");
        }
        let bytes = w.into_inner().expect("in-memory flush");
        let mut out = String::from_utf8(bytes).expect("utf-8 input yields utf-8 output");
        if !self.source.is_empty() {
            out.insert_str(0, &format!("# source: {}\n", self.source));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger is always serializable")
    }
}

/// Parses a per-cell sample size: a decimal or a quotient `a/b`.
pub fn parse_n(text: &str) -> std::result::Result<f64, String> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num
                .trim()
                .parse()
                .map_err(|_| format!("bad numerator in `{text}`"))?;
            let den: f64 = den
                .trim()
                .parse()
                .map_err(|_| format!("bad denominator in `{text}`"))?;
            if den == 0.0 {
                return Err(format!("zero denominator in `{text}`"));
            }
            num / den
        }
        None => text
            .parse::<f64>()
            .map_err(|_| format!("not a number: `{text}`"))?,
    };
    if !value.is_finite() {
        return Err(format!("not finite: `{text}`"));
    }
    Ok(value)
}

fn deserialize_n<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) => parse_n(&t).map_err(serde::de::Error::custom),
    }
}

fn parse_decimal(field: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("not a number: `{}`", field.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not finite: `{}`", field.trim()))
    }
}

/// Outcome of a lenient parse: the admissible rows plus one error per
/// rejected row.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub ledger: StudyLedger,
    pub errors: Vec<Error>,
}

/// Strict CSV parse: the first malformed or invalid row aborts.
pub fn parse_ledger(text: &str) -> Result<StudyLedger> {
    let outcome = parse_ledger_lenient(text)?;
    match outcome.errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(outcome.ledger),
    }
}

/// CSV parse that keeps going past bad rows. A missing or wrong header is
/// still fatal since no row can be interpreted without it.
pub fn parse_ledger_lenient(text: &str) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = loop {
        match records.next() {
            None => {
                return Err(Error::Malformed {
                    row: 1,
                    column: "header".into(),
                    message: "missing header row".into(),
                })
            }
            Some(Err(e)) => return Err(csv_error(e, 1)),
            Some(Ok(r)) if r.iter().all(str::is_empty) => continue,
            Some(Ok(r)) => break r,
        }
    };
    let header_row = header.position().map_or(1, |p| p.line() as usize);
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != HEADER {
        return Err(Error::Malformed {
            row: header_row,
            column: "header".into(),
            message: format!(
                "expected `{}`, found `{}`",
                HEADER.join(","),
                names.join(",")
            ),
        });
    }

    let mut studies: Vec<StudySummary> = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for record in records {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(csv_error(e, 0));
                continue;
            }
        };
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record.position().map_or(0, |p| p.line() as usize);
        match study_from_record(&record, row) {
            Ok(study) => {
                if let Err(e) = study.check() {
                    errors.push(e);
                } else if !seen.insert(study.id.clone()) {
                    errors.push(Error::DuplicateId(study.id));
                } else {
                    studies.push(study);
                }
            }
            Err(e) => errors.push(e),
        }
    }

    let source = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("# source:"))
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    Ok(ParseOutcome {
        ledger: StudyLedger { studies, source },
        errors,
    })
}

fn csv_error(e: csv::Error, fallback_row: usize) -> Error {
    let row = e.position().map_or(fallback_row, |p| p.line() as usize);
    Error::Malformed {
        row,
        column: "record".into(),
        message: e.to_string(),
    }
}

fn study_from_record(record: &csv::StringRecord, row: usize) -> Result<StudySummary> {
    if record.len() != HEADER.len() {
        return Err(Error::Malformed {
            row,
            column: HEADER.get(record.len()).unwrap_or(&"record").to_string(),
            message: format!("expected {} fields, found {}", HEADER.len(), record.len()),
        });
    }
    let field = |i: usize| -> Result<f64> {
        let parsed = if i == 1 {
            parse_n(&record[i])
        } else {
            parse_decimal(&record[i])
        };
        parsed.map_err(|message| Error::Malformed {
            row,
            column: HEADER[i].to_string(),
            message,
        })
    };
    let id = record[0].to_string();
    if id.is_empty() {
        return Err(Error::Malformed {
            row,
            column: "id".into(),
            message: "empty id".into(),
        });
    }
    Ok(StudySummary {
        id,
        n: field(1)?,
        means: [field(2)?, field(3)?, field(4)?],
        sds: [field(5)?, field(6)?, field(7)?],
    })
}

/// Parses the JSON ledger format. Every study is validated.
pub fn parse_structured(text: &str) -> Result<StudyLedger> {
    let ledger: StudyLedger =
        serde_json::from_str(text).map_err(|e| Error::Structured(e.to_string()))?;
    for s in &ledger.studies {
        s.check()?;
    }
    ledger.check_unique_ids()?;
    Ok(ledger)
}

fn looks_structured(text: &str) -> bool {
    text.trim_start().starts_with('{')
}

/// Reads a ledger file, dispatching on content: JSON when the document is
/// an object, CSV otherwise. Row-level problems are returned alongside the
/// admissible rows.
pub fn load_ledger(path: &Path) -> Result<ParseOutcome> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Malformed {
        row: 0,
        column: "file".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    let mut outcome = if looks_structured(&text) {
        ParseOutcome {
            ledger: parse_structured(&text)?,
            errors: Vec::new(),
        }
    } else {
        parse_ledger_lenient(&text)?
    };
    if outcome.ledger.source.is_empty() {
        outcome.ledger.source = path.display().to_string();
    }
    Ok(outcome)
}
