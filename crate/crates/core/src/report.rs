//! Machine-readable report files: ordered `key value` lines, one record per
//! line, UTF-8. Keys are dotted paths without spaces; the value is the rest
//! of the line. Floats use shortest round-trip formatting, so identical runs
//! produce byte-identical reports. Wall-clock times never enter reports.

use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

use crate::eval::{ClassMetrics, ComparisonTable};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report line: {0}")]
    BadLine(String),
    #[error("missing report key: {0}")]
    MissingKey(String),
    #[error("bad value for {key}: {value}")]
    BadValue { key: String, value: String },
}

/// Ordered key-value record list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        debug_assert!(!key.contains(' '), "report keys must not contain spaces");
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ReportError> {
        self.get(key)
            .ok_or_else(|| ReportError::MissingKey(key.to_string()))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, ReportError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| ReportError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
        })
    }

    pub fn require_usize(&self, key: &str) -> Result<usize, ReportError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| ReportError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
        })
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push(' ');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ReportError> {
        let mut entries = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| ReportError::BadLine(line.to_string()))?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Report { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Renders an evaluation into a report: accuracy, macro-F1, then per-class
/// precision/recall/F1 keyed by class id and name.
pub fn metrics_report(
    scheme: &str,
    param_count: usize,
    epochs: usize,
    class_names: &[String],
    m: &ClassMetrics,
) -> Report {
    let mut r = Report::new();
    r.push("report.kind", "eval");
    r.push("report.version", 1);
    r.push("scheme", scheme);
    r.push("params", param_count);
    r.push("epochs", epochs);
    r.push("accuracy", m.accuracy);
    r.push("macro_f1", m.macro_f1);
    r.push("classes", m.per_class.len());
    for (c, pc) in m.per_class.iter().enumerate() {
        let name = class_names.get(c).map(String::as_str).unwrap_or("?");
        r.push(&format!("class.{c}.name"), name);
        r.push(&format!("class.{c}.precision"), pc.precision);
        r.push(&format!("class.{c}.recall"), pc.recall);
        r.push(&format!("class.{c}.f1"), pc.f1);
        r.push(&format!("class.{c}.accuracy"), pc.accuracy);
    }
    r
}

/// Reads back the (scheme, params, epochs, metrics) tuple that
/// [`metrics_report`] wrote, for the comparison command.
pub fn parse_metrics_report(
    r: &Report,
) -> Result<(String, usize, usize, ClassMetrics), ReportError> {
    use crate::eval::PerClassMetrics;
    let scheme = r.require("scheme")?.to_string();
    let params = r.require_usize("params")?;
    let epochs = r.require_usize("epochs")?;
    let accuracy = r.require_f64("accuracy")?;
    let macro_f1 = r.require_f64("macro_f1")?;
    let classes = r.require_usize("classes")?;
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        per_class.push(PerClassMetrics {
            precision: r.require_f64(&format!("class.{c}.precision"))?,
            recall: r.require_f64(&format!("class.{c}.recall"))?,
            f1: r.require_f64(&format!("class.{c}.f1"))?,
            accuracy: r.require_f64(&format!("class.{c}.accuracy"))?,
        });
    }
    Ok((
        scheme,
        params,
        epochs,
        ClassMetrics {
            per_class,
            accuracy,
            macro_f1,
        },
    ))
}

/// Renders a comparison table into a report (raw values, full precision).
pub fn comparison_report(table: &ComparisonTable) -> Report {
    let mut r = Report::new();
    r.push("report.kind", "compare");
    r.push("report.version", 1);
    r.push("rows", table.rows.len());
    r.push("classes", table.class_count);
    for (i, row) in table.rows.iter().enumerate() {
        r.push(&format!("row.{i}.scheme"), &row.scheme);
        r.push(&format!("row.{i}.params"), row.param_count);
        r.push(&format!("row.{i}.epochs"), row.epochs);
        r.push(&format!("row.{i}.accuracy"), row.accuracy);
        r.push(&format!("row.{i}.best"), row.best_accuracy);
        for (c, f1) in row.per_class_f1.iter().enumerate() {
            r.push(&format!("row.{i}.f1.{c}"), f1);
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{confusion, metrics};

    #[test]
    fn text_round_trip_is_identity() {
        let mut r = Report::new();
        r.push("a", 1);
        r.push("b.c", 0.1f64 + 0.2);
        r.push("name", "hello world");
        let back = Report::from_text(&r.to_text()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn float_round_trip_is_exact() {
        let mut r = Report::new();
        let x = 0.96428571428571430157f64;
        r.push("x", x);
        let back = Report::from_text(&r.to_text()).unwrap();
        assert_eq!(back.require_f64("x").unwrap(), x);
    }

    #[test]
    fn metrics_report_round_trips() {
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        let m = metrics(&cm);
        let names = vec!["web".to_string(), "dns".to_string()];
        let r = metrics_report("fs", 1234, 7, &names, &m);
        let (scheme, params, epochs, m2) = parse_metrics_report(&r).unwrap();
        assert_eq!(scheme, "fs");
        assert_eq!(params, 1234);
        assert_eq!(epochs, 7);
        assert_eq!(m, m2);
    }

    #[test]
    fn missing_key_is_reported() {
        let r = Report::from_text("a 1\n").unwrap();
        assert!(matches!(r.require("b"), Err(ReportError::MissingKey(_))));
    }
}
