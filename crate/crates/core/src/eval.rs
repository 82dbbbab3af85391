//! Confusion matrices, per-class precision/recall/F1, micro accuracy, and
//! the scheme-comparison table.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("label lists have different lengths: {truth} vs {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(usize, usize),
    #[error("comparison requires at least 2 reports, got {0}")]
    NotEnoughReports(usize),
    #[error("corrupt confusion matrix text: {0}")]
    BadMatrixText(String),
}

/// K x K counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn class_count(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Text form: first line is K, then K rows of K space-separated counts.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.k);
        for t in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|p| self.get(t, p).to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines();
        let k: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| EvalError::BadMatrixText("missing class count".into()))?;
        let mut counts = Vec::with_capacity(k * k);
        for _ in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| EvalError::BadMatrixText("missing row".into()))?;
            for cell in line.split_whitespace() {
                counts.push(
                    cell.parse()
                        .map_err(|_| EvalError::BadMatrixText(format!("bad count `{cell}`")))?,
                );
            }
        }
        if counts.len() != k * k {
            return Err(EvalError::BadMatrixText(format!(
                "expected {} counts, found {}",
                k * k,
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { k, counts })
    }
}

/// Tallies (true, predicted) label pairs into a K x K matrix.
pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in truth.iter().zip(pred.iter()) {
        if t >= k {
            return Err(EvalError::LabelOutOfRange(t, k));
        }
        if p >= k {
            return Err(EvalError::LabelOutOfRange(p, k));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// One-vs-rest metrics for a single class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// (TP + TN) / total for this class's one-vs-rest split.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub per_class: Vec<PerClassMetrics>,
    /// Micro accuracy: trace / total.
    pub accuracy: f64,
    pub macro_f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall, F1, and accuracy per class (zero denominators yield 0),
/// plus micro accuracy and macro-F1.
pub fn metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let k = cm.class_count();
    let total = cm.total() as f64;
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c) as f64;
        let fp = (0..k).filter(|&t| t != c).map(|t| cm.get(t, c)).sum::<u64>() as f64;
        let fn_ = (0..k).filter(|&p| p != c).map(|p| cm.get(c, p)).sum::<u64>() as f64;
        let tn = total - tp - fp - fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        let accuracy = ratio(tp + tn, total);
        per_class.push(PerClassMetrics {
            precision,
            recall,
            f1,
            accuracy,
        });
    }
    let accuracy = ratio(cm.trace() as f64, total);
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    ClassMetrics {
        per_class,
        accuracy,
        macro_f1,
    }
}

/// F1 from precision and recall directly (the table-rendering formula).
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

/// One comparison row: a scheme tag with its cost and quality numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub scheme: String,
    pub param_count: usize,
    pub epochs: usize,
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    pub best_accuracy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<CompareRow>,
    pub class_count: usize,
}

/// Builds the scheme-comparison table from (tag, parameter count, epoch
/// count, metrics) tuples. Rows keep input order; per-class columns align by
/// class id; the maximum accuracy is marked.
pub fn compare_runs(
    reports: &[(String, usize, usize, ClassMetrics)],
) -> Result<ComparisonTable, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::NotEnoughReports(reports.len()));
    }
    let class_count = reports[0].3.per_class.len();
    let best = reports
        .iter()
        .map(|r| r.3.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let rows = reports
        .iter()
        .map(|(scheme, params, epochs, m)| CompareRow {
            scheme: scheme.clone(),
            param_count: *params,
            epochs: *epochs,
            accuracy: m.accuracy,
            per_class_f1: m.per_class.iter().map(|p| p.f1).collect(),
            best_accuracy: m.accuracy == best,
        })
        .collect();
    Ok(ComparisonTable { rows, class_count })
}

impl ComparisonTable {
    /// Plain-text rendering; F1 columns use 2 decimal places like the summary
    /// tables this mirrors, raw values stay in the machine report.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>11} {:>7} {:>8}",
            "scheme", "#params", "epochs", "acc"
        ));
        for c in 0..self.class_count {
            out.push_str(&format!(" {:>5}", format!("F1:{c}")));
        }
        out.push('\n');
        for row in &self.rows {
            let marker = if row.best_accuracy { "*" } else { " " };
            out.push_str(&format!(
                "{:<14} {:>11} {:>7} {:>7.2}{}",
                row.scheme,
                row.param_count,
                row.epochs,
                100.0 * row.accuracy,
                marker
            ));
            for f1 in &row.per_class_f1 {
                out.push_str(&format!(" {:>5.2}", f1));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let y = vec![0, 1, 2, 1, 0];
        let cm = confusion(&y, &y, 3).unwrap();
        assert_eq!(cm.trace(), 5);
        assert_eq!(cm.total(), 5);
        let m = metrics(&cm);
        assert_eq!(m.accuracy, 1.0);
        for pc in &m.per_class {
            assert_eq!(pc.precision, 1.0);
            assert_eq!(pc.recall, 1.0);
            assert_eq!(pc.f1, 1.0);
        }
    }

    #[test]
    fn all_predicted_class_zero_fills_one_column() {
        let truth = vec![0, 1, 2];
        let pred = vec![0, 0, 0];
        let cm = confusion(&truth, &pred, 3).unwrap();
        for t in 0..3 {
            assert_eq!(cm.get(t, 0), 1);
            assert_eq!(cm.get(t, 1), 0);
            assert_eq!(cm.get(t, 2), 0);
        }
    }

    #[test]
    fn three_flow_example() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(cm.get(0, 0), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.get(1, 0), 1);
    }

    #[test]
    fn length_and_range_errors() {
        assert_eq!(
            confusion(&[0], &[0, 1], 2).unwrap_err(),
            EvalError::LengthMismatch { truth: 1, pred: 2 }
        );
        assert_eq!(
            confusion(&[5], &[0], 2).unwrap_err(),
            EvalError::LabelOutOfRange(5, 2)
        );
    }

    #[test]
    fn f1_of_paper_table_row() {
        // Precision .82 and recall .57 round to .67 with 2 decimals.
        let f1 = f1_score(0.82, 0.57);
        assert!((f1 - 0.6726).abs() < 1e-3);
        assert_eq!(format!("{f1:.2}"), "0.67");
    }

    #[test]
    fn f1_is_symmetric_and_equals_x_when_p_equals_r() {
        assert!((f1_score(0.4, 0.9) - f1_score(0.9, 0.4)).abs() < 1e-15);
        for x in [0.1, 0.5, 0.93] {
            assert!((f1_score(x, x) - x).abs() < 1e-15);
        }
    }

    #[test]
    fn absent_class_gets_zero_metrics() {
        // Class 2 never true and never predicted.
        let cm = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let m = metrics(&cm);
        assert_eq!(m.per_class[2].precision, 0.0);
        assert_eq!(m.per_class[2].recall, 0.0);
        assert_eq!(m.per_class[2].f1, 0.0);
    }

    #[test]
    fn micro_accuracy_is_trace_over_total() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        let m = metrics(&cm);
        assert_eq!(m.accuracy, 3.0 / 4.0);
        assert_eq!(m.accuracy, cm.trace() as f64 / cm.total() as f64);
    }

    #[test]
    fn matrix_text_round_trip_preserves_metrics() {
        let cm = confusion(&[0, 1, 1, 2, 2, 2], &[0, 1, 0, 2, 2, 1], 3).unwrap();
        let back = ConfusionMatrix::from_text(&cm.to_text()).unwrap();
        assert_eq!(cm, back);
        assert_eq!(metrics(&cm), metrics(&back));
    }

    fn dummy_metrics(acc: f64, f1s: &[f64]) -> ClassMetrics {
        ClassMetrics {
            per_class: f1s
                .iter()
                .map(|&f1| PerClassMetrics {
                    precision: f1,
                    recall: f1,
                    f1,
                    accuracy: acc,
                })
                .collect(),
            accuracy: acc,
            macro_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        }
    }

    #[test]
    fn comparison_marks_best_and_keeps_rows() {
        let reports = vec![
            ("actual".to_string(), 1000, 10, dummy_metrics(0.90, &[0.9, 0.8])),
            ("augmented".to_string(), 1000, 10, dummy_metrics(0.94, &[0.95, 0.9])),
        ];
        let table = compare_runs(&reports).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(!table.rows[0].best_accuracy);
        assert!(table.rows[1].best_accuracy);
        let text = table.render_text();
        assert!(text.contains("augmented"));
        assert!(text.contains('*'));
    }

    #[test]
    fn single_report_is_rejected() {
        let reports = vec![("only".to_string(), 1, 1, dummy_metrics(0.5, &[0.5]))];
        assert_eq!(
            compare_runs(&reports).unwrap_err(),
            EvalError::NotEnoughReports(1)
        );
    }

    #[test]
    fn per_class_columns_align_by_class_id() {
        let a = dummy_metrics(0.8, &[0.1, 0.2, 0.3]);
        let b = dummy_metrics(0.9, &[0.7, 0.8, 0.9]);
        let t1 = compare_runs(&[
            ("a".to_string(), 1, 1, a.clone()),
            ("b".to_string(), 1, 1, b.clone()),
        ])
        .unwrap();
        let t2 = compare_runs(&[
            ("b".to_string(), 1, 1, b),
            ("a".to_string(), 1, 1, a),
        ])
        .unwrap();
        let row_a1 = t1.rows.iter().find(|r| r.scheme == "a").unwrap();
        let row_a2 = t2.rows.iter().find(|r| r.scheme == "a").unwrap();
        assert_eq!(row_a1.per_class_f1, row_a2.per_class_f1);
    }
}
