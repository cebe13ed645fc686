//! Confusion matrices, per-class precision/recall/F1 and macro-F1.
//!
//! Zero denominators give a score of 0. Classes that never occur in either
//! the gold labels or the predictions are left out of the macro average.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("label {label} out of range for task {task}")]
    UnknownLabel { task: TaskId, label: usize },
    #[error("nothing scored: no class occurs in gold labels or predictions")]
    NothingScored,
    #[error("no reports to compare")]
    NoReports,
    #[error("cannot compare reports for different tasks ({0} and {1})")]
    MixedTasks(TaskId, TaskId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub task: TaskId,
    /// `counts[gold][predicted]` in label order.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(task: TaskId) -> Self {
        let c = task.num_classes();
        ConfusionMatrix {
            task,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn from_counts(task: TaskId, counts: Vec<Vec<u64>>) -> Self {
        let c = task.num_classes();
        assert!(
            counts.len() == c && counts.iter().all(|r| r.len() == c),
            "confusion matrix for task {task} must be {c}x{c}"
        );
        ConfusionMatrix { task, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn gold_count(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    fn predicted_count(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Element-wise sum; scoring the merged matrix equals scoring the
    /// concatenated predictions.
    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        assert_eq!(self.task, other.task, "merging matrices of different tasks");
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        ConfusionMatrix { task: self.task, counts }
    }
}

pub fn confusion(golds: &[usize], preds: &[usize], task: TaskId) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let c = task.num_classes();
    let mut m = ConfusionMatrix::zeros(task);
    for (&g, &p) in golds.iter().zip(preds) {
        for label in [g, p] {
            if label >= c {
                return Err(EvalError::UnknownLabel { task, label });
            }
        }
        m.counts[g][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Whether the class counts toward the macro average.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskId,
    pub classes: Vec<ClassMetrics>,
    /// `None` when no class occurs at all.
    pub macro_f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report(matrix: &ConfusionMatrix) -> MetricsReport {
    let task = matrix.task;
    let classes: Vec<ClassMetrics> = (0..task.num_classes())
        .map(|c| {
            let tp = matrix.counts[c][c];
            let gold = matrix.gold_count(c);
            let predicted = matrix.predicted_count(c);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, gold);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: task.label_name(c).to_string(),
                precision,
                recall,
                f1,
                support: gold,
                included: gold > 0 || predicted > 0,
            }
        })
        .collect();
    let included: Vec<f64> = classes.iter().filter(|c| c.included).map(|c| c.f1).collect();
    let macro_f1 = (!included.is_empty()).then(|| included.iter().sum::<f64>() / included.len() as f64);
    MetricsReport {
        task,
        classes,
        macro_f1,
    }
}

/// Unweighted mean F1 over the classes that occur.
pub fn macro_f1(matrix: &ConfusionMatrix) -> Result<f64, EvalError> {
    report(matrix).macro_f1.ok_or(EvalError::NothingScored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Tsv,
}

/// Four decimals, ties to even.
pub fn format_score(x: f64) -> String {
    format!("{x:.4}")
}

/// One row per run (per-class F1 and macro-F1) plus an `Average` row.
pub fn compare_runs(reports: &[(String, MetricsReport)], format: TableFormat) -> Result<String, EvalError> {
    let (_, first) = reports.first().ok_or(EvalError::NoReports)?;
    let task = first.task;
    if let Some((_, r)) = reports.iter().find(|(_, r)| r.task != task) {
        return Err(EvalError::MixedTasks(task, r.task));
    }

    let mut header = vec!["run".to_string()];
    header.extend(task.labels().iter().map(|l| format!("F1_{l}")));
    header.push("macro_F1".to_string());

    let columns = task.num_classes() + 1;
    let mut sums = vec![0.0; columns];
    let mut counts = vec![0usize; columns];
    let mut rows = Vec::with_capacity(reports.len() + 1);
    for (name, r) in reports {
        let mut row = vec![name.clone()];
        let values = r
            .classes
            .iter()
            .map(|c| c.included.then_some(c.f1))
            .chain(std::iter::once(r.macro_f1));
        for (i, v) in values.enumerate() {
            match v {
                Some(v) => {
                    sums[i] += v;
                    counts[i] += 1;
                    row.push(format_score(v));
                }
                None => row.push("-".to_string()),
            }
        }
        rows.push(row);
    }
    let mut avg = vec!["Average".to_string()];
    avg.extend(sums.iter().zip(&counts).map(|(&s, &n)| {
        if n == 0 {
            "-".to_string()
        } else {
            format_score(s / n as f64)
        }
    }));
    rows.push(avg);

    let mut out = String::new();
    match format {
        TableFormat::Tsv => {
            for row in std::iter::once(&header).chain(&rows) {
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        }
        TableFormat::Text => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| {
                    std::iter::once(&header)
                        .chain(&rows)
                        .map(|r| r[i].chars().count())
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |row: &[String], out: &mut String| {
                let cells: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (cell, &w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                    .collect();
                let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            };
            line(&header, &mut out);
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(rule));
            let (avg, runs) = rows.split_last().expect("average row");
            for r in runs {
                line(r, &mut out);
            }
            let _ = writeln!(out, "{}", "-".repeat(rule));
            line(avg, &mut out);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_tsv;
    use proptest::prelude::*;

    fn m2(counts: [[u64; 2]; 2]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(TaskId::A, counts.iter().map(|r| r.to_vec()).collect())
    }

    #[test]
    fn confusion_counts() {
        let m = confusion(&[0, 0, 1, 1], &[0, 1, 0, 1], TaskId::A).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![1, 1]]);
        let m = confusion(&[0, 1, 1], &[0, 1, 1], TaskId::A).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0], vec![0, 2]]);
        assert_eq!(confusion(&[], &[], TaskId::C).unwrap(), ConfusionMatrix::zeros(TaskId::C));
        assert!(matches!(confusion(&[0], &[], TaskId::A), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[0], &[2], TaskId::A), Err(EvalError::UnknownLabel { .. })));
    }

    #[test]
    fn golden_values() {
        assert_eq!(macro_f1(&m2([[3, 0], [0, 5]])).unwrap(), 1.0);
        let v = macro_f1(&m2([[2, 1], [1, 2]])).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(format_score(v), "0.6667");
        // Balanced golds, everything predicted class 0: class 0 has P = 1/2,
        // R = 1, F1 = 2/3; class 1 has F1 = 0.
        let v = macro_f1(&m2([[2, 0], [2, 0]])).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let m = ConfusionMatrix::from_counts(TaskId::C, vec![vec![4, 0, 0], vec![0, 2, 0], vec![0, 0, 0]]);
        let r = report(&m);
        assert_eq!(r.macro_f1, Some(1.0));
        assert!(!r.classes[2].included);
        assert!(matches!(macro_f1(&ConfusionMatrix::zeros(TaskId::A)), Err(EvalError::NothingScored)));
    }

    #[test]
    fn report_consistency() {
        let m = ConfusionMatrix::from_counts(TaskId::C, vec![vec![4, 1, 0], vec![2, 2, 1], vec![0, 3, 1]]);
        let r = report(&m);
        assert_eq!(r.classes.len(), 3);
        assert_eq!(r.macro_f1.unwrap(), macro_f1(&m).unwrap());
        let supports: Vec<u64> = r.classes.iter().map(|c| c.support).collect();
        assert_eq!(supports, vec![5, 5, 4]);
        assert_eq!(r.classes[0].label, "IND");
    }

    #[test]
    fn rounding_is_half_even_on_exact_value() {
        assert_eq!(format_score(0.5), "0.5000");
        assert_eq!(format_score(1.0), "1.0000");
        // 0.00005 is stored slightly above the tie, so it rounds up.
        assert_eq!(format_score(0.00005), "0.0001");
        assert_eq!(format!("{:.2}", 0.125), "0.12");
    }

    fn runs(n: usize) -> Vec<(String, MetricsReport)> {
        (0..n)
            .map(|i| {
                let m = m2([[2 + i as u64, 1], [1, 2]]);
                (format!("seed{i}"), report(&m))
            })
            .collect()
    }

    #[test]
    fn comparison_tables() {
        let t = compare_runs(&runs(5), TableFormat::Text).unwrap();
        assert_eq!(t.lines().count(), 1 + 1 + 5 + 1 + 1);
        assert!(t.lines().last().unwrap().starts_with("Average"));

        let single = runs(1);
        let tsv = compare_runs(&single, TableFormat::Tsv).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 3);
        let row: Vec<&str> = lines[1].split('\t').collect();
        let avg: Vec<&str> = lines[2].split('\t').collect();
        assert_eq!(row[1..], avg[1..]);
        assert!(matches!(compare_runs(&[], TableFormat::Tsv), Err(EvalError::NoReports)));
    }

    #[test]
    fn tsv_round_trips_through_reader() {
        let tsv = compare_runs(&runs(3), TableFormat::Tsv).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.tsv");
        std::fs::write(&path, &tsv).unwrap();
        let table = read_tsv(&path).unwrap();
        assert_eq!(table.header, vec!["run", "F1_OFF", "F1_NOT", "macro_F1"]);
        assert_eq!(table.rows.len(), 4);
        let mean = table.column("macro_F1").unwrap();
        assert_eq!(table.rows[0].fields[mean], "0.6667");
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..3, 0usize..3), 1..60)
    }

    proptest! {
        #[test]
        fn permutation_invariance(pairs in arb_pairs(), perm in Just([0usize, 1, 2]).prop_shuffle()) {
            let (g, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let a = macro_f1(&confusion(&g, &p, TaskId::C).unwrap()).unwrap();
            let g2: Vec<_> = g.iter().map(|&x| perm[x]).collect();
            let p2: Vec<_> = p.iter().map(|&x| perm[x]).collect();
            let b = macro_f1(&confusion(&g2, &p2, TaskId::C).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn merge_equals_concatenation(a in arb_pairs(), b in arb_pairs()) {
            let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
            let (ga, pa) = split(&a);
            let (gb, pb) = split(&b);
            let merged = confusion(&ga, &pa, TaskId::C).unwrap().merge(&confusion(&gb, &pb, TaskId::C).unwrap());
            let all: Vec<_> = a.iter().chain(&b).copied().collect();
            let (g, p) = split(&all);
            prop_assert_eq!(&merged, &confusion(&g, &p, TaskId::C).unwrap());
            prop_assert_eq!(macro_f1(&merged).unwrap(), macro_f1(&confusion(&g, &p, TaskId::C).unwrap()).unwrap());
        }

        #[test]
        fn binary_bounds(pairs in prop::collection::vec((0usize..2, 0usize..2), 2..40)) {
            let (g, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            prop_assume!(g.contains(&0) && g.contains(&1));
            let m = confusion(&g, &p, TaskId::A).unwrap();
            let v = macro_f1(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let diagonal = m.counts[0][1] == 0 && m.counts[1][0] == 0;
            prop_assert_eq!(v == 1.0, diagonal);
        }
    }
}
