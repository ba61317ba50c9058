//! Accuracy measures and the metrics log.
//!
//! In-context accuracy restricts the argmax to the two labels present in
//! context, which fixes chance at 0.5 for every evaluator that uses it.
//! Plain accuracy is the unrestricted argmax (chance 1/C). Ties break toward
//! the lowest label id.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::data::{EvalKind, LabelId, Sequence};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Argmax over `candidates` into a logit row; ties pick the lowest label id.
pub fn restricted_argmax<T: Scalar>(row: &[T], candidates: &[LabelId]) -> LabelId {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if row[c] > row[best] || (row[c] == row[best] && c < best) {
            best = c;
        }
    }
    best
}

/// Fraction of rows whose restricted argmax over the two context labels hits
/// the target. Errors when a target is not among its context labels.
pub fn in_context_accuracy<T: Scalar>(
    logits: &Tensor<T>,
    items: &[([LabelId; 2], LabelId)],
) -> Result<f64> {
    if logits.rows() != items.len() {
        return Err(Error::ShapeMismatch {
            op: "in_context_accuracy",
            detail: format!("{} rows vs {} items", logits.rows(), items.len()),
        });
    }
    let cols = logits.cols();
    let mut hits = 0usize;
    for (i, (labels, target)) in items.iter().enumerate() {
        if !labels.contains(target) {
            return Err(Error::invalid(format!(
                "target {target} not among context labels {labels:?}"
            )));
        }
        let row = &logits.data()[i * cols..(i + 1) * cols];
        let mut cands = [labels[0], labels[1]];
        cands.sort_unstable();
        if restricted_argmax(row, &cands) == *target {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}

/// Unrestricted argmax match rate; ties break toward index 0.
pub fn plain_accuracy<T: Scalar>(logits: &Tensor<T>, targets: &[LabelId]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "plain_accuracy",
            detail: format!("{} rows vs {} targets", logits.rows(), targets.len()),
        });
    }
    let cols = logits.cols();
    let mut hits = 0usize;
    for (i, &target) in targets.iter().enumerate() {
        let row = &logits.data()[i * cols..(i + 1) * cols];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        if best == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / targets.len() as f64)
}

/// Mean cross-entropy of logit rows against targets (no tape involved).
pub fn mean_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[LabelId]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "mean_cross_entropy",
            detail: format!("{} rows vs {} targets", logits.rows(), targets.len()),
        });
    }
    let cols = logits.cols();
    let mut total = 0.0f64;
    for (i, &target) in targets.iter().enumerate() {
        let row = &logits.data()[i * cols..(i + 1) * cols];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
        let lse: f64 = row.iter().map(|&v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[target].as_f64();
    }
    Ok(total / targets.len() as f64)
}

/// Which answer key an evaluator is scored against.
pub fn score_target(kind: EvalKind, seq: &Sequence) -> LabelId {
    match kind {
        EvalKind::EvalIcl | EvalKind::EvalFlip | EvalKind::IclOnly => {
            seq.answer_icl.expect("icl answer")
        }
        EvalKind::EvalCiwl | EvalKind::CiwlOnly => seq.answer_ciwl.expect("ciwl answer"),
        _ => seq.answer_train,
    }
}

/// Whether the evaluator is scored by restricted (in-context) accuracy.
pub fn uses_in_context(kind: EvalKind) -> bool {
    !matches!(kind, EvalKind::EvalIwl)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub sequences_seen: u64,
    pub evaluator: String,
    pub metric: String,
    pub value: f64,
}

/// Long-format metrics log, one row per (step, evaluator, metric).
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "step,sequences_seen,evaluator,metric,value";

impl MetricsLog {
    pub fn new() -> Self {
        MetricsLog { rows: Vec::new() }
    }

    pub fn push(&mut self, step: u64, sequences_seen: u64, evaluator: &str, metric: &str, value: f64) {
        self.rows.push(MetricsRow {
            step,
            sequences_seen,
            evaluator: evaluator.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    /// (sequences_seen, value) series for one evaluator/metric pair.
    pub fn series(&self, evaluator: &str, metric: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.evaluator == evaluator && r.metric == metric)
            .map(|r| (r.sequences_seen, r.value))
            .collect()
    }

    pub fn steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = self.rows.iter().map(|r| r.step).collect();
        steps.dedup();
        steps
    }

    /// Drop rows past a step (used when resuming from a checkpoint).
    pub fn truncate_after(&mut self, step: u64) {
        self.rows.retain(|r| r.step <= step);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("csv.tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            writeln!(f, "{METRICS_HEADER}")?;
            for r in &self.rows {
                writeln!(
                    f,
                    "{},{},{},{},{}",
                    r.step, r.sequences_seen, r.evaluator, r.metric, r.value
                )?;
            }
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut rows = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != METRICS_HEADER {
                    return Err(Error::invalid(format!("bad metrics header: {line}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.splitn(5, ',').collect();
            if parts.len() != 5 {
                return Err(Error::invalid(format!("bad metrics row: {line}")));
            }
            rows.push(MetricsRow {
                step: parts[0].parse().map_err(|_| Error::invalid("bad step"))?,
                sequences_seen: parts[1].parse().map_err(|_| Error::invalid("bad sequences"))?,
                evaluator: parts[2].to_string(),
                metric: parts[3].to_string(),
                value: parts[4].parse().map_err(|_| Error::invalid("bad value"))?,
            });
        }
        Ok(MetricsLog { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restricted_argmax_prefers_larger_then_lower_id() {
        let row = [0.0f64, 2.0, 1.0, 2.0];
        assert_eq!(restricted_argmax(&row, &[1, 2]), 1);
        assert_eq!(restricted_argmax(&row, &[1, 3]), 1); // tie -> lower id
        assert_eq!(restricted_argmax(&row, &[2, 3]), 3);
    }

    #[test]
    fn in_context_accuracy_scores_and_validates() {
        let logits = Tensor::from_vec(&[2, 4], vec![0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0]).unwrap();
        let items = [([1usize, 3], 1usize), ([1, 3], 3)];
        assert_eq!(in_context_accuracy(&logits, &items).unwrap(), 1.0);
        let bad = [([1usize, 3], 2usize)];
        let one = Tensor::from_vec(&[1, 4], vec![0.0; 4]).unwrap();
        assert!(in_context_accuracy(&one, &bad).is_err());
    }

    #[test]
    fn plain_accuracy_one_hot_and_tie_break() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.0f64, 3.0, 1.0]).unwrap();
        assert_eq!(plain_accuracy(&logits, &[1]).unwrap(), 1.0);
        // uniform logits: lowest index wins by documented tie-break
        let uniform = Tensor::from_vec(&[1, 3], vec![0.5f64, 0.5, 0.5]).unwrap();
        assert_eq!(plain_accuracy(&uniform, &[0]).unwrap(), 1.0);
        assert_eq!(plain_accuracy(&uniform, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_matches_closed_form() {
        let logits = Tensor::from_vec(&[1, 2], vec![1.0f64, 0.0]).unwrap();
        let ce = mean_cross_entropy(&logits, &[0]).unwrap();
        assert!((ce - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let mut log = MetricsLog::new();
        log.push(0, 0, "eval_icl", "in_context_accuracy", 0.5);
        log.push(100, 3200, "eval_flip", "loss", 9.45);
        let dir = std::env::temp_dir().join("coopetition_metrics_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.csv");
        log.write_csv(&path).unwrap();
        let back = MetricsLog::read_csv(&path).unwrap();
        assert_eq!(back.rows, log.rows);
        std::fs::remove_dir_all(&dir).ok();
    }
}
