//! Per-iteration records and the metrics CSV
//! (`iter,traversed,loss,val_mrr,elapsed_s`).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Positive events traversed by all trainers up to and including this iteration.
    pub traversed: usize,
    /// Mean loss over the trainers that were active; NaN when none was.
    pub loss: f64,
    pub active: usize,
    pub events: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    /// Iterations completed.
    pub iter: usize,
    pub traversed: usize,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub val_mrr: Option<f64>,
    pub elapsed_s: f64,
}

pub const METRICS_HEADER: &str = "iter,traversed,loss,val_mrr,elapsed_s";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let mrr = r.val_mrr.map(|m| m.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{:.3}\n", r.iter, r.traversed, r.loss, mrr, r.elapsed_s));
    }
    s
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Drops the trailing `elapsed_s` column so runs can be compared byte for byte.
pub fn without_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = [
            MetricsRow { iter: 3, traversed: 300, loss: 0.5, val_mrr: Some(0.25), elapsed_s: 1.23456 },
            MetricsRow { iter: 6, traversed: 600, loss: 0.25, val_mrr: None, elapsed_s: 2.0 },
        ];
        let csv = metrics_csv(&rows);
        assert_eq!(csv, "iter,traversed,loss,val_mrr,elapsed_s\n3,300,0.5,0.25,1.235\n6,600,0.25,,2.000\n");
        assert_eq!(without_timing(&csv), "iter,traversed,loss,val_mrr\n3,300,0.5,0.25\n6,600,0.25,");
    }
}
