//! Performance metrics and their CSV renderings.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::config::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Per transaction: signature, policy and content checks.
    VerificationTime,
    /// Per transaction: folding into the dynamic block and agreeing on it.
    ValidationTime,
    /// Per request: validators' receipt until the proposer has its answer.
    TimeOverhead,
    /// Per decision-partition block.
    BlockProcessingTime,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::VerificationTime => "verification_time",
            Metric::ValidationTime => "validation_time",
            Metric::TimeOverhead => "time_overhead",
            Metric::BlockProcessingTime => "block_processing_time",
        }
    }

    pub fn per_block(self) -> bool {
        self == Metric::BlockProcessingTime
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One measurement, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub mode: Mode,
    pub seed: u64,
    /// Transaction kind, or `block`.
    pub kind: String,
    pub metric: Metric,
    pub value: f64,
}

pub const METRICS_HEADER: &str = "mode,seed,kind,metric,value";

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{:.6}\n", r.mode, r.seed, r.kind, r.metric, r.value));
    }
    out
}

/// Mean and spread of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub kind: String,
    pub metric: Metric,
    /// Runs (seeds) contributing.
    pub runs: usize,
    /// Mean of the per-run means.
    pub mean: f64,
    /// Sample standard deviation of the per-run means.
    pub stdev: f64,
}

/// Averages each run first, then reports mean and standard deviation across
/// runs.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    type Key = (Mode, String, Metric);
    let mut per_run: BTreeMap<Key, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in records {
        let e = per_run
            .entry((r.mode, r.kind.clone(), r.metric))
            .or_default()
            .entry(r.seed)
            .or_default();
        e.0 += r.value;
        e.1 += 1;
    }
    per_run
        .into_iter()
        .map(|((mode, kind, metric), runs)| {
            let means: Vec<f64> = runs.values().map(|(s, n)| s / *n as f64).collect();
            let (mean, stdev) = mean_stdev(&means);
            SummaryRow {
                mode,
                kind,
                metric,
                runs: means.len(),
                mean,
                stdev,
            }
        })
        .collect()
}

pub fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const SUMMARY_HEADER: &str = "mode,kind,metric,runs,mean,stdev";

fn summary_csv(rows: impl Iterator<Item = SummaryRow>) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6}\n",
            r.mode, r.kind, r.metric, r.runs, r.mean, r.stdev
        ));
    }
    out
}

/// Per-transaction and per-block summary CSVs.
pub fn emit_metrics(records: &[MetricsRecord]) -> (String, String) {
    let rows = summarize(records);
    let tx = summary_csv(rows.iter().filter(|r| !r.metric.per_block()).cloned());
    let block = summary_csv(rows.into_iter().filter(|r| r.metric.per_block()));
    (tx, block)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, kind: &str, metric: Metric, value: f64) -> MetricsRecord {
        MetricsRecord {
            mode: Mode::Bfica,
            seed,
            kind: kind.into(),
            metric,
            value,
        }
    }

    #[test]
    fn empty_is_header_only() {
        assert_eq!(metrics_csv(&[]), "mode,seed,kind,metric,value\n");
        let (tx, block) = emit_metrics(&[]);
        assert_eq!(tx, "mode,kind,metric,runs,mean,stdev\n");
        assert_eq!(block, tx);
    }

    #[test]
    fn summary_averages_runs_first() {
        let rs = [
            rec(1, "PET", Metric::VerificationTime, 1.0),
            rec(1, "PET", Metric::VerificationTime, 3.0),
            rec(2, "PET", Metric::VerificationTime, 4.0),
            rec(1, "block", Metric::BlockProcessingTime, 50.0),
        ];
        let rows = summarize(&rs);
        assert_eq!(rows.len(), 2);
        let pet = rows.iter().find(|r| r.kind == "PET").unwrap();
        assert_eq!(pet.runs, 2);
        assert!((pet.mean - 3.0).abs() < 1e-12);
        assert!((pet.stdev - 2f64.sqrt()).abs() < 1e-12);
        let (tx, block) = emit_metrics(&rs);
        assert!(tx.contains("bfica,PET,verification_time,2,3.000000,1.414214"));
        assert!(block.contains("bfica,block,block_processing_time,1,50.000000,0.000000"));
    }
}
