//! Learning curves, bucketing, seed aggregation and run records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// One point of a seed-aggregated curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub step: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`; zero
/// for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Buckets episodic returns to fixed step intervals. The value at bucket end
/// `j * bucket` is the mean return of the episodes that ended in
/// `((j - 1) * bucket, j * bucket]`; empty buckets repeat the previous value
/// and buckets before the first episode are omitted.
pub fn bucketize(history: &[(usize, f64)], bucket: usize, total_steps: usize) -> Vec<(usize, f64)> {
    assert!(bucket > 0);
    let last = history.last().map_or(0, |(s, _)| *s).max(total_steps);
    let n_buckets = last.div_ceil(bucket);
    let mut out = Vec::with_capacity(n_buckets);
    let mut it = history.iter().peekable();
    let mut prev: Option<f64> = None;
    for j in 1..=n_buckets {
        let end = j * bucket;
        let mut sum = 0.0;
        let mut count = 0usize;
        while let Some(&&(s, r)) = it.peek() {
            if s > end {
                break;
            }
            sum += r;
            count += 1;
            it.next();
        }
        let value = if count > 0 { Some(sum / count as f64) } else { prev };
        if let Some(v) = value {
            out.push((end, v));
            prev = Some(v);
        }
    }
    out
}

/// Aggregates bucketed per-seed curves step by step over the seeds that
/// have a value there.
pub fn aggregate(curves: &[Vec<(usize, f64)>]) -> Vec<AggregatePoint> {
    let mut steps: Vec<usize> = curves.iter().flatten().map(|(s, _)| *s).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let values: Vec<f64> = curves
                .iter()
                .filter_map(|c| c.iter().find(|(s, _)| *s == step).map(|(_, v)| *v))
                .collect();
            let (mean, stderr) = mean_stderr(&values);
            AggregatePoint {
                step,
                mean,
                stderr,
                n: values.len(),
            }
        })
        .collect()
}

/// Normalized area under a bucketed curve: the mean bucket value.
pub fn auc(curve: &[(usize, f64)]) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    curve.iter().map(|(_, v)| v).sum::<f64>() / curve.len() as f64
}

/// Mean of the last `n` episodic returns.
pub fn final_mean(history: &[(usize, f64)], n: usize) -> f64 {
    let tail = &history[history.len().saturating_sub(n)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|(_, r)| r).sum::<f64>() / tail.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub series: String,
    pub step: usize,
    #[serde(rename = "return")]
    pub ret: f64,
}

pub fn write_curves(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub series: String,
    pub step: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn write_aggregate(path: &Path, series: &[SeriesRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for s in series {
        for p in &s.aggregate {
            w.serialize(AggregateRow {
                series: s.label.clone(),
                step: p.step,
                mean: p.mean,
                stderr: p.stderr,
                n: p.n,
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMeta {
    pub index: usize,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub wall_seconds: f64,
}

/// A labelled curve with its per-seed bucketed versions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub label: String,
    /// `(seed index, bucketed curve)` of every completed seed.
    pub per_seed: Vec<(usize, Vec<(usize, f64)>)>,
    pub aggregate: Vec<AggregatePoint>,
}

impl SeriesRecord {
    pub fn new(label: impl Into<String>, per_seed: Vec<(usize, Vec<(usize, f64)>)>) -> Self {
        let curves: Vec<_> = per_seed.iter().map(|(_, c)| c.clone()).collect();
        SeriesRecord {
            label: label.into(),
            aggregate: aggregate(&curves),
            per_seed,
        }
    }

    pub fn mean_auc(&self) -> f64 {
        let v: Vec<f64> = self.per_seed.iter().map(|(_, c)| auc(c)).collect();
        mean_stderr(&v).0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub env: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub bucket_steps: usize,
    pub seeds: Vec<SeedMeta>,
    pub series: Vec<SeriesRecord>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn completed(&self) -> usize {
        self.seeds.iter().filter(|s| s.ok).count()
    }

    pub fn series(&self, label: &str) -> Option<&SeriesRecord> {
        self.series.iter().find(|s| s.label == label)
    }
}
