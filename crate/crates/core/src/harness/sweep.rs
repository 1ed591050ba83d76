use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::models::Task;
use crate::record::RunRecord;

/// A list of κ (implicit) or penalty weights (baselines), each run
/// `repetitions` times; repetition `r` trains under seed `base.seed + r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Overrides `base.method` when present.
    #[serde(default)]
    pub method: Option<Method>,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub repetitions: usize,
    pub base: ExperimentConfig,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("values", "needs at least one value"));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::config("values", format!("{v} is not a non-negative number")));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be at least 1"));
        }
        self.base_config().validate()
    }

    pub fn base_config(&self) -> ExperimentConfig {
        let mut c = self.base.clone();
        if let Some(m) = self.method {
            c.method = m;
        }
        c
    }

    /// `(value index, value, repetition, seed)` for every run, value-major.
    pub fn grid(&self) -> Vec<(usize, f64, usize, u64)> {
        let mut out = Vec::new();
        for (i, &v) in self.values.iter().enumerate() {
            for r in 0..self.repetitions {
                out.push((i, v, r, self.base.seed + r as u64));
            }
        }
        out
    }
}

/// Outcome of one sweep run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub repetition: usize,
    pub seed: u64,
    pub last: Option<RunRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Test-split summary of one swept value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub runs: usize,
    pub failed: usize,
    pub perf_mean: Option<f64>,
    pub perf_std: Option<f64>,
    pub gap_mean: Option<f64>,
    pub gap_std: Option<f64>,
    pub head_distance_mean: Option<f64>,
    pub head_distance_std: Option<f64>,
}

/// Mean and sample standard deviation; the deviation needs two values.
fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let s = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), s)
}

/// One row per distinct value, in first-seen order.
pub fn aggregate(points: &[SweepPoint]) -> Vec<SweepRow> {
    let mut values: Vec<f64> = Vec::new();
    for p in points {
        if !values.iter().any(|v| v.to_bits() == p.value.to_bits()) {
            values.push(p.value);
        }
    }
    values
        .into_iter()
        .map(|v| {
            let group: Vec<&SweepPoint> = points.iter().filter(|p| p.value.to_bits() == v.to_bits()).collect();
            let ok: Vec<&RunRecord> = group.iter().filter_map(|p| p.last.as_ref()).collect();
            let pick = |f: fn(&RunRecord) -> Option<f64>| mean_std(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            let (perf_mean, perf_std) = pick(|r| r.test_perf);
            let (gap_mean, gap_std) = pick(|r| r.test_gap);
            let (head_distance_mean, head_distance_std) = pick(|r| Some(r.head_distance));
            SweepRow {
                value: v,
                runs: group.len(),
                failed: group.len() - ok.len(),
                perf_mean,
                perf_std,
                gap_mean,
                gap_std,
                head_distance_mean,
                head_distance_std,
            }
        })
        .collect()
}

/// Indices of rows no other row dominates in (performance, gap). Lower MSE
/// or higher accuracy is better; lower gap is better. Rows without both
/// means are left out.
pub fn pareto_front(rows: &[SweepRow], task: Task) -> Vec<usize> {
    let better = |a: f64, b: f64| match task {
        Task::Regression => a <= b,
        Task::BinaryClassification => a >= b,
    };
    let pts: Vec<Option<(f64, f64)>> = rows.iter().map(|r| r.perf_mean.zip(r.gap_mean)).collect();
    (0..rows.len())
        .filter(|&i| {
            let Some((pi, gi)) = pts[i] else { return false };
            !pts.iter().enumerate().any(|(j, q)| {
                let Some((pj, gj)) = *q else { return false };
                j != i && better(pj, pi) && gj <= gi && (pj != pi || gj != gi)
            })
        })
        .collect()
}

impl SweepRow {
    pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
