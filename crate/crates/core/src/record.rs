//! Per-epoch run records and the shared evaluation routine.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{GroupedDataset, Split};
use crate::error::Result;
use crate::metrics::{performance, suf_gap, PredictionSet};
use crate::models::{Head, ReprNet};

/// Identity of a run, copied into every record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RecordStamp {
    pub method: String,
    pub config_hash: String,
    pub data_hash: String,
    pub split_hash: String,
    pub seed: u64,
}

impl RecordStamp {
    pub fn new(method: &str, dataset: &GroupedDataset, seed: u64) -> Self {
        Self {
            method: method.to_string(),
            config_hash: String::new(),
            data_hash: dataset.content_hash(),
            split_hash: dataset.split_hash(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    pub method: String,
    /// Mean training objective over the epoch's steps.
    pub loss: f64,
    /// Accuracy (classification) or MSE (regression), unweighted over groups.
    pub train_perf: Option<f64>,
    pub val_perf: Option<f64>,
    pub test_perf: Option<f64>,
    pub train_gap: Option<f64>,
    pub val_gap: Option<f64>,
    pub test_gap: Option<f64>,
    pub head_distance: f64,
    /// Mean over the epoch of the λ-gradient norm.
    pub grad_norm: f64,
    /// Mean inner steps per outer step.
    pub inner_steps: f64,
    /// Mean CG iterations per outer step (both groups).
    pub cg_iters: f64,
    pub wall_seconds: f64,
    pub config_hash: String,
    pub data_hash: String,
    pub split_hash: String,
    pub seed: u64,
}

/// Metrics of one split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitMetrics {
    pub perf: f64,
    /// `None` when every conditioning set was empty.
    pub gap: Option<f64>,
}

/// Scores of `dataset` rows in `split`, each row routed to its group's head.
pub fn split_predictions(
    net: &ReprNet,
    heads: [&Head; 2],
    dataset: &GroupedDataset,
    split: Split,
) -> Result<Option<PredictionSet>> {
    let rows = dataset.split_rows(split);
    let counts = dataset.group_counts(split);
    if counts[0] == 0 || counts[1] == 0 {
        return Ok(None);
    }
    let x: Tensor = dataset.features().select_rows(&rows);
    let z = net.embed(&x)?;
    let s0 = heads[0].scores(&z)?;
    let s1 = heads[1].scores(&z)?;
    let mut group = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    let mut s = Vec::with_capacity(rows.len());
    for (k, &i) in rows.iter().enumerate() {
        let g = dataset.group()[i];
        group.push(g);
        y.push(dataset.labels()[i]);
        s.push(if g == 0 { s0[k] } else { s1[k] });
    }
    Ok(Some(PredictionSet::new(dataset.task(), group, y, s)?))
}

pub fn evaluate_split(
    net: &ReprNet,
    heads: [&Head; 2],
    dataset: &GroupedDataset,
    split: Split,
    gap_points: usize,
) -> Result<Option<SplitMetrics>> {
    let Some(preds) = split_predictions(net, heads, dataset, split)? else {
        return Ok(None);
    };
    Ok(Some(SplitMetrics {
        perf: performance(&preds)?.0,
        gap: suf_gap(&preds, gap_points).ok().map(|r| r.value),
    }))
}

/// Train/val/test metrics.
pub fn evaluate_all(
    net: &ReprNet,
    heads: [&Head; 2],
    dataset: &GroupedDataset,
    gap_points: usize,
) -> Result<[Option<SplitMetrics>; 3]> {
    Ok([
        evaluate_split(net, heads, dataset, Split::Train, gap_points)?,
        evaluate_split(net, heads, dataset, Split::Val, gap_points)?,
        evaluate_split(net, heads, dataset, Split::Test, gap_points)?,
    ])
}

/// Step statistics accumulated over one epoch.
#[derive(Clone, Debug, Default)]
pub(crate) struct EpochAccumulator {
    steps: usize,
    loss: f64,
    grad_norm: f64,
    inner_steps: f64,
    cg_iters: f64,
}

impl EpochAccumulator {
    pub(crate) fn push(&mut self, loss: f64, grad_norm: f64, inner_steps: usize, cg_iters: usize) {
        self.steps += 1;
        self.loss += loss;
        self.grad_norm += grad_norm;
        self.inner_steps += inner_steps as f64;
        self.cg_iters += cg_iters as f64;
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn finish(
        self,
        epoch: usize,
        stamp: &RecordStamp,
        metrics: [Option<SplitMetrics>; 3],
        head_distance: f64,
        wall_seconds: f64,
    ) -> RunRecord {
        let n = self.steps.max(1) as f64;
        let [tr, va, te] = metrics;
        RunRecord {
            epoch,
            method: stamp.method.clone(),
            loss: self.loss / n,
            train_perf: tr.map(|m| m.perf),
            val_perf: va.map(|m| m.perf),
            test_perf: te.map(|m| m.perf),
            train_gap: tr.and_then(|m| m.gap),
            val_gap: va.and_then(|m| m.gap),
            test_gap: te.and_then(|m| m.gap),
            head_distance,
            grad_norm: self.grad_norm / n,
            inner_steps: self.inner_steps / n,
            cg_iters: self.cg_iters / n,
            wall_seconds,
            config_hash: stamp.config_hash.clone(),
            data_hash: stamp.data_hash.clone(),
            split_hash: stamp.split_hash.clone(),
            seed: stamp.seed,
        }
    }
}

/// Records flushed so far plus the error that stopped training.
#[derive(Debug, thiserror::Error)]
#[error("training aborted after {} complete epochs: {error}", records.len())]
pub struct Aborted {
    pub records: Vec<RunRecord>,
    #[source]
    pub error: crate::error::Error,
}

/// Final state of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub records: Vec<RunRecord>,
    pub net: ReprNet,
    pub heads: [Head; 2],
}

/// Default epoch length: one pass over the larger group's train rows in
/// expectation.
pub fn default_steps_per_epoch(dataset: &GroupedDataset, batch_per_group: usize) -> usize {
    let [a, b] = dataset.group_counts(Split::Train);
    a.max(b).div_ceil(batch_per_group.max(1)).max(1)
}
