//! Grouped tabular datasets: ingestion, splitting, synthetic generators,
//! and mini-batch streams.

mod batches;
mod csv_io;
mod split;
mod synthetic;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Task;

pub use batches::{BatchStream, GroupBatch};
pub use csv_io::{load_csv, CsvSchema, GroupColumn};
pub use split::{split, SplitSpec};
pub use synthetic::{gen_synthetic, Regime, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Split::ALL.get(usize::from(c)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Per-feature affine normalization fitted on the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDataset {
    features: Tensor,
    labels: Vec<f64>,
    group: Vec<u8>,
    split: Vec<Split>,
    feature_names: Vec<String>,
    task: Task,
    source: String,
}

impl GroupedDataset {
    /// Rows start in the train split.
    pub fn new(
        features: Tensor,
        labels: Vec<f64>,
        group: Vec<u8>,
        feature_names: Vec<String>,
        task: Task,
        source: impl Into<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if features.shape().len() != 2 || features.rows() != n || group.len() != n {
            return Err(Error::Data(format!(
                "features {:?}, {} labels and {} group ids disagree",
                features.shape(),
                n,
                group.len()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if let Some(i) = features.first_non_finite() {
            return Err(Error::Data(format!(
                "non-finite feature at row {}, column {}",
                i / features.cols().max(1),
                i % features.cols().max(1)
            )));
        }
        if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite label at row {i}")));
        }
        if let Some(i) = group.iter().position(|&g| g > 1) {
            return Err(Error::Data(format!("group id {} at row {i} is not 0/1", group[i])));
        }
        if task == Task::BinaryClassification {
            if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
                return Err(Error::Data(format!("classification label at row {i} is not ±1")));
            }
        }
        Ok(Self {
            features,
            labels,
            group,
            split: vec![Split::Train; n],
            feature_names,
            task,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.features.cols()
    }
    pub fn features(&self) -> &Tensor {
        &self.features
    }
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
    pub fn group(&self) -> &[u8] {
        &self.group
    }
    pub fn splits(&self) -> &[Split] {
        &self.split
    }
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
    pub fn task(&self) -> Task {
        self.task
    }
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn set_splits(&mut self, split: Vec<Split>) -> Result<()> {
        if split.len() != self.len() {
            return Err(Error::Data(format!(
                "{} split labels for {} rows",
                split.len(),
                self.len()
            )));
        }
        self.split = split;
        Ok(())
    }

    /// Row indices of group `g` in `split`.
    pub fn rows(&self, split: Split, g: u8) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == split && self.group[i] == g)
            .collect()
    }

    /// Row indices in `split`, both groups.
    pub fn split_rows(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn group_counts(&self, split: Split) -> [usize; 2] {
        let mut c = [0; 2];
        for i in 0..self.len() {
            if self.split[i] == split {
                c[usize::from(self.group[i])] += 1;
            }
        }
        c
    }

    /// Divide every label by `scale`.
    pub fn scale_labels(&mut self, scale: f64) -> Result<()> {
        if !(scale.is_finite() && scale != 0.0) {
            return Err(Error::config("label_scale", "must be finite and non-zero"));
        }
        self.labels.iter_mut().for_each(|y| *y /= scale);
        Ok(())
    }

    /// Fit mean and standard deviation on the train split and apply them to
    /// every row. Constant features keep unit scale.
    pub fn standardize(&mut self) -> Result<Standardization> {
        let train = self.split_rows(Split::Train);
        if train.is_empty() {
            return Err(Error::Data("cannot standardize without train rows".into()));
        }
        let d = self.dim();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in &train {
            for (m, v) in mean.iter_mut().zip(self.features.row(i)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for &i in &train {
            for ((s, v), m) in var.iter_mut().zip(self.features.row(i)).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std: Vec<f64> = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        let data = self.features.data_mut();
        for row in data.chunks_mut(d.max(1)) {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *x = (*x - m) / s;
            }
        }
        Ok(Standardization { mean, std })
    }

    /// Header line plus little-endian rows:
    /// `features (d × f64) | label (f64) | group (u8) | split (u8)`.
    ///
    /// Header: `FAIRDS v1 n=<n> d=<d> task=<task> features=<name,...>`
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.len() * (8 * self.dim() + 10));
        writeln!(
            out,
            "FAIRDS v1 n={} d={} task={} features={}",
            self.len(),
            self.dim(),
            task_name(self.task),
            self.feature_names.join(",")
        )
        .expect("write to vec");
        for i in 0..self.len() {
            for v in self.features.row(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&self.labels[i].to_le_bytes());
            out.push(self.group[i]);
            out.push(self.split[i].code());
        }
        out
    }

    pub fn from_canonical_bytes(bytes: &[u8], source: impl Into<String>) -> Result<Self> {
        let bad = |why: String| Error::Data(format!("canonical dataset: {why}"));
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| bad(e.to_string()))?;
        let rest = header
            .strip_prefix("FAIRDS v1 ")
            .ok_or_else(|| bad("unknown header".into()))?;
        let (mut n, mut d, mut task, mut names) = (None, None, None, None);
        for field in rest.split(' ') {
            match field.split_once('=') {
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("d", v)) => d = v.parse::<usize>().ok(),
                Some(("task", v)) => task = parse_task(v),
                Some(("features", v)) => {
                    names = Some(if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',').map(str::to_string).collect()
                    })
                }
                _ => return Err(bad(format!("unexpected header field `{field}`"))),
            }
        }
        let (n, d, task, names) = match (n, d, task, names) {
            (Some(n), Some(d), Some(t), Some(f)) => (n, d, t, f),
            _ => return Err(bad("incomplete header".into())),
        };
        let row_len = 8 * d + 10;
        let body = &bytes[nl + 1..];
        if body.len() != n * row_len {
            return Err(bad(format!("expected {} body bytes, found {}", n * row_len, body.len())));
        }
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
        let mut feats = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut group = Vec::with_capacity(n);
        let mut split = Vec::with_capacity(n);
        for (i, row) in body.chunks_exact(row_len).enumerate() {
            for j in 0..d {
                feats.push(f64_at(&row[8 * j..8 * j + 8]));
            }
            labels.push(f64_at(&row[8 * d..8 * d + 8]));
            group.push(row[8 * d + 8]);
            split.push(
                Split::from_code(row[8 * d + 9]).ok_or_else(|| bad(format!("bad split code at row {i}")))?,
            );
        }
        let mut ds = Self::new(Tensor::new(vec![n, d], feats)?, labels, group, names, task, source)?;
        ds.split = split;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_canonical_bytes(&bytes, path.display().to_string())
    }

    /// SHA-256 of the canonical serialization, split included.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_bytes()))
    }

    /// SHA-256 of the split assignment alone.
    pub fn split_hash(&self) -> String {
        let codes: Vec<u8> = self.split.iter().map(|s| s.code()).collect();
        hex::encode(Sha256::digest(codes))
    }

    /// Provenance string `source@hash`.
    pub fn provenance(&self) -> String {
        format!("{}@{}", self.source, self.content_hash())
    }
}

pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::Regression => "regression",
        Task::BinaryClassification => "binary_classification",
    }
}

fn parse_task(s: &str) -> Option<Task> {
    match s {
        "regression" => Some(Task::Regression),
        "binary_classification" => Some(Task::BinaryClassification),
        _ => None,
    }
}
