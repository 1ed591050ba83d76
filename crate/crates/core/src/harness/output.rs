//! Run directories: `records.csv`, `timing.csv`, checkpoints and a
//! `manifest.json` that lists every other file with its SHA-256.
//!
//! `records.csv` holds no wall-clock column, so two runs with the same
//! config hash and seed write byte-identical record files; timings go to
//! `timing.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::data::{task_name, GroupedDataset};
use crate::error::{Error, Result};
use crate::metrics::group_label_pearson;
use crate::models::{write_checkpoint, Task};
use crate::record::{RunRecord, TrainOutput};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub method: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub data_source: String,
    pub data_hash: String,
    pub split_hash: String,
    pub task: Task,
    /// Pearson correlation of group index and label over the whole dataset.
    pub pearson: Option<f64>,
    pub seed: u64,
    pub library_version: String,
    pub wall_seconds: f64,
    pub epochs: usize,
    pub last: Option<RunRecord>,
    pub files: Vec<FileEntry>,
}

/// `RunRecord` without the wall-clock column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub epoch: usize,
    pub method: String,
    pub loss: f64,
    pub train_perf: Option<f64>,
    pub val_perf: Option<f64>,
    pub test_perf: Option<f64>,
    pub train_gap: Option<f64>,
    pub val_gap: Option<f64>,
    pub test_gap: Option<f64>,
    pub head_distance: f64,
    pub grad_norm: f64,
    pub inner_steps: f64,
    pub cg_iters: f64,
    pub config_hash: String,
    pub data_hash: String,
    pub split_hash: String,
    pub seed: u64,
}

impl From<&RunRecord> for RecordRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            epoch: r.epoch,
            method: r.method.clone(),
            loss: r.loss,
            train_perf: r.train_perf,
            val_perf: r.val_perf,
            test_perf: r.test_perf,
            train_gap: r.train_gap,
            val_gap: r.val_gap,
            test_gap: r.test_gap,
            head_distance: r.head_distance,
            grad_norm: r.grad_norm,
            inner_steps: r.inner_steps,
            cg_iters: r.cg_iters,
            config_hash: r.config_hash.clone(),
            data_hash: r.data_hash.clone(),
            split_hash: r.split_hash.clone(),
            seed: r.seed,
        }
    }
}

#[derive(Serialize)]
struct TimingRow {
    epoch: usize,
    wall_seconds: f64,
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(RecordRow::from(r))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Hash `dir/name` for a manifest listing.
pub fn file_entry(dir: &Path, name: &str) -> Result<FileEntry> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(FileEntry {
        path: name.to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Writes one run directory, tracking every file for the manifest.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&mut self, records: &[RunRecord]) -> Result<()> {
        write_records(&self.dir.join("records.csv"), records)?;
        self.files.push("records.csv".into());
        let path = self.dir.join("timing.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for r in records {
            w.serialize(TimingRow {
                epoch: r.epoch,
                wall_seconds: r.wall_seconds,
            })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.files.push("timing.csv".into());
        Ok(())
    }

    /// `lambda.ckpt`, `head0.ckpt`, `head1.ckpt`.
    pub fn checkpoints(&mut self, out: &TrainOutput) -> Result<()> {
        write_checkpoint(&self.dir.join("lambda.ckpt"), out.net.params())?;
        write_checkpoint(&self.dir.join("head0.ckpt"), out.heads[0].params())?;
        write_checkpoint(&self.dir.join("head1.ckpt"), out.heads[1].params())?;
        self.files.extend(["lambda.ckpt", "head0.ckpt", "head1.ckpt"].map(String::from));
        Ok(())
    }

    /// Write `manifest.json` and return it.
    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        cfg: &ExperimentConfig,
        ds: &GroupedDataset,
        seed: u64,
        records: &[RunRecord],
        error: Option<String>,
        wall_seconds: f64,
    ) -> Result<Manifest> {
        let files = self
            .files
            .iter()
            .map(|f| file_entry(&self.dir, f))
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            name: cfg.name.clone(),
            method: cfg.method.name().to_string(),
            status: if error.is_some() {
                RunStatus::Aborted
            } else {
                RunStatus::Completed
            },
            error,
            config: cfg.clone(),
            config_hash: cfg.config_hash(),
            data_source: ds.source().to_string(),
            data_hash: ds.content_hash(),
            split_hash: ds.split_hash(),
            task: ds.task(),
            pearson: group_label_pearson(ds.group(), ds.labels()).ok(),
            seed,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_seconds,
            epochs: records.len(),
            last: records.last().cloned(),
            files,
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub name: String,
    pub method: String,
    pub dataset: String,
    pub data_hash: String,
    pub task: String,
    pub pearson: Option<f64>,
    pub seed: u64,
    pub status: String,
    pub epochs: usize,
    pub test_perf: Option<f64>,
    pub test_gap: Option<f64>,
    pub head_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

/// Side-by-side final metrics of the runs in `dirs`.
pub fn report(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::config("runs", "need at least one run directory"));
    }
    let mut rows = Vec::with_capacity(dirs.len());
    let mut hashes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for d in dirs {
        let m = read_manifest(d)?;
        let seen = hashes.entry(m.data_source.clone()).or_default();
        if !seen.contains(&m.data_hash) {
            seen.push(m.data_hash.clone());
        }
        rows.push(ReportRow {
            run: d.display().to_string(),
            name: m.name,
            method: m.method,
            dataset: m.data_source,
            data_hash: m.data_hash,
            task: task_name(m.task).to_string(),
            pearson: m.pearson,
            seed: m.seed,
            status: match m.status {
                RunStatus::Completed => "completed".into(),
                RunStatus::Aborted => "aborted".into(),
            },
            epochs: m.epochs,
            test_perf: m.last.as_ref().and_then(|r| r.test_perf),
            test_gap: m.last.as_ref().and_then(|r| r.test_gap),
            head_distance: m.last.as_ref().map(|r| r.head_distance),
        });
    }
    let warnings = hashes
        .into_iter()
        .filter(|(_, h)| h.len() > 1)
        .map(|(src, h)| {
            let short: Vec<&str> = h.iter().map(|x| &x[..12.min(x.len())]).collect();
            format!("warning: runs on dataset `{src}` disagree on its content hash ({})", short.join(", "))
        })
        .collect();
    Ok(Report { rows, warnings })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

impl Report {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Aligned plain-text table, warnings last.
    pub fn to_text(&self) -> String {
        let head = ["name", "method", "dataset", "pearson", "seed", "status", "perf", "gap", "|h0-h1|"];
        let body: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    r.method.clone(),
                    r.dataset.clone(),
                    cell(r.pearson),
                    r.seed.to_string(),
                    r.status.clone(),
                    cell(r.test_perf),
                    cell(r.test_gap),
                    cell(r.head_distance),
                ]
            })
            .collect();
        let mut width = head.map(str::len);
        for row in &body {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &head.map(String::from));
        for row in &body {
            line(&mut out, row);
        }
        if let Some(t) = self.rows.first().map(|r| r.task.as_str()) {
            let _ = writeln!(out, "(perf is test {}; gap is test sufficiency gap)", if t == "regression" { "MSE" } else { "accuracy" });
        }
        for w in &self.warnings {
            let _ = writeln!(out, "{w}");
        }
        out
    }
}
