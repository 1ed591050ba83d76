//! Experiment configuration and the shared run path used by every method.
//!
//! A run is fully determined by its [`ExperimentConfig`]; the config hash
//! (everything except `output_dir`) and the dataset hashes are stamped into
//! every record so two runs can be compared or replayed exactly.

mod output;
mod sweep;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{train_baseline, BaselineConfig, BaselineMethod};
use crate::bilevel::{train, BilevelConfig};
use crate::data::{gen_synthetic, load_csv, split, CsvSchema, GroupedDataset, SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::models::{Activation, Head, ReprNet};
use crate::record::{Aborted, RecordStamp, TrainOutput};

pub use output::{
    file_entry, read_manifest, read_records, report, write_records, FileEntry, Manifest, Report, ReportRow, RunStatus, RunWriter,
};
pub use sweep::{aggregate, pareto_front, SweepPoint, SweepRow, SweepSpec};

/// Training method, selected by the `method` field of a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Implicit,
    Erm,
    OneStep,
    IrmV1,
    MeanMatch,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Implicit => "implicit",
            Method::Erm => "erm",
            Method::OneStep => "one_step",
            Method::IrmV1 => "irm_v1",
            Method::MeanMatch => "mean_match",
        }
    }

    pub fn baseline(self) -> Option<BaselineMethod> {
        match self {
            Method::Implicit => None,
            Method::Erm => Some(BaselineMethod::Erm),
            Method::OneStep => Some(BaselineMethod::OneStep),
            Method::IrmV1 => Some(BaselineMethod::IrmV1),
            Method::MeanMatch => Some(BaselineMethod::MeanMatch),
        }
    }
}

/// Where the data comes from. Relative paths resolve against the config
/// file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        split: SplitSpec,
        #[serde(default = "yes")]
        standardize: bool,
    },
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
    /// A canonical dataset file, as written by `gen-synthetic`.
    Dataset {
        path: PathBuf,
        #[serde(default = "yes")]
        standardize: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Layer widths after the input; the last is the embedding width.
    pub widths: Vec<usize>,
    #[serde(default = "relu")]
    pub activation: Activation,
    /// Applied to the embedding layer; linear by default.
    #[serde(default = "linear")]
    pub output_activation: Activation,
}

fn relu() -> Activation {
    Activation::Relu
}

fn linear() -> Activation {
    Activation::Linear
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 4],
            activation: Activation::Relu,
            output_activation: Activation::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub method: Method,
    #[serde(default)]
    pub bilevel: BilevelConfig,
    /// Used by the baseline methods; its own `method` field is overridden
    /// by the top-level one.
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        if self.model.widths.is_empty() {
            return Err(Error::config("model.widths", "needs at least the embedding width"));
        }
        if self.model.widths.contains(&0) {
            return Err(Error::config("model.widths", "widths must be positive"));
        }
        match self.method {
            Method::Implicit => self.bilevel.validate(),
            _ => self.baseline_config().validate(),
        }
    }

    /// The baseline settings with `method` applied.
    pub fn baseline_config(&self) -> BaselineConfig {
        let mut b = self.baseline.clone();
        if let Some(m) = self.method.baseline() {
            b.method = m;
        }
        b
    }

    pub fn gap_points(&self) -> usize {
        match self.method {
            Method::Implicit => self.bilevel.gap_points,
            _ => self.baseline.gap_points,
        }
    }

    /// SHA-256 of the canonical JSON of everything but `output_dir`.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let v = serde_json::to_value(&c).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// Copy with relative data paths made absolute against `base`.
    pub fn resolve_paths(&self, base: &Path) -> Self {
        let abs = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let mut c = self.clone();
        match &mut c.data {
            DataConfig::Csv { path, schema } => {
                *path = abs(path);
                *schema = abs(schema);
            }
            DataConfig::Dataset { path, .. } => *path = abs(path),
            DataConfig::Synthetic { .. } => {}
        }
        c
    }
}

/// Build the dataset a config describes, split and (optionally)
/// standardized on train statistics.
pub fn load_dataset(data: &DataConfig) -> Result<GroupedDataset> {
    match data {
        DataConfig::Synthetic { spec, split: s, standardize } => {
            let mut ds = split(&gen_synthetic(spec)?, s)?;
            if *standardize {
                ds.standardize()?;
            }
            Ok(ds)
        }
        DataConfig::Csv { path, schema } => load_csv(path, &CsvSchema::from_json_file(schema)?),
        DataConfig::Dataset { path, standardize } => {
            let mut ds = GroupedDataset::load(path)?;
            if *standardize {
                ds.standardize()?;
            }
            Ok(ds)
        }
    }
}

/// Fresh network and shared head initialization for `cfg` on `ds`.
pub fn init_model(cfg: &ExperimentConfig, ds: &GroupedDataset, seed: u64) -> Result<(ReprNet, Head)> {
    let mut arch = vec![ds.dim()];
    arch.extend_from_slice(&cfg.model.widths);
    let net = ReprNet::new(&arch, cfg.model.activation, seed)?.with_output_activation(cfg.model.output_activation);
    let head = Head::zeros(net.embed_dim(), ds.task());
    Ok((net, head))
}

/// Train `cfg.method` on `ds` under `seed` (initialization and batches).
pub fn run_experiment(cfg: &ExperimentConfig, ds: &GroupedDataset, seed: u64) -> Result<TrainOutput, Aborted> {
    let fail = |error| Aborted { records: Vec::new(), error };
    cfg.validate().map_err(fail)?;
    let (net, head) = init_model(cfg, ds, seed).map_err(fail)?;
    let mut stamp = RecordStamp::new(cfg.method.name(), ds, seed);
    stamp.config_hash = cfg.config_hash();
    match cfg.method {
        Method::Implicit => train(net, head, ds, &cfg.bilevel, seed, &stamp),
        _ => train_baseline(net, head, ds, &cfg.baseline_config(), seed, &stamp),
    }
}

/// `cfg` with the swept value applied: κ for the implicit method, the
/// penalty weight otherwise.
pub fn with_value(cfg: &ExperimentConfig, value: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    match c.method {
        Method::Implicit => c.bilevel.kappa = value,
        _ => c.baseline.reg_coeff = value,
    }
    c
}
