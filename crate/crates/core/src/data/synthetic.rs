//! Two-group regression generators with known structure.
//!
//! Features are a causal block `x_c` followed by a spurious block `x_s`.
//! In both regimes `y = cᵀx_c + noise·e`.
//!
//! * FAIR-REALIZABLE: the groups share one distribution and `x_s` is pure
//!   noise, so one linear head on the raw features is optimal for both.
//! * BIASED: group 1's causal block is shifted by `group_shift` (so the
//!   group index correlates with `y`), and the spurious block is a noisy
//!   copy of the label, `x_s = y + g·spurious_offset + τ_g·e`, whose
//!   reliability `τ_g` differs by group. Each group's least-squares head
//!   leans on `x_s` by a different amount, so per-group optimal heads differ
//!   and a representation that keeps `x_s` cannot satisfy sufficiency.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GroupedDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FairRealizable,
    Biased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_per_group: usize,
    pub regime: Regime,
    #[serde(default = "d_causal")]
    pub causal_dim: usize,
    #[serde(default = "d_spurious")]
    pub spurious_dim: usize,
    /// Shared signal `c`; defaults to `1/sqrt(causal_dim)` in every entry.
    #[serde(default)]
    pub signal: Option<Vec<f64>>,
    /// Group-1 mean shift of the causal block (BIASED only).
    #[serde(default = "d_shift")]
    pub group_shift: f64,
    /// Spurious-block noise scale per group (BIASED only).
    #[serde(default = "d_tau")]
    pub spurious_noise: [f64; 2],
    /// Group-1 offset added to the spurious block (BIASED only).
    #[serde(default)]
    pub spurious_offset: f64,
    /// Label noise scale; when absent, 0.01 for FAIR-REALIZABLE and 0.5
    /// for BIASED.
    #[serde(default)]
    pub noise: Option<f64>,
    /// Classification thresholds the label at zero.
    #[serde(default = "d_task")]
    pub task: Task,
}

fn d_causal() -> usize {
    4
}
fn d_spurious() -> usize {
    2
}
fn d_shift() -> f64 {
    0.25
}
fn d_tau() -> [f64; 2] {
    [0.05, 2.0]
}
fn d_task() -> Task {
    Task::Regression
}

impl SyntheticSpec {
    /// Defaults for `regime`. FAIR-REALIZABLE uses near-noiseless labels.
    pub fn new(regime: Regime, n_per_group: usize, seed: u64) -> Self {
        Self {
            seed,
            n_per_group,
            regime,
            causal_dim: d_causal(),
            spurious_dim: d_spurious(),
            signal: None,
            group_shift: d_shift(),
            spurious_noise: d_tau(),
            spurious_offset: 0.0,
            noise: None,
            task: Task::Regression,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.causal_dim + self.spurious_dim
    }

    pub fn noise(&self) -> f64 {
        self.noise.unwrap_or(match self.regime {
            Regime::FairRealizable => 0.01,
            Regime::Biased => 0.5,
        })
    }

    pub fn signal(&self) -> Vec<f64> {
        self.signal
            .clone()
            .unwrap_or_else(|| vec![1.0 / (self.causal_dim as f64).sqrt(); self.causal_dim])
    }

    fn validate(&self) -> Result<()> {
        if self.n_per_group < 2 {
            return Err(Error::config(
                "n_per_group",
                format!("{} rows per group cannot be split", self.n_per_group),
            ));
        }
        if self.causal_dim == 0 {
            return Err(Error::config("causal_dim", "must be positive"));
        }
        if let Some(s) = &self.signal {
            if s.len() != self.causal_dim {
                return Err(Error::config(
                    "signal",
                    format!("{} entries for causal_dim {}", s.len(), self.causal_dim),
                ));
            }
        }
        let finite = [self.group_shift, self.spurious_offset, self.noise()]
            .iter()
            .chain(&self.spurious_noise)
            .all(|v| v.is_finite());
        if !finite || self.noise() < 0.0 || self.spurious_noise.iter().any(|&t| t < 0.0) {
            return Err(Error::config("noise", "scales must be finite and non-negative"));
        }
        Ok(())
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let (dc, ds) = (spec.causal_dim, spec.spurious_dim);
    let c = spec.signal();
    let n = 2 * spec.n_per_group;
    let mut feats = Vec::with_capacity(n * (dc + ds));
    let mut labels = Vec::with_capacity(n);
    let mut group = Vec::with_capacity(n);
    for g in 0..2u8 {
        let gf = f64::from(g);
        for _ in 0..spec.n_per_group {
            let biased = spec.regime == Regime::Biased;
            let shift = if biased { gf * spec.group_shift } else { 0.0 };
            let xc: Vec<f64> = (0..dc).map(|_| normal() + shift).collect();
            let y = xc.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + spec.noise() * normal();
            feats.extend_from_slice(&xc);
            for _ in 0..ds {
                let v = if biased {
                    y + gf * spec.spurious_offset + spec.spurious_noise[usize::from(g)] * normal()
                } else {
                    normal()
                };
                feats.push(v);
            }
            labels.push(match spec.task {
                Task::Regression => y,
                Task::BinaryClassification => {
                    if y >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            });
            group.push(g);
        }
    }
    let names = (0..dc)
        .map(|i| format!("c{i}"))
        .chain((0..ds).map(|i| format!("s{i}")))
        .collect();
    let source = match spec.regime {
        Regime::FairRealizable => "synthetic:fair_realizable",
        Regime::Biased => "synthetic:biased",
    };
    GroupedDataset::new(Tensor::new(vec![n, dc + ds], feats)?, labels, group, names, spec.task, source)
}
