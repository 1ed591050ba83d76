//! Independent reference computations: finite differences, dense solves,
//! brute-force metric counts, the exact bi-level gradient, and the unrolled
//! explicit gradient.
//!
//! Nothing here calls the engine path it is used to check: the exact
//! gradient runs its own scalar network and normal equations, the metric
//! counts loop over samples directly, and dense solves go through
//! `nalgebra`.

mod exact;
mod suite;
mod unrolled;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Layout, ParamVector, Tensor};
use crate::data::GroupBatch;
use crate::error::{Error, Result};
use crate::metrics::decide;
use crate::models::{Activation, ReprNet};

pub use exact::{exact_bilevel_gradient, exact_inner_heads, exact_outer_objective, ExactGradient};
pub use suite::{check_names, gradient_error, run_suite, Fault, GradientProbe, SuiteOptions};
pub use unrolled::{explicit_unrolled_step, UnrolledGradient};

/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantity: String,
    pub oracle: Vec<f64>,
    pub engine: Vec<f64>,
    pub rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl OracleReport {
    /// Compare two vectors by `‖engine − oracle‖ / max(‖oracle‖, floor)`.
    pub fn compare(quantity: impl Into<String>, oracle: &[f64], engine: &[f64], tolerance: f64) -> Self {
        let rel = rel_error(oracle, engine);
        Self {
            quantity: quantity.into(),
            oracle: oracle.to_vec(),
            engine: engine.to_vec(),
            rel_error: rel,
            tolerance,
            passed: rel <= tolerance,
            note: String::new(),
        }
    }

    /// A check whose statistic is not a vector difference.
    pub fn statistic(quantity: impl Into<String>, value: f64, tolerance: f64, passed: bool, note: impl Into<String>) -> Self {
        Self {
            quantity: quantity.into(),
            oracle: Vec::new(),
            engine: Vec::new(),
            rel_error: value,
            tolerance,
            passed,
            note: note.into(),
        }
    }

    pub fn failed(quantity: impl Into<String>, error: &Error) -> Self {
        Self::statistic(quantity, f64::NAN, 0.0, false, error.to_string())
    }
}

pub fn rel_error(oracle: &[f64], engine: &[f64]) -> f64 {
    if oracle.len() != engine.len() {
        return f64::INFINITY;
    }
    let diff: f64 = oracle.iter().zip(engine).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = oracle.iter().map(|a| a * a).sum::<f64>().sqrt();
    let rel = diff / norm.max(REL_FLOOR);
    if rel.is_nan() {
        f64::INFINITY
    } else {
        rel
    }
}

/// Central differences `(f(θ + s eᵢ) − f(θ − s eᵢ)) / 2s`, coordinate-wise.
pub fn fd_gradient<F>(mut f: F, theta: &ParamVector, step: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let mut out = theta.zeros_like();
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let x = theta.values()[i];
        probe.values_mut()[i] = x + step;
        let up = f(&probe)?;
        probe.values_mut()[i] = x - step;
        let down = f(&probe)?;
        probe.values_mut()[i] = x;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite evaluation at coordinate {i} ({} = {x})",
                theta.locate(i).unwrap_or("?")
            )));
        }
        out.values_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// Solve `A x = b` for symmetric positive-definite `A` (row-major) by
/// Cholesky factorization.
pub fn dense_spd_solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::Oracle(format!("matrix has {} entries, expected {}", a.len(), n * n)));
    }
    let m = DMatrix::from_row_slice(n, n, a);
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Oracle(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Oracle("matrix is not positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
}

/// Random SPD matrix `Q diag(λ) Qᵀ`, `λ ~ U[lo, hi]`, row-major.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..hi)));
    let a = &q * d * q.transpose();
    // exact symmetry
    let a = (&a + a.transpose()) * 0.5;
    a.transpose().as_slice().to_vec()
}

/// `ΔSuf_C` by direct counting over samples.
pub fn brute_suf_gap_classification(group: &[u8], y: &[f64], score: &[f64]) -> Option<f64> {
    let mut diffs = Vec::new();
    for cls in [-1.0, 1.0] {
        let mut frac = [None; 2];
        for (g, f) in frac.iter_mut().enumerate() {
            let mut tot = 0usize;
            let mut hit = 0usize;
            for i in 0..y.len() {
                if usize::from(group[i]) == g && decide(score[i]) == cls {
                    tot += 1;
                    if y[i] == cls {
                        hit += 1;
                    }
                }
            }
            if tot > 0 {
                *f = Some(hit as f64 / tot as f64);
            }
        }
        if let [Some(a), Some(b)] = frac {
            diffs.push((a - b).abs());
        }
    }
    (!diffs.is_empty()).then(|| 0.5 * diffs.iter().sum::<f64>())
}

/// Nearest-rank quantile by counting: the smallest score `s` with at least
/// `⌈q·N⌉` scores `≤ s`.
fn brute_quantile(score: &[f64], q: f64) -> f64 {
    let need = ((q * score.len() as f64).ceil() as usize).max(1);
    let mut best = f64::INFINITY;
    for &s in score {
        let below = score.iter().filter(|&&o| o <= s).count();
        if below >= need && s < best {
            best = s;
        }
    }
    best
}

/// `ΔSuf_R` by direct counting over samples.
pub fn brute_suf_gap_regression(group: &[u8], y: &[f64], score: &[f64], m: usize) -> Option<f64> {
    let mut diffs = Vec::new();
    for i in 1..=m {
        let t = brute_quantile(score, i as f64 / (m + 1) as f64);
        let mut frac = [None; 2];
        for (g, f) in frac.iter_mut().enumerate() {
            let mut tot = 0usize;
            let mut hit = 0usize;
            for k in 0..y.len() {
                if usize::from(group[k]) == g && score[k] <= t {
                    tot += 1;
                    if y[k] <= t {
                        hit += 1;
                    }
                }
            }
            if tot > 0 {
                *f = Some(hit as f64 / tot as f64);
            }
        }
        if let [Some(a), Some(b)] = frac {
            diffs.push((a - b).abs());
        }
    }
    (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// The small smooth problem used for gradient checks: a linear `[5, 3]`
/// representation, square loss, and 64 samples per group whose labels
/// follow different linear rules.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub net: ReprNet,
    pub batches: [GroupBatch; 2],
}

impl TinyInstance {
    pub const INPUT: usize = 5;
    pub const EMBED: usize = 3;
    pub const PER_GROUP: usize = 64;

    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ReprNet::new(&[Self::INPUT, Self::EMBED], Activation::Linear, seed)?;
        let shared: Vec<f64> = (0..Self::INPUT).map(|_| rng.sample(StandardNormal)).collect();
        let tilt: Vec<f64> = (0..Self::INPUT).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
        let mut mk = |g: f64| -> Result<GroupBatch> {
            let mut rows = Vec::with_capacity(Self::PER_GROUP);
            let mut y = Vec::with_capacity(Self::PER_GROUP);
            for _ in 0..Self::PER_GROUP {
                let x: Vec<f64> = (0..Self::INPUT).map(|_| rng.sample(StandardNormal)).collect();
                let noise: f64 = rng.sample(StandardNormal);
                let t: f64 = x.iter().zip(&shared).zip(&tilt).map(|((a, s), d)| a * (s + g * d)).sum::<f64>() + 0.1 * noise + 0.3 * g;
                rows.push(x);
                y.push(t);
            }
            Ok(GroupBatch {
                x: Tensor::from_rows(&rows)?,
                y,
                rows: (0..Self::PER_GROUP).collect(),
            })
        };
        let b0 = mk(0.0)?;
        let b1 = mk(1.0)?;
        Ok(Self { net, batches: [b0, b1] })
    }
}

/// A flat single-block vector.
pub fn flat_vector(values: Vec<f64>) -> ParamVector {
    let n = values.len();
    ParamVector::new(Arc::new(Layout::new([("x", vec![n])])), values).expect("matching length")
}

#[cfg(test)]
mod tests;
