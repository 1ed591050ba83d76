//! Sufficiency gaps, performance, and diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Head, Task};

/// Predictions over a two-group population.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    task: Task,
    group: Vec<u8>,
    y_true: Vec<f64>,
    y_score: Vec<f64>,
}

impl PredictionSet {
    pub fn new(task: Task, group: Vec<u8>, y_true: Vec<f64>, y_score: Vec<f64>) -> Result<Self> {
        if group.len() != y_true.len() || group.len() != y_score.len() {
            return Err(Error::Metric(format!(
                "lengths differ: {} groups, {} labels, {} scores",
                group.len(),
                y_true.len(),
                y_score.len()
            )));
        }
        if let Some(i) = group.iter().position(|&g| g > 1) {
            return Err(Error::Metric(format!("sample {i} has group {}", group[i])));
        }
        if task == Task::BinaryClassification {
            if let Some(i) = y_true.iter().position(|&y| y != 1.0 && y != -1.0) {
                return Err(Error::Metric(format!(
                    "classification label {} at sample {i} is not ±1",
                    y_true[i]
                )));
            }
        }
        Ok(Self {
            task,
            group,
            y_true,
            y_score,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }
    pub fn len(&self) -> usize {
        self.group.len()
    }
    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }
    pub fn group(&self) -> &[u8] {
        &self.group
    }
    pub fn y_true(&self) -> &[f64] {
        &self.y_true
    }
    pub fn y_score(&self) -> &[f64] {
        &self.y_score
    }

    /// Same samples with group labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            group: self.group.iter().map(|g| 1 - g).collect(),
            ..self.clone()
        }
    }

    fn samples(&self, g: u8) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.group
            .iter()
            .zip(self.y_true.iter().zip(&self.y_score))
            .filter(move |(gg, _)| **gg == g)
            .map(|(_, (&y, &s))| (y, s))
    }

    fn require_both_groups(&self) -> Result<()> {
        for g in 0..2u8 {
            if !self.group.contains(&g) {
                return Err(Error::Metric(format!("group {g} has no samples")));
            }
        }
        Ok(())
    }
}

/// Decision rule for logits.
pub fn decide(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// One conditional comparison inside a gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapTerm {
    /// Class label (classification) or threshold `t` (regression).
    pub at: f64,
    pub group0: Option<f64>,
    pub group1: Option<f64>,
    pub diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub value: f64,
    pub terms: Vec<GapTerm>,
    pub skipped: Vec<bool>,
}

impl GapReport {
    fn from_terms(terms: Vec<GapTerm>, combine: impl Fn(&[f64]) -> f64, what: &str) -> Result<Self> {
        let diffs: Vec<f64> = terms.iter().filter_map(|t| t.diff).collect();
        if diffs.is_empty() {
            return Err(Error::Metric(format!(
                "{what} undefined: every conditioning set is empty for some group"
            )));
        }
        let skipped = terms.iter().map(|t| t.diff.is_none()).collect();
        Ok(Self {
            value: combine(&diffs),
            terms,
            skipped,
        })
    }

    pub fn skipped_count(&self) -> usize {
        self.skipped.iter().filter(|&&s| s).count()
    }
}

fn ratio(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn term(at: f64, a: Option<f64>, b: Option<f64>) -> GapTerm {
    let diff = match (a, b) {
        (Some(x), Some(y)) => Some((x - y).abs()),
        _ => None,
    };
    GapTerm {
        at,
        group0: a,
        group1: b,
        diff,
    }
}

/// `½ Σ_y |D₀(Y=y | Ŷ=y) − D₁(Y=y | Ŷ=y)|` with `Ŷ` the sign of the score.
pub fn suf_gap_classification(preds: &PredictionSet) -> Result<GapReport> {
    if preds.task != Task::BinaryClassification {
        return Err(Error::Metric("classification gap on a regression set".into()));
    }
    preds.require_both_groups()?;
    let mut terms = Vec::with_capacity(2);
    for y in [-1.0, 1.0] {
        let cond = |g| {
            let (mut hit, mut tot) = (0, 0);
            for (t, s) in preds.samples(g) {
                if decide(s) == y {
                    tot += 1;
                    hit += usize::from(t == y);
                }
            }
            ratio(hit, tot)
        };
        terms.push(term(y, cond(0), cond(1)));
    }
    GapReport::from_terms(terms, |d| 0.5 * d.iter().sum::<f64>(), "classification sufficiency gap")
}

/// Thresholds at the `i/(m+1)` nearest-rank quantiles of the pooled scores.
pub fn quantile_thresholds(scores: &[f64], m: usize) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..=m)
        .map(|i| {
            let rank = ((i as f64 / (m + 1) as f64) * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        })
        .collect()
}

/// Mean over sampled `t` of `|D₀(Y≤t | Ŷ≤t) − D₁(Y≤t | Ŷ≤t)|`.
pub fn suf_gap_regression(preds: &PredictionSet, m: usize) -> Result<GapReport> {
    if preds.task != Task::Regression {
        return Err(Error::Metric("regression gap on a classification set".into()));
    }
    if m < 2 {
        return Err(Error::Metric(format!("need at least 2 thresholds, got {m}")));
    }
    preds.require_both_groups()?;
    // Per group, samples sorted by score so each threshold is a prefix.
    let mut by_group: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for g in 0..2u8 {
        by_group[g as usize] = preds.samples(g).map(|(y, s)| (s, y)).collect();
        by_group[g as usize].sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let cond = |g: usize, t: f64| {
        let v = &by_group[g];
        let k = v.partition_point(|&(s, _)| s <= t);
        ratio(v[..k].iter().filter(|&&(_, y)| y <= t).count(), k)
    };
    let terms = quantile_thresholds(&preds.y_score, m)
        .into_iter()
        .map(|t| term(t, cond(0, t), cond(1, t)))
        .collect();
    GapReport::from_terms(
        terms,
        |d| d.iter().sum::<f64>() / d.len() as f64,
        "regression sufficiency gap",
    )
}

/// The task's default gap (`m` thresholds for regression).
pub fn suf_gap(preds: &PredictionSet, m: usize) -> Result<GapReport> {
    match preds.task {
        Task::Regression => suf_gap_regression(preds, m),
        Task::BinaryClassification => suf_gap_classification(preds),
    }
}

/// Unweighted mean over the two groups of accuracy or MSE, plus the
/// per-group values.
pub fn performance(preds: &PredictionSet) -> Result<(f64, [f64; 2])> {
    preds.require_both_groups()?;
    let mut per = [0.0; 2];
    for g in 0..2u8 {
        let (mut acc, mut n) = (0.0, 0usize);
        for (y, s) in preds.samples(g) {
            acc += match preds.task {
                Task::Regression => (s - y).powi(2),
                Task::BinaryClassification => f64::from(u8::from(decide(s) == y)),
            };
            n += 1;
        }
        per[g as usize] = acc / n as f64;
    }
    Ok((0.5 * (per[0] + per[1]), per))
}

/// Demographic-parity gap: difference of mean scores (regression) or of
/// positive-decision rates (classification).
pub fn dp_gap(preds: &PredictionSet) -> Result<f64> {
    preds.require_both_groups()?;
    let mean = |g| {
        let (mut s, mut n) = (0.0, 0usize);
        for (_, score) in preds.samples(g) {
            s += match preds.task {
                Task::Regression => score,
                Task::BinaryClassification => f64::from(u8::from(decide(score) > 0.0)),
            };
            n += 1;
        }
        s / n as f64
    };
    Ok((mean(0) - mean(1)).abs())
}

/// `‖h₀ − h₁‖₂` over the flat parameters.
pub fn head_distance(h0: &Head, h1: &Head) -> Result<f64> {
    h0.params().check_layout(h1.params())?;
    Ok(h0.params().sub(h1.params()).norm())
}

/// Pearson correlation between the group index and the label.
pub fn group_label_pearson(group: &[u8], labels: &[f64]) -> Result<f64> {
    if group.len() != labels.len() || group.is_empty() {
        return Err(Error::Metric("pearson needs equal, non-empty inputs".into()));
    }
    let n = group.len() as f64;
    let gm = group.iter().map(|&g| f64::from(g)).sum::<f64>() / n;
    let ym = labels.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&g, &y) in group.iter().zip(labels) {
        let dx = f64::from(g) - gm;
        let dy = y - ym;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("pearson undefined: zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
