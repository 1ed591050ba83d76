use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GroupedDataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Train, validation, test.
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

fn default_fractions() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: default_fractions(),
            seed: 0,
        }
    }
}

/// Largest-remainder apportionment of `n` rows to the three fractions.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Stratified by group: each group is shuffled under `seed` and cut by
/// `fractions`, so group ratios carry over to every split.
pub fn split(dataset: &GroupedDataset, spec: &SplitSpec) -> Result<GroupedDataset> {
    let f = spec.fractions;
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "split.fractions",
            format!("{f:?} must be in [0,1] and sum to 1"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assignment = vec![Split::Train; dataset.len()];
    for g in 0..2u8 {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.group()[i] == g).collect();
        let counts = apportion(idx.len(), &f);
        for (k, (&c, &frac)) in counts.iter().zip(&f).enumerate() {
            if frac > 0.0 && c == 0 {
                return Err(Error::Data(format!(
                    "group {g} has {} rows, too few to place one in the {} split",
                    idx.len(),
                    Split::ALL[k].name()
                )));
            }
        }
        idx.shuffle(&mut rng);
        let mut pos = 0;
        for (k, &c) in counts.iter().enumerate() {
            for &i in &idx[pos..pos + c] {
                assignment[i] = Split::ALL[k];
            }
            pos += c;
        }
    }
    let mut out = dataset.clone();
    out.set_splits(assignment)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::models::Task;

    fn ds(n0: usize, n1: usize) -> GroupedDataset {
        let n = n0 + n1;
        let mut group = vec![0u8; n0];
        group.extend(vec![1u8; n1]);
        GroupedDataset::new(
            Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap(),
            vec![0.0; n],
            group,
            vec!["x".into()],
            Task::Regression,
            "t",
        )
        .unwrap()
    }

    #[test]
    fn sizes_follow_fractions() {
        let s = split(&ds(50, 50), &SplitSpec::default()).unwrap();
        let sizes: Vec<usize> = Split::ALL.iter().map(|&k| s.split_rows(k).len()).collect();
        assert_eq!(sizes, vec![70, 10, 20]);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = split(&ds(30, 20), &SplitSpec { seed: 4, ..Default::default() }).unwrap();
        let b = split(&ds(30, 20), &SplitSpec { seed: 4, ..Default::default() }).unwrap();
        let c = split(&ds(30, 20), &SplitSpec { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(a.splits(), b.splits());
        assert_ne!(a.splits(), c.splits());
    }

    #[test]
    fn preserves_group_ratio() {
        let s = split(&ds(60, 40), &SplitSpec::default()).unwrap();
        for k in Split::ALL {
            let [c0, c1] = s.group_counts(k);
            let total = (c0 + c1) as f64;
            // ~60/40 within one row
            assert!((c0 as f64 - 0.6 * total).abs() <= 1.0, "{k:?}: {c0}/{c1}");
        }
    }

    #[test]
    fn tiny_group_rejected() {
        assert!(split(&ds(1, 50), &SplitSpec::default()).is_err());
        assert!(split(&ds(10, 10), &SplitSpec { fractions: [0.5, 0.2, 0.2], seed: 0 }).is_err());
    }
}
