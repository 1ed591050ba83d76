use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GroupedDataset, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One group's mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupBatch {
    pub x: Tensor,
    pub y: Vec<f64>,
    /// Dataset rows the batch was drawn from.
    pub rows: Vec<usize>,
}

impl GroupBatch {
    pub fn from_rows(dataset: &GroupedDataset, rows: Vec<usize>) -> Self {
        Self {
            x: dataset.features().select_rows(&rows),
            y: rows.iter().map(|&i| dataset.labels()[i]).collect(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Endless stream of paired group batches sampled with replacement.
#[derive(Clone, Debug)]
pub struct BatchStream<'a> {
    dataset: &'a GroupedDataset,
    pools: [Vec<usize>; 2],
    size: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchStream<'a> {
    pub fn new(dataset: &'a GroupedDataset, split: Split, size_per_group: usize, seed: u64) -> Result<Self> {
        if size_per_group == 0 {
            return Err(Error::config("batch_size_per_group", "must be positive"));
        }
        let pools = [dataset.rows(split, 0), dataset.rows(split, 1)];
        for (g, p) in pools.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Data(format!(
                    "group {g} has no rows in the {} split",
                    split.name()
                )));
            }
        }
        Ok(Self {
            dataset,
            pools,
            size: size_per_group,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn pool_sizes(&self) -> [usize; 2] {
        [self.pools[0].len(), self.pools[1].len()]
    }

    pub fn next_pair(&mut self) -> [GroupBatch; 2] {
        let mut draw = |g: usize| {
            let pool = &self.pools[g];
            let rows = (0..self.size)
                .map(|_| pool[self.rng.random_range(0..pool.len())])
                .collect();
            GroupBatch::from_rows(self.dataset, rows)
        };
        let b0 = draw(0);
        let b1 = draw(1);
        [b0, b1]
    }
}

impl Iterator for BatchStream<'_> {
    type Item = [GroupBatch; 2];

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_pair())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Task;

    fn ds(n0: usize, n1: usize) -> GroupedDataset {
        let n = n0 + n1;
        let mut group = vec![0u8; n0];
        group.extend(vec![1u8; n1]);
        GroupedDataset::new(
            Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap(),
            (0..n).map(|i| i as f64).collect(),
            group,
            vec!["x".into()],
            Task::Regression,
            "t",
        )
        .unwrap()
    }

    #[test]
    fn singleton_groups_repeat() {
        let d = ds(1, 1);
        let mut s = BatchStream::new(&d, Split::Train, 1, 0).unwrap();
        for _ in 0..5 {
            let [a, b] = s.next_pair();
            assert_eq!((a.rows, b.rows), (vec![0], vec![1]));
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let d = ds(20, 30);
        let a: Vec<_> = BatchStream::new(&d, Split::Train, 4, 9).unwrap().take(5).collect();
        let b: Vec<_> = BatchStream::new(&d, Split::Train, 4, 9).unwrap().take(5).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|[x, y]| x.len() == 4 && y.len() == 4));
        assert!(a.iter().all(|[x, y]| x.rows.iter().all(|&r| r < 20) && y.rows.iter().all(|&r| r >= 20)));
    }

    #[test]
    fn sampling_is_uniform() {
        let d = ds(10, 1);
        let mut s = BatchStream::new(&d, Split::Train, 100, 3).unwrap();
        let mut counts = [0usize; 10];
        for _ in 0..1000 {
            for r in s.next_pair()[0].rows.iter() {
                counts[*r] += 1;
            }
        }
        let n: f64 = 100_000.0;
        let p = 0.1;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn missing_group_rejected() {
        let d = ds(3, 0);
        assert!(BatchStream::new(&d, Split::Train, 2, 0).is_err());
    }
}
