use crate::error::{param_err, Result};
use crate::rng::Rng;

/// Order in which one epoch visits a dataset. The shuffle stream is
/// `(seed, epoch)`, so every epoch has its own reproducible order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub shuffle: bool,
    pub epoch: u64,
    /// Skip a trailing batch smaller than `batch_size`.
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn batches(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        if self.batch_size == 0 {
            return Err(param_err!("batch size must be positive"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        if self.shuffle {
            Rng::with_stream(self.seed, self.epoch).shuffle(&mut order);
        }
        Ok(order
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect())
    }
}

/// Disjoint train / validation index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    /// Fails if any index appears in both sets or twice in one.
    pub fn check_disjoint(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val) {
            if i >= n || seen[i] {
                return Err(param_err!(
                    "index {i} repeated or out of range in split of {n}"
                ));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Shuffles `0..n` with `seed` and takes the last `n_val` as validation.
pub fn split_indices(n: usize, n_val: usize, seed: u64) -> Result<Split> {
    if n_val > n {
        return Err(param_err!("validation size {n_val} exceeds {n} samples"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let val = order.split_off(n - n_val);
    let split = Split { train: order, val };
    split.check_disjoint(n)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(epoch: u64) -> BatchPlan {
        BatchPlan {
            seed: 9,
            batch_size: 4,
            shuffle: true,
            epoch,
            drop_last: false,
        }
    }

    #[test]
    fn replays_and_covers() {
        let a = plan(0).batches(10).unwrap();
        assert_eq!(a, plan(0).batches(10).unwrap());
        assert_ne!(a, plan(1).batches(10).unwrap());
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(a.last().unwrap().len(), 2);
        let dropped = BatchPlan {
            drop_last: true,
            ..plan(0)
        }
        .batches(10)
        .unwrap();
        assert_eq!(dropped.len(), 2);
    }

    #[test]
    fn unshuffled_is_in_order() {
        let p = BatchPlan {
            shuffle: false,
            ..plan(0)
        };
        assert_eq!(p.batches(5).unwrap(), vec![vec![0, 1, 2, 3], vec![4]]);
    }

    #[test]
    fn split_is_disjoint() {
        let s = split_indices(50, 12, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (38, 12));
        s.check_disjoint(50).unwrap();
        let bad = Split {
            train: vec![0, 1],
            val: vec![1],
        };
        assert!(bad.check_disjoint(3).is_err());
    }
}
