use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 210,
            val: 20,
            test: 20,
        }
    }
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Trial-level split of `items`. Validation and test get exactly their
/// counts; training gets everything else, which is `counts.train` when
/// exactly `counts.total()` items are given.
pub fn split_trials<T: Clone>(items: &[T], counts: SplitCounts, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.len() < counts.total() {
        return Err(Error::InsufficientTrials {
            needed: counts.total(),
            available: items.len(),
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| items[i].clone()).collect::<Vec<_>>()
    };
    let val = pick(&order[..counts.val]);
    let test = pick(&order[counts.val..counts.val + counts.test]);
    let train = pick(&order[counts.val + counts.test..]);
    Ok((train, val, test))
}
