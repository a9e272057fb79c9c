use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SplitPlan {
    pub fold_count: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            fold_count: 4,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold assignment with a stratified train/validation split
/// inside each fold.
///
/// Rows of each class are shuffled under `plan.seed` and dealt round-robin
/// into folds, continuing the deal across classes so fold sizes differ by at
/// most one. The validation part of a fold holds `floor(val_fraction * m)` of
/// its `m` non-test rows; the remainder is training data.
pub fn stratified_folds(labels: &[u8], plan: &SplitPlan) -> Result<Vec<FoldSplit>> {
    let k = plan.fold_count;
    let n = labels.len();
    if k < 2 {
        return Err(Error::Config("fold_count must be at least 2".into()));
    }
    if n < 2 * k {
        return Err(Error::Config(format!(
            "{n} rows are too few for {k} folds (need at least {})",
            2 * k
        )));
    }
    if !(plan.val_fraction > 0.0 && plan.val_fraction < 1.0) {
        return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 2];
    for (i, &y) in labels.iter().enumerate() {
        by_class[usize::from(y.min(1))].push(i);
    }
    for c in &mut by_class {
        c.shuffle(&mut rng);
    }

    let mut fold_of = vec![0usize; n];
    let mut rank_of = vec![0.0f64; n];
    let mut pos = 0usize;
    for class in &by_class {
        for (r, &i) in class.iter().enumerate() {
            fold_of[i] = pos % k;
            rank_of[i] = (r as f64 + 0.5) / class.len() as f64;
            pos += 1;
        }
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        // Interleave classes by within-class rank so any prefix is stratified.
        let mut rest: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        rest.sort_by(|&a, &b| {
            rank_of[a]
                .total_cmp(&rank_of[b])
                .then(labels[a].cmp(&labels[b]))
                .then(a.cmp(&b))
        });
        let n_val = (plan.val_fraction * rest.len() as f64).floor() as usize;
        let mut val = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        test.sort_unstable();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(FoldSplit { train, val, test });
    }
    Ok(folds)
}
