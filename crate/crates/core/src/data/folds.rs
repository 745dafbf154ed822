use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// K-fold partition of record ids; every id lands in exactly one test fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

/// Seeded shuffle followed by round-robin assignment to `k` test folds.
/// Ids keep their input order inside each train and test list.
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Argument(format!("k must be >= 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Argument(format!(
            "{} records cannot fill {k} folds",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; ids.len()];
    for (pos, &idx) in order.iter().enumerate() {
        fold_of[idx] = pos % k;
    }
    let folds = (0..k)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) =
                (0..ids.len()).partition(|&i| fold_of[i] == f);
            Fold {
                train: train.into_iter().map(|i| ids[i].clone()).collect(),
                test: test.into_iter().map(|i| ids[i].clone()).collect(),
            }
        })
        .collect();
    Ok(FoldPlan { folds })
}
