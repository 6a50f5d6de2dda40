//! Seeded k-fold partitioning with a train/validation split of the non-test folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices of one cross-validation round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `0..n` into `folds` near-equal groups from a seeded
/// permutation. The first `n % folds` groups hold one extra item.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || n < folds {
        return Err(Error::Invalid(format!(
            "cannot split {n} items into {folds} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Round `test_fold`: that fold is the test set, the rest is split 80/20 into
/// training and validation (validation gets `floor(len / 5)`).
pub fn fold_split(folds: &[Vec<usize>], test_fold: usize, seed: u64) -> Result<FoldSplit> {
    if test_fold >= folds.len() {
        return Err(Error::Invalid(format!(
            "fold {test_fold} does not exist ({} folds)",
            folds.len()
        )));
    }
    let mut rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != test_fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(
        seed ^ (test_fold as u64 + 1),
    ));
    let n_valid = rest.len() / 5;
    let valid = rest.split_off(rest.len() - n_valid);
    Ok(FoldSplit {
        train: rest,
        valid,
        test: folds[test_fold].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sized_corpus() {
        let f = kfold_split(11_337, 5, 0).unwrap();
        let sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2268, 2268, 2267, 2267, 2267]);
    }

    #[test]
    fn folds_partition_and_repeat() {
        let f = kfold_split(103, 5, 9).unwrap();
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert_eq!(f, kfold_split(103, 5, 9).unwrap());
        assert_ne!(f, kfold_split(103, 5, 10).unwrap());
    }

    #[test]
    fn round_split_is_eighty_twenty() {
        let f = kfold_split(100, 5, 1).unwrap();
        let s = fold_split(&f, 2, 1).unwrap();
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.valid.len(), 16);
        assert_eq!(s.train.len(), 64);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.valid)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_items_rejected() {
        assert!(kfold_split(3, 5, 0).is_err());
        assert!(fold_split(&kfold_split(10, 5, 0).unwrap(), 5, 0).is_err());
    }
}
