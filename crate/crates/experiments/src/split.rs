//! Train / validation / test partitions.

use std::collections::BTreeMap;

use cpr_core::model::Dataset;
use cpr_core::{CprError, Result, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Disjoint sample indices; validation and test differ in size by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Split<T: Scalar> {
    pub indices: SplitIndices,
    pub train: Dataset<T>,
    pub validation: Dataset<T>,
    pub test: Dataset<T>,
}

/// Shuffles with a seeded ChaCha8 stream, puts `train_size` samples in the
/// training set and deals the rest alternately to validation and test.
/// With `stratify`, each stratum (label, plus group when present) is
/// allocated proportionally, and every class must appear in every part.
pub fn split<T: Scalar>(data: &Dataset<T>, train_size: usize, seed: u64, stratify: bool) -> Result<Split<T>> {
    let indices = split_indices(data.labels(), data.groups(), train_size, seed, stratify)?;
    Ok(Split {
        train: data.select(&indices.train)?,
        validation: data.select(&indices.validation)?,
        test: data.select(&indices.test)?,
        indices,
    })
}

pub fn split_indices(labels: &[i8], groups: Option<&[usize]>, train_size: usize, seed: u64, stratify: bool) -> Result<SplitIndices> {
    let n = labels.len();
    if train_size >= n {
        return Err(CprError::InvalidInput(format!("train size {train_size} must be below n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = if stratify {
        let mut map: BTreeMap<(i8, usize), Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            map.entry((labels[i], groups.map_or(0, |g| g[i]))).or_default().push(i);
        }
        map.into_values().collect()
    } else {
        vec![(0..n).collect()]
    };
    // Largest-remainder allocation of the training quota.
    let mut quota: Vec<usize> = strata.iter().map(|s| s.len() * train_size / n).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by_key(|&s| std::cmp::Reverse((strata[s].len() * train_size) % n));
    let mut left = train_size - quota.iter().sum::<usize>();
    for &s in order.iter().cycle().take(strata.len() * 2) {
        if left == 0 {
            break;
        }
        if quota[s] < strata[s].len() {
            quota[s] += 1;
            left -= 1;
        }
    }
    let mut out = SplitIndices { train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    let mut to_validation = true;
    for (s, mut members) in strata.into_iter().enumerate() {
        members.shuffle(&mut rng);
        out.train.extend_from_slice(&members[..quota[s]]);
        for &i in &members[quota[s]..] {
            if to_validation {
                out.validation.push(i);
            } else {
                out.test.push(i);
            }
            to_validation = !to_validation;
        }
    }
    if stratify {
        for (name, part) in [("train", &out.train), ("validation", &out.validation), ("test", &out.test)] {
            for class in [1i8, -1] {
                if labels.contains(&class) && !part.iter().any(|&i| labels[i] == class) {
                    return Err(CprError::InvalidInput(format!("class {class:+} absent from the {name} split")));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(pos: usize, neg: usize) -> Vec<i8> {
        let mut l = vec![1; pos];
        l.extend(vec![-1; neg]);
        l
    }

    #[test]
    fn default_sizes() {
        let s = split_indices(&labels(90, 110), None, 100, 1, false).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (100, 50, 50));
    }

    #[test]
    fn stratified_balanced_input_stays_balanced() {
        let l = labels(100, 100);
        let s = split_indices(&l, None, 100, 3, true).unwrap();
        for part in [&s.train, &s.validation, &s.test] {
            let pos = part.iter().filter(|&&i| l[i] == 1).count() as i64;
            assert!((2 * pos - part.len() as i64).abs() <= 1, "{pos} of {}", part.len());
        }
    }

    #[test]
    fn groups_are_stratified_too() {
        let l = labels(40, 40);
        let g: Vec<usize> = (0..80).map(|i| i % 4).collect();
        let s = split_indices(&l, Some(&g), 40, 4, true).unwrap();
        for grp in 0..4 {
            let c = s.train.iter().filter(|&&i| g[i] == grp).count();
            assert_eq!(c, 10);
        }
    }

    #[test]
    fn same_seed_same_split() {
        let l = labels(50, 50);
        assert_eq!(split_indices(&l, None, 60, 5, true).unwrap(), split_indices(&l, None, 60, 5, true).unwrap());
        assert_ne!(split_indices(&l, None, 60, 5, true).unwrap(), split_indices(&l, None, 60, 6, true).unwrap());
    }

    #[test]
    fn errors() {
        assert!(split_indices(&labels(5, 5), None, 10, 1, false).is_err());
        // Two positives cannot cover three parts.
        assert!(split_indices(&labels(2, 20), None, 11, 1, true).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_and_complete(pos in 3usize..60, neg in 3usize..60, frac in 0.1f64..0.8, seed in 0u64..100, strat in any::<bool>()) {
            let l = labels(pos, neg);
            let n = l.len();
            let train = ((n as f64) * frac) as usize;
            if let Ok(s) = split_indices(&l, None, train, seed, strat) {
                prop_assert_eq!(s.train.len(), train);
                prop_assert!((s.validation.len() as i64 - s.test.len() as i64).abs() <= 1);
                let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
