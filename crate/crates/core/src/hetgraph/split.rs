use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{bail, Result};
use crate::rng;

/// Train/validation/test partition of a list of items (node ids or edges).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

/// Shuffle `items` with a seeded permutation and cut it into train, val and
/// test. Val and test sizes are `floor(n * ratio)`; the remainder goes to
/// train. An empty val part is not an error here.
pub fn make_split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment<T>> {
    if items.is_empty() {
        bail!(Config, "cannot split an empty set");
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        bail!(Config, "split ratios must lie in [0, 1], got {ratios:?}");
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        bail!(Config, "split ratios sum to {total}, expected 1");
    }
    let n = items.len();
    let n_val = floor_count(n, ratios[1]);
    let n_test = floor_count(n, ratios[2]);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let pick = |range: core::ops::Range<usize>| -> Vec<T> { order[range].iter().map(|&i| items[i].clone()).collect() };
    Ok(SplitAssignment {
        train: pick(0..n_train),
        val: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
        ratios,
        seed,
    })
}

fn floor_count(n: usize, ratio: f64) -> usize {
    // Tolerate representation error such as 10 * 0.1 landing just below 1.
    libm::floor(n as f64 * ratio + 1e-9) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

    #[test]
    fn ten_items() {
        let items: Vec<usize> = (0..10).collect();
        let s = make_split(&items, DEFAULT_RATIOS, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn seven_items_floor_rule() {
        let items: Vec<usize> = (0..7).collect();
        let s = make_split(&items, DEFAULT_RATIOS, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 0, 0));
    }

    #[test]
    fn deterministic_and_disjoint() {
        let items: Vec<usize> = (0..57).collect();
        let a = make_split(&items, DEFAULT_RATIOS, 11).unwrap();
        let b = make_split(&items, DEFAULT_RATIOS, 11).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        let c = make_split(&items, DEFAULT_RATIOS, 12).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn empty_and_bad_ratios() {
        assert!(make_split::<usize>(&[], DEFAULT_RATIOS, 0).is_err());
        assert!(make_split(&[1, 2, 3], [0.5, 0.5, 0.5], 0).is_err());
    }
}
