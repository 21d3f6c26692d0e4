//! Stratified fold assignment.

use rand::seq::SliceRandom;

use super::EvalError;
use crate::seed::rng_for;

fn class_members(labels: &[u8], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_for(seed, &[]);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    (pos, neg)
}

/// `k` disjoint folds covering every index. Positives are dealt round-robin after a
/// seeded shuffle and negatives continue the rotation, so per-fold class counts and
/// fold sizes each differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    let (pos, neg) = class_members(labels, seed);
    let minority = pos.len().min(neg.len());
    if k < 2 || k > minority {
        return Err(EvalError::TooManyFolds { k, minority });
    }
    let mut folds = vec![Vec::new(); k];
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        folds[j % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Stratified `(train, validation)` split with about `fraction` of each class held out,
/// at least one per class on each side.
pub fn stratified_holdout(labels: &[u8], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::Plan(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let (pos, neg) = class_members(labels, seed);
    if pos.len() < 2 || neg.len() < 2 {
        return Err(EvalError::TooManyFolds { k: 2, minority: pos.len().min(neg.len()) });
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for members in [pos, neg] {
        let m = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        val.extend_from_slice(&members[..m]);
        train.extend_from_slice(&members[m..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pos_counts(folds: &[Vec<usize>], y: &[u8]) -> Vec<usize> {
        folds.iter().map(|f| f.iter().filter(|&&i| y[i] == 1).count()).collect()
    }

    #[test]
    fn spec_cases() {
        let y = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let f = stratified_kfold(&y, 5, 3).unwrap();
        assert_eq!(pos_counts(&f, &y), vec![1; 5]);
        let y = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let f = stratified_kfold(&y, 5, 3).unwrap();
        let c = pos_counts(&f, &y);
        assert!(c.iter().all(|&v| v == 1 || v == 2));
        assert_eq!(c.iter().sum::<usize>(), 6);
        let y = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        assert!(matches!(stratified_kfold(&y, 6, 0), Err(EvalError::TooManyFolds { k: 6, minority: 5 })));
        assert!(stratified_kfold(&y, 1, 0).is_err());
    }

    #[test]
    fn holdout_is_stratified() {
        let y: Vec<u8> = (0..50).map(|i| u8::from(i % 5 == 0)).collect();
        let (tr, va) = stratified_holdout(&y, 0.2, 1).unwrap();
        assert_eq!(tr.len() + va.len(), 50);
        assert_eq!(va.iter().filter(|&&i| y[i] == 1).count(), 2);
        assert_eq!(va.len(), 10);
        assert!(tr.iter().all(|i| !va.contains(i)));
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(y in prop::collection::vec(0u8..2, 10..120), k in 2usize..6, seed in any::<u64>()) {
            let p = y.iter().filter(|&&v| v == 1).count();
            prop_assume!(k <= p.min(y.len() - p));
            let folds = stratified_kfold(&y, k, seed).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
            for c in pos_counts(&folds, &y) {
                prop_assert!((c as f64 - p as f64 / k as f64).abs() < 1.0);
            }
            prop_assert_eq!(&folds, &stratified_kfold(&y, k, seed).unwrap());
        }
    }
}
