//! Stratified hold-out test split plus five-fold train/validation partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_FOLDS: usize = 5;
pub const TEST_FRACTION: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub test: Vec<usize>,
    pub folds: Vec<Fold>,
}

/// Split record indices by label.
///
/// The test set takes `round(0.15 N)` records, apportioned across classes by
/// largest remainder. The rest are dealt round-robin into five folds, class
/// by class with one running counter, so every fold's size and per-class
/// count are within one of each other.
pub fn make_folds(labels: &[u8], seed: u64) -> Result<FoldPlan> {
    if labels.len() < 10 {
        return Err(Error::Invalid(format!("need at least 10 records, got {}", labels.len())));
    }
    let mut classes: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        classes
            .get_mut(l as usize)
            .ok_or_else(|| Error::Invalid(format!("record {i}: label {l} is not binary")))?
            .push(i);
    }
    if classes.iter().any(Vec::is_empty) {
        return Err(Error::Invalid("both labels must be present to stratify folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in &mut classes {
        c.shuffle(&mut rng);
    }

    let n = labels.len() as f64;
    let total_test = (TEST_FRACTION * n).round() as usize;
    let quotas: Vec<f64> = classes.iter().map(|c| TEST_FRACTION * n * c.len() as f64 / n).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut short = total_test.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(classes.len() * 2) {
        if short == 0 {
            break;
        }
        if take[c] < classes[c].len() {
            take[c] += 1;
            short -= 1;
        }
    }

    let mut test = Vec::new();
    let mut val: Vec<Vec<usize>> = vec![Vec::new(); NUM_FOLDS];
    let mut next = 0;
    for (c, members) in classes.iter().enumerate() {
        test.extend_from_slice(&members[..take[c]]);
        for &i in &members[take[c]..] {
            val[next % NUM_FOLDS].push(i);
            next += 1;
        }
    }
    test.sort_unstable();
    let folds = (0..NUM_FOLDS)
        .map(|f| {
            let mut v = val[f].clone();
            v.sort_unstable();
            let mut train: Vec<usize> = (0..NUM_FOLDS).filter(|&g| g != f).flat_map(|g| val[g].clone()).collect();
            train.sort_unstable();
            Fold { train, val: v }
        })
        .collect();
    Ok(FoldPlan { seed, test, folds })
}
