use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::DataError;
use crate::tensor::seeded_rng;

/// Index sets of a train/validation partition, each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Stratified split: per class, `floor(fraction · count)` items (at least
/// one when the class has two or more) go to validation.
pub fn split_indices(labels: &[usize], fraction: f64, seed: u64) -> Result<Split, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidConfig(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        warnings: Vec::new(),
    };
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            split
                .warnings
                .push(format!("class {class} has {} item(s); kept in train", idx.len()));
            split.train.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let n_val = ((fraction * idx.len() as f64).floor() as usize).max(1);
        split.val.extend_from_slice(&idx[..n_val]);
        split.train.extend_from_slice(&idx[n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    for w in &split.warnings {
        log::warn!("stratified split: {w}");
    }
    Ok(split)
}

/// Splits items into `(train, val)` using [`split_indices`].
pub fn split_train_val<T: Clone>(
    items: &[T],
    label: impl Fn(&T) -> usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), DataError> {
    let labels: Vec<usize> = items.iter().map(label).collect();
    let s = split_indices(&labels, fraction, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|i| items[*i].clone()).collect::<Vec<_>>();
    Ok((pick(&s.train), pick(&s.val)))
}
