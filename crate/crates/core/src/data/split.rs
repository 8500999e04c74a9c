//! Deterministic train / validation / test partitioning by day index.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: usize,
    pub validation: usize,
}

impl Default for SplitRatio {
    /// 181 training days against 18 validation days.
    fn default() -> Self {
        Self { train: 181, validation: 18 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Split sizes for `n` items: training takes the floor of its share, the
/// remainder goes to validation first and then test, and every part is
/// forced to hold at least one item by borrowing from training.
pub fn split_sizes(n: usize, ratio: SplitRatio) -> Result<(usize, usize, usize)> {
    let denom = ratio.train + ratio.validation;
    if denom == 0 {
        return Err(Error::InvalidConfig("split ratio must be positive".into()));
    }
    let mut train = n * ratio.train / denom;
    let rest = n - train;
    let mut validation = rest.div_ceil(2);
    let mut test = rest - validation;
    for part in [&mut validation, &mut test] {
        if *part == 0 && train > 0 {
            *part = 1;
            train -= 1;
        }
    }
    if train == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if validation == 0 {
        return Err(Error::EmptySplit("validation"));
    }
    if test == 0 {
        return Err(Error::EmptySplit("test"));
    }
    Ok((train, validation, test))
}

/// Sorts by day index and cuts consecutive runs with [`split_sizes`].
pub fn split_dataset<T>(mut items: Vec<T>, day: impl Fn(&T) -> i32, ratio: SplitRatio) -> Result<Split<T>> {
    let (train, validation, _) = split_sizes(items.len(), ratio)?;
    items.sort_by_key(|it| day(it));
    let test = items.split_off(train + validation);
    let validation = items.split_off(train);
    Ok(Split { train: items, validation, test })
}

/// Training from the earlier regime; validation and test from the later one,
/// the later days halved (validation gets the extra day when odd).
pub fn split_by_regime<T>(first: Vec<T>, mut second: Vec<T>, day: impl Fn(&T) -> i32) -> Result<Split<T>> {
    if first.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if second.len() < 2 {
        return Err(Error::EmptySplit(if second.is_empty() { "validation" } else { "test" }));
    }
    let mut train = first;
    train.sort_by_key(|it| day(it));
    second.sort_by_key(|it| day(it));
    let test = second.split_off(second.len().div_ceil(2));
    Ok(Split { train, validation: second, test })
}
