use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One expanding-window fold: train on `[0, a)`, test on `[a, b)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub fold: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Expanding-window splits. The trailing `n - floor(n * min_train_frac)` rows
/// are cut into `folds` contiguous blocks of equal size, the last block taking
/// the remainder; each fold trains on everything before its block.
pub fn time_series_splits(n: usize, folds: usize, min_train_frac: f64) -> Result<Vec<CvSplit>> {
    if folds < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if !(min_train_frac > 0.0 && min_train_frac < 1.0) {
        return Err(Error::invalid("min_train_frac must lie in (0, 1)"));
    }
    let first = (n as f64 * min_train_frac).floor() as usize;
    let trailing = n - first;
    let block = trailing / folds;
    if first == 0 || block == 0 {
        return Err(Error::invalid(format!("{n} rows cannot form {folds} non-empty folds")));
    }
    Ok((0..folds)
        .map(|s| {
            let a = first + s * block;
            let b = if s + 1 == folds { n } else { a + block };
            CvSplit { fold: s, train: 0..a, test: a..b }
        })
        .collect())
}
