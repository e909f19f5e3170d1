use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column mean and population standard deviation from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_standardizer(x: ArrayView2<'_, f64>) -> Result<StandardizerStats> {
    if x.nrows() < 2 {
        return Err(Error::invalid("standardizer needs at least two rows"));
    }
    let n = x.nrows() as f64;
    let mut mean = Vec::with_capacity(x.ncols());
    let mut std = Vec::with_capacity(x.ncols());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let m = col.sum() / n;
        let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::data(format!("feature column {j} has zero spread in training rows")));
        }
        mean.push(m);
        std.push(s);
    }
    Ok(StandardizerStats { mean, std })
}

impl StandardizerStats {
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

pub fn apply_standardizer(stats: &StandardizerStats, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    stats.apply(x)
}
