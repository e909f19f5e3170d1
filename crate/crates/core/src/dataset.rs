//! Label/feature alignment into a dense training table.

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::market_data::LabelVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub calendar: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub nan_rows_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblySummary {
    pub rows: usize,
    pub features: usize,
    pub nan_rows_dropped: usize,
    pub base_rate: f64,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn summary(&self) -> AssemblySummary {
        AssemblySummary {
            rows: self.n_rows(),
            features: self.x.ncols(),
            nan_rows_dropped: self.nan_rows_dropped,
            base_rate: self.y.iter().map(|&v| v as f64).sum::<f64>() / self.y.len().max(1) as f64,
        }
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            calendar: self.calendar[start..end].to_vec(),
            names: self.names.clone(),
            x: self.x.slice(ndarray::s![start..end, ..]).to_owned(),
            y: self.y[start..end].to_vec(),
            nan_rows_dropped: 0,
        }
    }

    /// Restrict to named columns in the given order.
    pub fn columns(&self, names: &[String]) -> Result<Dataset> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::data(format!("feature {n} missing from dataset")))
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            calendar: self.calendar.clone(),
            names: names.to_vec(),
            x: Array2::from_shape_fn((self.n_rows(), idx.len()), |(i, j)| self.x[[i, idx[j]]]),
            y: self.y.clone(),
            nan_rows_dropped: self.nan_rows_dropped,
        })
    }
}

/// Indices of feature rows whose date has a label and whose values are all
/// finite, the matching labels, and the count of dates dropped for NaNs.
pub fn aligned_rows(features: &FeatureMatrix, labels: &LabelVector) -> (Vec<usize>, Vec<u8>, usize) {
    let (mut i, mut j) = (0, 0);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0;
    while i < features.calendar.len() && j < labels.calendar.len() {
        match features.calendar[i].cmp(&labels.calendar[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if features.values.row(i).iter().all(|v| v.is_finite()) {
                    rows.push(i);
                    y.push(labels.y[j]);
                } else {
                    dropped += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    (rows, y, dropped)
}

/// Intersect the feature and label calendars and drop rows with any
/// non-finite feature.
pub fn assemble(features: &FeatureMatrix, labels: &LabelVector) -> Result<Dataset> {
    let (rows, y, dropped) = aligned_rows(features, labels);
    if rows.is_empty() {
        return Err(Error::data("features and labels share no complete rows"));
    }
    let sub = features.select_rows(&rows);
    Ok(Dataset { calendar: sub.calendar, names: sub.names, x: sub.values, y, nan_rows_dropped: dropped })
}
