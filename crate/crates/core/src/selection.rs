//! Variance and collinearity filtering followed by mutual-information ranking.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::aligned_rows;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::market_data::LabelVector;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub variance_threshold: f64,
    pub correlation_threshold: f64,
    pub k: usize,
    pub mi_bins: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { variance_threshold: 1e-4, correlation_threshold: 0.95, k: 80, mi_bins: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedDrop {
    pub kept: String,
    pub dropped: String,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub candidates: usize,
    pub rows_used: usize,
    pub nan_rows_dropped: usize,
    pub dropped_low_variance: Vec<String>,
    pub dropped_correlated: Vec<CorrelatedDrop>,
    /// MI (nats) of every filter survivor.
    pub mi_scores: BTreeMap<String, f64>,
    /// MI of every candidate, including filtered columns.
    pub candidate_mi_scores: BTreeMap<String, f64>,
    /// Top-k survivors by MI descending, ties by name.
    pub selected: Vec<String>,
}

impl SelectionReport {
    /// `(name, score)` rows sorted by score descending, for bar-chart data.
    pub fn ranked_scores(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> = self.mi_scores.iter().map(|(k, v)| (k.clone(), *v)).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }
}

fn keep_columns(x: &FeatureMatrix, keep: &[usize]) -> FeatureMatrix {
    let names: Vec<String> = keep.iter().map(|&j| x.names[j].clone()).collect();
    x.select_columns(&names).expect("indices come from the matrix itself")
}

/// Drop columns whose sample variance is strictly below `threshold`.
pub fn variance_filter(x: &FeatureMatrix, threshold: f64) -> Result<(FeatureMatrix, Vec<String>)> {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..x.n_cols() {
        let col = x.values.column(j).to_vec();
        if stats::sample_variance(&col) < threshold {
            dropped.push(x.names[j].clone());
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::data("variance filter removed every feature"));
    }
    Ok((keep_columns(x, &keep), dropped))
}

/// Greedy collinearity filter. Columns are visited in name order; any later
/// column with `|rho| >= threshold` against a kept column is dropped.
pub fn correlation_filter(x: &FeatureMatrix, threshold: f64) -> (FeatureMatrix, Vec<CorrelatedDrop>) {
    let mut order: Vec<usize> = (0..x.n_cols()).collect();
    order.sort_by(|&a, &b| x.names[a].cmp(&x.names[b]));
    let cols: Vec<Vec<f64>> = order.iter().map(|&j| x.values.column(j).to_vec()).collect();
    let mut dropped = vec![false; cols.len()];
    let mut pairs = Vec::new();
    for i in 0..cols.len() {
        if dropped[i] {
            continue;
        }
        for j in i + 1..cols.len() {
            if dropped[j] {
                continue;
            }
            let rho = stats::pearson(&cols[i], &cols[j]);
            if rho.abs() >= threshold {
                dropped[j] = true;
                pairs.push(CorrelatedDrop { kept: x.names[order[i]].clone(), dropped: x.names[order[j]].clone(), rho });
            }
        }
    }
    let keep: Vec<usize> = order.iter().zip(&dropped).filter(|(_, d)| !**d).map(|(&j, _)| j).collect();
    (keep_columns(x, &keep), pairs)
}

/// Equal-frequency bin index per value. Edges sit at the sorted values with
/// ranks `floor(k n / bins)`; equal values always share a bin.
pub fn quantile_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..bins).map(|k| sorted[k * n / bins]).collect();
    edges.dedup();
    x.iter().map(|v| edges.partition_point(|e| e <= v)).collect()
}

/// Plug-in mutual information (nats) between a quantile-binned feature and
/// a binary label.
pub fn mutual_information(x: &[f64], y: &[u8], bins: usize) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid("feature and label lengths differ"));
    }
    if bins < 2 {
        return Err(Error::invalid("MI needs at least two bins"));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::invalid("MI needs both label classes"));
    }
    let b = quantile_bins(x, bins);
    let nb = b.iter().max().copied().unwrap_or(0) + 1;
    let mut joint = vec![[0usize; 2]; nb];
    for (&bi, &yi) in b.iter().zip(y) {
        joint[bi][usize::from(yi == 1)] += 1;
    }
    let n = x.len() as f64;
    let py = [(y.len() - positives) as f64 / n, positives as f64 / n];
    let mut mi = 0.0;
    for cell in &joint {
        let px = (cell[0] + cell[1]) as f64 / n;
        for c in 0..2 {
            if cell[c] > 0 {
                let pxy = cell[c] as f64 / n;
                mi += pxy * (pxy / (px * py[c])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Filter then rank by MI, keeping the top `k`.
pub fn select_top_k(
    features: &FeatureMatrix,
    labels: &LabelVector,
    config: &SelectionConfig,
) -> Result<SelectionReport> {
    if config.k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let mut names = features.names.clone();
    names.sort();
    let canonical = features.select_columns(&names)?;
    let (rows, y, nan_rows_dropped) = aligned_rows(&canonical, labels);
    if rows.len() < 3 {
        return Err(Error::data("too few labelled complete rows for selection"));
    }
    let aligned = canonical.select_rows(&rows);
    let (filtered, dropped_low_variance) = variance_filter(&aligned, config.variance_threshold)?;
    let (survivors, dropped_correlated) = correlation_filter(&filtered, config.correlation_threshold);

    let scores: Vec<f64> = (0..aligned.n_cols())
        .into_par_iter()
        .map(|j| mutual_information(&aligned.values.column(j).to_vec(), &y, config.mi_bins))
        .collect::<Result<_>>()?;
    let candidate_mi_scores: BTreeMap<String, f64> = aligned.names.iter().cloned().zip(scores).collect();
    let mi_scores: BTreeMap<String, f64> =
        survivors.names.iter().map(|n| (n.clone(), candidate_mi_scores[n])).collect();
    let mut report = SelectionReport {
        candidates: features.n_cols(),
        rows_used: rows.len(),
        nan_rows_dropped,
        dropped_low_variance,
        dropped_correlated,
        mi_scores,
        candidate_mi_scores,
        selected: Vec::new(),
    };
    report.selected = report.ranked_scores().into_iter().take(config.k).map(|(n, _)| n).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureKind, FeatureSpec};
    use chrono::NaiveDate;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn matrix(cols: Vec<(&str, Vec<f64>)>) -> FeatureMatrix {
        let n = cols[0].1.len();
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        FeatureMatrix {
            calendar: (0..n).map(|i| start + chrono::Days::new(i as u64)).collect(),
            names: cols.iter().map(|c| c.0.to_string()).collect(),
            values: Array2::from_shape_fn((n, cols.len()), |(i, j)| cols[j].1[i]),
            specs: cols.iter().map(|c| FeatureSpec::new(c.0, FeatureKind::Ret, vec![])).collect(),
        }
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn variance_filter_rules() {
        let n = noise(1, 1000);
        let m = matrix(vec![("a", vec![3.0; 1000]), ("b", n.clone())]);
        let (kept, dropped) = variance_filter(&m, 1e-4).unwrap();
        assert_eq!(dropped, vec!["a"]);
        assert_eq!(kept.names, vec!["b"]);
        // Strict inequality: variance equal to the threshold is retained.
        let v = stats::sample_variance(&n);
        assert_eq!(variance_filter(&m, v).unwrap().0.names, vec!["b"]);
        assert!(variance_filter(&matrix(vec![("a", vec![1.0; 5])]), 1e-4).is_err());
    }

    #[test]
    fn correlation_filter_greedy() {
        let a = noise(2, 500);
        let b = noise(3, 500);
        let m = matrix(vec![("c", a.clone()), ("a", a.clone()), ("b", a.clone()), ("z", b)]);
        let (kept, pairs) = correlation_filter(&m, 0.95);
        assert_eq!(kept.names, vec!["a", "z"]);
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.kept == "a"));
        // Idempotent.
        let (again, none) = correlation_filter(&kept, 0.95);
        assert_eq!(again.names, kept.names);
        assert!(none.is_empty());
    }

    #[test]
    fn mi_of_label_copy_is_ln2() {
        let y: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let x: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let mi = mutual_information(&x, &y, 10).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mi_small_fixture_matches_contingency_table() {
        // Two quantile bins split at the 5th smallest value.
        let x = [0.1, 0.5, 0.2, 0.9, 0.7, 0.3, 0.8, 0.6];
        let y = [0u8, 1, 0, 1, 0, 0, 1, 1];
        // low bin {0.1,0.2,0.3,0.5} -> y {0,0,0,1}; high {0.6,0.7,0.8,0.9} -> {1,0,1,1}
        let cells = [[3.0, 1.0], [1.0, 3.0]];
        let mut expected = 0.0;
        for row in cells {
            for c in row {
                let p: f64 = c / 8.0;
                expected += p * (p / (0.5 * 0.5)).ln();
            }
        }
        let mi = mutual_information(&x, &y, 2).unwrap();
        assert_eq!(mi, expected);
    }

    #[test]
    fn mi_edge_cases() {
        let y = [0u8, 1, 0, 1];
        assert_eq!(mutual_information(&[2.0; 4], &y, 10).unwrap(), 0.0);
        assert!(mutual_information(&[1.0, 2.0], &[1, 1], 2).is_err());
        assert!(mutual_information(&[1.0, 2.0], &[1], 2).is_err());
    }

    #[test]
    fn planted_feature_ranks_first_and_report_is_deterministic() {
        let n = 800;
        let y: Vec<u8> = noise(4, n).iter().map(|v| u8::from(*v > 0.8)).collect();
        let eps = noise(5, n);
        let signal: Vec<f64> = y.iter().zip(&eps).map(|(&l, e)| l as f64 + 0.3 * e).collect();
        let m = matrix(vec![("n1", noise(6, n)), ("sig", signal), ("n2", noise(7, n))]);
        let labels = LabelVector { calendar: m.calendar.clone(), y: y.clone(), horizon: 5, threshold: 0.01 };
        let cfg = SelectionConfig { k: 10, ..Default::default() };
        let r = select_top_k(&m, &labels, &cfg).unwrap();
        assert_eq!(r.selected[0], "sig");
        assert_eq!(r.selected.len(), 3);
        assert_eq!(r, select_top_k(&m, &labels, &cfg).unwrap());
        assert!(select_top_k(&m, &labels, &SelectionConfig { k: 0, ..cfg }).is_err());
    }
}
