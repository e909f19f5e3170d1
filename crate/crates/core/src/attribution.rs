//! Black-box feature attribution: interventional Shapley values (exact and
//! permutation-sampled) and permutation importance.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::rng;

/// Largest feature count accepted by [`shapley_exact`].
pub const MAX_EXACT_FEATURES: usize = 15;
pub const DEFAULT_BACKGROUND_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Exact,
    Sampled { n_perms: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub features: Vec<String>,
    pub phi: Vec<f64>,
    /// Monte-Carlo standard error per feature; zero for the exact method.
    pub std_error: Vec<f64>,
    /// Mean model output over the background rows.
    pub baseline: f64,
    /// Model output at the explained row.
    pub output: f64,
    pub method: Method,
    pub background_size: usize,
}

impl AttributionResult {
    /// `sum(phi) - (output - baseline)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.output - self.baseline)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("feature,phi,std_error\n");
        for ((f, p), s) in self.features.iter().zip(&self.phi).zip(&self.std_error) {
            out.push_str(&format!("{f},{p},{s}\n"));
        }
        out
    }
}

fn check_inputs(x: ArrayView1<'_, f64>, background: ArrayView2<'_, f64>, names: &[String]) -> Result<()> {
    if background.nrows() == 0 {
        return Err(Error::invalid("empty background set"));
    }
    if background.ncols() != x.len() || names.len() != x.len() {
        return Err(Error::invalid("explained row, background and feature names disagree on width"));
    }
    Ok(())
}

fn mean_output<F>(f: &F, rows: ArrayView2<'_, f64>) -> Result<f64>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Vec<f64>>,
{
    let p = f(rows)?;
    if p.len() != rows.nrows() {
        return Err(Error::invalid("model returned the wrong number of predictions"));
    }
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

/// Background rows with the columns in `mask` overwritten by `x`.
fn hybrid(x: ArrayView1<'_, f64>, background: ArrayView2<'_, f64>, mask: u32) -> Array2<f64> {
    let mut rows = background.to_owned();
    for j in 0..x.len() {
        if mask & (1 << j) != 0 {
            rows.column_mut(j).fill(x[j]);
        }
    }
    rows
}

/// Exact interventional Shapley values by enumerating all `2^d` coalitions.
pub fn shapley_exact<F>(
    f: &F,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    names: &[String],
) -> Result<AttributionResult>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Vec<f64>> + Sync,
{
    check_inputs(x, background, names)?;
    let d = x.len();
    if d > MAX_EXACT_FEATURES {
        return Err(Error::invalid(format!(
            "exact Shapley enumerates 2^d coalitions and supports d <= {MAX_EXACT_FEATURES}; \
             use the sampled method for d = {d}"
        )));
    }
    let n_masks = 1u32 << d;
    let values: Vec<f64> =
        (0..n_masks).into_par_iter().map(|m| mean_output(f, hybrid(x, background, m).view())).collect::<Result<_>>()?;
    let mut fact = vec![1.0f64; d + 1];
    for i in 1..=d {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..d).map(|s| fact[s] * fact[d - s - 1] / fact[d]).collect();
    let mut phi = vec![0.0; d];
    for (j, slot) in phi.iter_mut().enumerate() {
        let bit = 1u32 << j;
        let mut acc = 0.0;
        for m in 0..n_masks {
            if m & bit == 0 {
                let delta = values[(m | bit) as usize] - values[m as usize];
                if delta != 0.0 {
                    acc += weight[m.count_ones() as usize] * delta;
                }
            }
        }
        *slot = acc;
    }
    Ok(AttributionResult {
        features: names.to_vec(),
        phi,
        std_error: vec![0.0; d],
        baseline: values[0],
        output: values[(n_masks - 1) as usize],
        method: Method::Exact,
        background_size: background.nrows(),
    })
}

/// The feature order used by permutation `index` of a sampled explanation.
pub fn sampled_permutation(d: usize, seed: u64, index: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng::stream(seed, &[index as u64]));
    order
}

/// Marginal contributions along one feature ordering; they telescope to
/// `v(all) - v(empty)`.
fn permutation_contributions<F>(
    f: &F,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    order: &[usize],
    v_empty: f64,
) -> Result<Vec<f64>>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Vec<f64>>,
{
    let b = background.nrows();
    let d = order.len();
    // All d prefixes in one batch: block k has the first k+1 features set.
    let mut rows = Array2::zeros((b * d, d));
    let mut current = background.to_owned();
    for (k, &j) in order.iter().enumerate() {
        current.column_mut(j).fill(x[j]);
        rows.slice_mut(ndarray::s![k * b..(k + 1) * b, ..]).assign(&current);
    }
    let p = f(rows.view())?;
    if p.len() != b * d {
        return Err(Error::invalid("model returned the wrong number of predictions"));
    }
    let mut out = vec![0.0; d];
    let mut prev = v_empty;
    for (k, &j) in order.iter().enumerate() {
        let v = p[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64;
        out[j] = v - prev;
        prev = v;
    }
    Ok(out)
}

/// Permutation-sampling Shapley estimate with per-feature standard errors.
pub fn shapley_sample<F>(
    f: &F,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    names: &[String],
    n_perms: usize,
    seed: u64,
) -> Result<AttributionResult>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Vec<f64>> + Sync,
{
    check_inputs(x, background, names)?;
    if n_perms == 0 {
        return Err(Error::invalid("n_perms must be at least 1"));
    }
    let d = x.len();
    let v_empty = mean_output(f, background)?;
    let v_full = mean_output(f, hybrid_all(x, background.nrows()).view())?;
    let contribs: Vec<Vec<f64>> = (0..n_perms)
        .into_par_iter()
        .map(|i| permutation_contributions(f, x, background, &sampled_permutation(d, seed, i), v_empty))
        .collect::<Result<_>>()?;
    let n = n_perms as f64;
    let mut phi = vec![0.0; d];
    let mut std_error = vec![0.0; d];
    for j in 0..d {
        let m = contribs.iter().map(|c| c[j]).sum::<f64>() / n;
        phi[j] = m;
        if n_perms > 1 {
            let var = contribs.iter().map(|c| (c[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
            std_error[j] = (var / n).sqrt();
        }
    }
    Ok(AttributionResult {
        features: names.to_vec(),
        phi,
        std_error,
        baseline: v_empty,
        output: v_full,
        method: Method::Sampled { n_perms, seed },
        background_size: background.nrows(),
    })
}

fn hybrid_all(x: ArrayView1<'_, f64>, rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, x.len()));
    for mut r in out.axis_iter_mut(Axis(0)) {
        r.assign(&x);
    }
    out
}

/// Seeded subsample of up to `size` rows, kept in original order.
pub fn background_rows(x: ArrayView2<'_, f64>, size: usize, seed: u64) -> Array2<f64> {
    if x.nrows() <= size {
        return x.to_owned();
    }
    let mut idx = rand::seq::index::sample(&mut rng::stream(seed, &[0xb6]), x.nrows(), size).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationImportance {
    pub baseline_auc: f64,
    /// Mean AUC drop per feature, in input column order.
    pub drops: Vec<(String, f64)>,
    pub n_repeats: usize,
    pub seed: u64,
}

pub fn permutation_importance<F>(
    f: &F,
    x: ArrayView2<'_, f64>,
    y: &[u8],
    names: &[String],
    n_repeats: usize,
    seed: u64,
) -> Result<PermutationImportance>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Vec<f64>> + Sync,
{
    if names.len() != x.ncols() || y.len() != x.nrows() {
        return Err(Error::invalid("permutation importance inputs disagree on shape"));
    }
    if n_repeats == 0 {
        return Err(Error::invalid("n_repeats must be at least 1"));
    }
    let base = roc_auc(&f(x)?, y)?;
    let drops: Vec<f64> = (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let mut total = 0.0;
            for r in 0..n_repeats {
                let mut col: Vec<f64> = x.column(j).to_vec();
                col.shuffle(&mut rng::stream(seed, &[j as u64, r as u64]));
                let mut xs = x.to_owned();
                xs.column_mut(j).assign(&ArrayView1::from(&col));
                total += base - roc_auc(&f(xs.view())?, y)?;
            }
            Ok(total / n_repeats as f64)
        })
        .collect::<Result<_>>()?;
    Ok(PermutationImportance { baseline_auc: base, drops: names.iter().cloned().zip(drops).collect(), n_repeats, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    /// Rows explained per regime; rows are spread evenly over the regime.
    pub max_rows: usize,
    pub n_perms: usize,
    pub background_size: usize,
    pub seed: u64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig { max_rows: 40, n_perms: 8, background_size: DEFAULT_BACKGROUND_SIZE, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTable {
    /// `crash` or `non_crash`.
    pub regime: String,
    pub rows_in_regime: usize,
    pub rows_explained: usize,
    /// (feature, mean |phi|), descending.
    pub ranked: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub crash: RegimeTable,
    pub non_crash: RegimeTable,
    pub background_size: usize,
    pub n_perms: usize,
    pub seed: u64,
}

impl RegimeSummary {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("regime,rank,feature,mean_abs_phi\n");
        for t in [&self.crash, &self.non_crash] {
            for (i, (f, v)) in t.ranked.iter().enumerate() {
                out.push_str(&format!("{},{},{f},{v}\n", t.regime, i + 1));
            }
        }
        out
    }
}

fn spread(indices: &[usize], k: usize) -> Vec<usize> {
    if indices.len() <= k {
        return indices.to_vec();
    }
    (0..k).map(|i| indices[i * indices.len() / k]).collect()
}

/// Mean absolute sampled-Shapley value per feature over crash rows and over
/// non-crash rows, each ranked descending (ties by name).
pub fn regime_attribution_summary<F>(
    f: &F,
    x: ArrayView2<'_, f64>,
    y: &[u8],
    names: &[String],
    background: ArrayView2<'_, f64>,
    cfg: &RegimeConfig,
) -> Result<RegimeSummary>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Vec<f64>> + Sync,
{
    if y.len() != x.nrows() {
        return Err(Error::invalid("label and feature row counts differ"));
    }
    let mut tables = Vec::with_capacity(2);
    for (label, regime) in [(1u8, "crash"), (0u8, "non_crash")] {
        let members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == label).collect();
        if members.is_empty() {
            return Err(Error::data(format!("no {regime} rows to attribute")));
        }
        let picked = spread(&members, cfg.max_rows);
        let mut sum = vec![0.0; names.len()];
        for &i in &picked {
            let seed = rng::derive_seed(cfg.seed, &[i as u64]);
            let r = shapley_sample(f, x.row(i), background, names, cfg.n_perms, seed)?;
            for (s, p) in sum.iter_mut().zip(&r.phi) {
                *s += p.abs();
            }
        }
        let mut ranked: Vec<(String, f64)> =
            names.iter().cloned().zip(sum.into_iter().map(|s| s / picked.len() as f64)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        tables.push(RegimeTable {
            regime: regime.to_string(),
            rows_in_regime: members.len(),
            rows_explained: picked.len(),
            ranked,
        });
    }
    let non_crash = tables.pop().expect("two regimes");
    let crash = tables.pop().expect("two regimes");
    Ok(RegimeSummary { crash, non_crash, background_size: background.nrows(), n_perms: cfg.n_perms, seed: cfg.seed })
}

/// Mean |phi| per feature keyed by name, for quick lookups.
pub fn ranked_map(table: &RegimeTable) -> BTreeMap<String, f64> {
    table.ranked.iter().cloned().collect()
}
