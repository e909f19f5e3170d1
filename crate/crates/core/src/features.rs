//! Rolling feature engineering on daily log returns.
//!
//! Every rolling function returns a series the same length as its input with
//! NaN in the warm-up positions. Values at index `t` depend only on inputs up
//! to and including `t`, and each window is evaluated from scratch so appending
//! data never perturbs earlier outputs, not even in the last bit.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{ReturnPanel, DATE_FORMAT};
use crate::stats;

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn rolling<F>(xs: &[f64], w: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut out = vec![f64::NAN; xs.len()];
    if w == 0 || w > xs.len() {
        return out;
    }
    for t in w - 1..xs.len() {
        out[t] = f(&xs[t + 1 - w..=t]);
    }
    out
}

/// Rolling (volatility, skewness, excess kurtosis) over window `w`.
///
/// Volatility is the sample standard deviation. Skewness and kurtosis are
/// central moments about the window mean normalised by the population
/// standard deviation; a constant window yields NaN for both.
pub fn rolling_moments(returns: &[f64], w: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if w < 4 {
        return Err(Error::invalid(format!("moment window {w} must be at least 4")));
    }
    if returns.len() < w {
        return Err(Error::invalid("series shorter than moment window"));
    }
    let n = returns.len();
    let (mut vol, mut skew, mut kurt) = (vec![f64::NAN; n], vec![f64::NAN; n], vec![f64::NAN; n]);
    for t in w - 1..n {
        let (v, s, k) = window_moments(&returns[t + 1 - w..=t]);
        vol[t] = v;
        skew[t] = s;
        kurt[t] = k;
    }
    Ok((vol, skew, kurt))
}

fn window_moments(x: &[f64]) -> (f64, f64, f64) {
    let (lo, hi) = min_max(x);
    if lo == hi {
        return (0.0, f64::NAN, f64::NAN);
    }
    let w = x.len() as f64;
    let m = stats::mean(x);
    let (m2, m3, m4) = x.iter().fold((0.0, 0.0, 0.0), |(a, b, c), v| {
        let d = v - m;
        let d2 = d * d;
        (a + d2, b + d2 * d, c + d2 * d2)
    });
    let vol = (m2 / (w - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / w, m3 / w, m4 / w);
    (vol, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

fn histogram_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let pos = ((x - lo) / (hi - lo) * bins as f64).floor();
    if pos <= 0.0 {
        0
    } else {
        (pos as usize).min(bins - 1)
    }
}

/// Rolling Shannon entropy (nats) of an equal-width histogram spanning each
/// window's min..max.
pub fn rolling_entropy(returns: &[f64], w: usize, bins: usize) -> Result<Vec<f64>> {
    if w < 2 || bins < 2 {
        return Err(Error::invalid("entropy needs window >= 2 and bins >= 2"));
    }
    Ok(rolling(returns, w, |x| window_entropy(x, bins)))
}

fn window_entropy(x: &[f64], bins: usize) -> f64 {
    let (lo, hi) = min_max(x);
    if lo == hi {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    for &v in x {
        counts[histogram_index(v, lo, hi, bins)] += 1;
    }
    let n = x.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Anis-Lloyd expected rescaled range of `n` iid Gaussian draws.
pub fn expected_rescaled_range(n: usize) -> f64 {
    assert!(n >= 2);
    // Gamma((n-1)/2) / Gamma(n/2) by two-step recursion from n = 2 or 3.
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let (mut k, mut ratio) = if n.is_multiple_of(2) { (2, sqrt_pi) } else { (3, 2.0 / sqrt_pi) };
    while k < n {
        ratio *= (k as f64 - 1.0) / k as f64;
        k += 2;
    }
    let sum: f64 = (1..n).map(|i| ((n - i) as f64 / i as f64).sqrt()).sum();
    ratio / sqrt_pi * sum
}

/// Rescaled range of one block: range of mean-adjusted partial sums over the
/// population standard deviation. `None` when the block is constant.
pub fn rescaled_range(block: &[f64]) -> Option<f64> {
    let (lo, hi) = min_max(block);
    if lo == hi {
        return None;
    }
    let m = stats::mean(block);
    let mut acc = 0.0;
    let (mut ymin, mut ymax) = (0.0f64, 0.0f64);
    let mut ss = 0.0;
    for v in block {
        let d = v - m;
        acc += d;
        ymin = ymin.min(acc);
        ymax = ymax.max(acc);
        ss += d * d;
    }
    let s = (ss / block.len() as f64).sqrt();
    (s > 0.0).then(|| (ymax - ymin) / s)
}

/// Hurst exponent of one window whose length is a power of two (>= 16).
///
/// Block sizes are the window, its half and its quarter. The mean R/S at each
/// size is compared against the Anis-Lloyd iid expectation and
/// `H = 0.5 + slope` of the log excess on `ln n`.
pub fn window_hurst(x: &[f64]) -> f64 {
    let tau = x.len();
    let mut pts = Vec::with_capacity(3);
    for n in [tau / 4, tau / 2, tau] {
        let vals: Vec<f64> = x.chunks_exact(n).filter_map(rescaled_range).collect();
        if vals.is_empty() {
            return f64::NAN;
        }
        let avg = stats::mean(&vals);
        pts.push(((n as f64).ln(), avg.ln() - expected_rescaled_range(n).ln()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    match stats::ols_line(&xs, &ys) {
        Some((_, slope)) => 0.5 + slope,
        None => f64::NAN,
    }
}

pub fn hurst_exponent(returns: &[f64], tau: usize) -> Result<Vec<f64>> {
    if tau < 16 || !tau.is_power_of_two() {
        return Err(Error::invalid(format!("Hurst scale {tau} must be a power of two >= 16")));
    }
    if returns.len() < tau {
        return Err(Error::invalid("series shorter than Hurst scale"));
    }
    Ok(rolling(returns, tau, window_hurst))
}

fn check_pair(asset: &[f64], target: &[f64], w: usize) -> Result<()> {
    if asset.len() != target.len() {
        return Err(Error::invalid("asset and target series differ in length"));
    }
    if w < 3 {
        return Err(Error::invalid(format!("window {w} must be at least 3")));
    }
    Ok(())
}

fn rolling_pair<F>(asset: &[f64], target: &[f64], w: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let mut out = vec![f64::NAN; asset.len()];
    if w > asset.len() {
        return out;
    }
    for t in w - 1..asset.len() {
        out[t] = f(&asset[t + 1 - w..=t], &target[t + 1 - w..=t]);
    }
    out
}

/// Rolling OLS slope of `asset` on `target` (with intercept).
pub fn rolling_beta(asset: &[f64], target: &[f64], w: usize) -> Result<Vec<f64>> {
    check_pair(asset, target, w)?;
    Ok(rolling_pair(asset, target, w, |a, b| {
        let (lo, hi) = min_max(b);
        if lo == hi {
            return f64::NAN;
        }
        let (sbb, _, sab) = stats::centered_products(b, a);
        sab / sbb
    }))
}

pub fn rolling_correlation(asset: &[f64], target: &[f64], w: usize) -> Result<Vec<f64>> {
    check_pair(asset, target, w)?;
    Ok(rolling_pair(asset, target, w, |a, b| {
        let (alo, ahi) = min_max(a);
        let (blo, bhi) = min_max(b);
        if alo == ahi || blo == bhi {
            return f64::NAN;
        }
        stats::pearson(a, b)
    }))
}

/// Laplace pseudo-count used by [`rolling_kl`].
pub fn kl_smoothing(bins: usize) -> f64 {
    1.0 / (10.0 * bins as f64)
}

/// Rolling KL divergence of the trailing `w_curr` returns against the trailing
/// `w_ref` returns, both histogrammed on the reference window's equal-width bins.
pub fn rolling_kl(returns: &[f64], w_curr: usize, w_ref: usize, bins: usize) -> Result<Vec<f64>> {
    if w_curr == 0 || w_ref <= w_curr {
        return Err(Error::invalid("KL needs 0 < w_curr < w_ref"));
    }
    if bins < 2 {
        return Err(Error::invalid("KL needs at least two bins"));
    }
    if returns.len() < w_ref {
        return Err(Error::invalid("series shorter than KL reference window"));
    }
    Ok(rolling(returns, w_ref, |reference| window_kl(&reference[w_ref - w_curr..], reference, bins)))
}

pub fn window_kl(current: &[f64], reference: &[f64], bins: usize) -> f64 {
    let (lo, hi) = min_max(reference);
    if lo == hi {
        return f64::NAN;
    }
    let eps = kl_smoothing(bins);
    let hist = |xs: &[f64]| {
        let mut c = vec![eps; bins];
        for &v in xs {
            c[histogram_index(v, lo, hi, bins)] += 1.0;
        }
        let total = xs.len() as f64 + bins as f64 * eps;
        c.into_iter().map(|v| v / total).collect::<Vec<f64>>()
    };
    let p = hist(current);
    let q = hist(reference);
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Ret,
    Vol,
    Skew,
    Kurt,
    Entropy,
    Hurst,
    Beta,
    Corr,
    Kl,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 9] = [
        FeatureKind::Ret,
        FeatureKind::Vol,
        FeatureKind::Skew,
        FeatureKind::Kurt,
        FeatureKind::Entropy,
        FeatureKind::Hurst,
        FeatureKind::Beta,
        FeatureKind::Corr,
        FeatureKind::Kl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Ret => "ret",
            FeatureKind::Vol => "vol",
            FeatureKind::Skew => "skew",
            FeatureKind::Kurt => "kurt",
            FeatureKind::Entropy => "entropy",
            FeatureKind::Hurst => "hurst",
            FeatureKind::Beta => "beta",
            FeatureKind::Corr => "corr",
            FeatureKind::Kl => "kl",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature kind `{s}`")))
    }
}

/// Identity and lineage of one feature column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub source_symbol: String,
    pub kind: FeatureKind,
    /// `[]` for returns, `[w]` for windowed kinds, `[tau]` for Hurst,
    /// `[w_curr, w_ref]` for KL.
    pub params: Vec<usize>,
    pub name: String,
}

fn hurst_label(tau: usize) -> String {
    match tau {
        16 => "short".into(),
        64 => "medium".into(),
        256 => "long".into(),
        other => other.to_string(),
    }
}

impl FeatureSpec {
    pub fn new(source_symbol: &str, kind: FeatureKind, params: Vec<usize>) -> Self {
        let suffix = match (kind, params.as_slice()) {
            (FeatureKind::Ret, _) => String::new(),
            (FeatureKind::Hurst, [tau]) => format!("_{}", hurst_label(*tau)),
            (FeatureKind::Kl, [a, b]) => format!("_{a}_{b}"),
            (_, [w]) => format!("_{w}d"),
            (_, p) => p.iter().map(|v| format!("_{v}")).collect(),
        };
        FeatureSpec {
            source_symbol: source_symbol.to_string(),
            kind,
            params,
            name: format!("{source_symbol}_{kind}{suffix}"),
        }
    }

    /// Recover a spec from its canonical name.
    pub fn parse(name: &str) -> Result<Self> {
        let bad = || Error::data(format!("not a canonical feature name: `{name}`"));
        let parts: Vec<&str> = name.split('_').collect();
        let n = parts.len();
        let symbol = |upto: usize| -> Result<String> {
            if upto == 0 {
                return Err(bad());
            }
            Ok(parts[..upto].join("_"))
        };
        let spec = if n >= 2 && parts[n - 1] == "ret" {
            FeatureSpec::new(&symbol(n - 1)?, FeatureKind::Ret, vec![])
        } else if n >= 3 && parts[n - 2] == "hurst" {
            let tau = match parts[n - 1] {
                "short" => 16,
                "medium" => 64,
                "long" => 256,
                s => s.parse().map_err(|_| bad())?,
            };
            FeatureSpec::new(&symbol(n - 2)?, FeatureKind::Hurst, vec![tau])
        } else if n >= 4 && parts[n - 3] == "kl" {
            let a = parts[n - 2].parse().map_err(|_| bad())?;
            let b = parts[n - 1].parse().map_err(|_| bad())?;
            FeatureSpec::new(&symbol(n - 3)?, FeatureKind::Kl, vec![a, b])
        } else if n >= 3 {
            let kind: FeatureKind = parts[n - 2].parse().map_err(|_| bad())?;
            let w = parts[n - 1].strip_suffix('d').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            FeatureSpec::new(&symbol(n - 2)?, kind, vec![w])
        } else {
            return Err(bad());
        };
        if spec.name != name {
            return Err(bad());
        }
        Ok(spec)
    }

    /// Number of trailing returns the feature needs.
    pub fn lookback(&self) -> usize {
        match self.kind {
            FeatureKind::Ret => 1,
            FeatureKind::Kl => self.params[1],
            _ => self.params[0],
        }
    }
}

fn default_kinds() -> Vec<String> {
    ["vol", "skew", "kurt", "entropy", "hurst", "beta", "corr", "kl"].map(String::from).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Kinds to compute besides the always-present raw return.
    pub kinds: Vec<String>,
    pub windows: Vec<usize>,
    pub hurst_scales: Vec<usize>,
    pub kl_pairs: Vec<(usize, usize)>,
    pub entropy_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            kinds: default_kinds(),
            windows: vec![21, 63],
            hurst_scales: vec![16, 64, 256],
            kl_pairs: vec![(21, 126)],
            entropy_bins: 30,
        }
    }
}

impl FeatureConfig {
    /// Enumerate every column spec for the given symbols, sorted by name.
    pub fn enumerate(&self, symbols: &[String], target: &str) -> Result<Vec<FeatureSpec>> {
        let kinds: Vec<FeatureKind> = self.kinds.iter().map(|k| k.parse()).collect::<Result<_>>()?;
        let has = |k: FeatureKind| kinds.contains(&k);
        let mut specs = Vec::new();
        for sym in symbols {
            specs.push(FeatureSpec::new(sym, FeatureKind::Ret, vec![]));
            for &w in &self.windows {
                for kind in [FeatureKind::Vol, FeatureKind::Skew, FeatureKind::Kurt, FeatureKind::Entropy] {
                    if has(kind) {
                        specs.push(FeatureSpec::new(sym, kind, vec![w]));
                    }
                }
                if sym != target {
                    for kind in [FeatureKind::Beta, FeatureKind::Corr] {
                        if has(kind) {
                            specs.push(FeatureSpec::new(sym, kind, vec![w]));
                        }
                    }
                }
            }
            if has(FeatureKind::Hurst) {
                for &tau in &self.hurst_scales {
                    specs.push(FeatureSpec::new(sym, FeatureKind::Hurst, vec![tau]));
                }
            }
            if has(FeatureKind::Kl) {
                for &(a, b) in &self.kl_pairs {
                    specs.push(FeatureSpec::new(sym, FeatureKind::Kl, vec![a, b]));
                }
            }
        }
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = specs.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(Error::Config(format!("duplicate feature {}", w[0].name)));
        }
        Ok(specs)
    }
}

/// Compute one column over the full return history.
pub fn compute_feature(spec: &FeatureSpec, returns: &ReturnPanel, target: &str, bins: usize) -> Result<Vec<f64>> {
    let r = returns.column(&spec.source_symbol)?;
    let n = r.len();
    if spec.lookback() > n {
        return Ok(vec![f64::NAN; n]);
    }
    match (spec.kind, spec.params.as_slice()) {
        (FeatureKind::Ret, _) => Ok(r.to_vec()),
        (FeatureKind::Vol, [w]) => Ok(rolling_moments(r, *w)?.0),
        (FeatureKind::Skew, [w]) => Ok(rolling_moments(r, *w)?.1),
        (FeatureKind::Kurt, [w]) => Ok(rolling_moments(r, *w)?.2),
        (FeatureKind::Entropy, [w]) => rolling_entropy(r, *w, bins),
        (FeatureKind::Hurst, [tau]) => hurst_exponent(r, *tau),
        (FeatureKind::Beta, [w]) => rolling_beta(r, returns.column(target)?, *w),
        (FeatureKind::Corr, [w]) => rolling_correlation(r, returns.column(target)?, *w),
        (FeatureKind::Kl, [a, b]) => rolling_kl(r, *a, *b, bins),
        _ => Err(Error::Config(format!("malformed feature spec {}", spec.name))),
    }
}

/// Date-indexed engineered features, columns sorted by name.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub calendar: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// `rows = dates`, `cols = features`.
    pub values: Array2<f64>,
    pub specs: Vec<FeatureSpec>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.values.column(j).to_vec())
    }

    /// Keep the named columns, in the order given.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.names.iter().position(|m| m == n).ok_or_else(|| Error::data(format!("feature {n} not in matrix")))
            })
            .collect::<Result<_>>()?;
        let values = Array2::from_shape_fn((self.n_rows(), idx.len()), |(i, j)| self.values[[i, idx[j]]]);
        Ok(FeatureMatrix {
            calendar: self.calendar.clone(),
            names: names.to_vec(),
            values,
            specs: idx.iter().map(|&j| self.specs[j].clone()).collect(),
        })
    }

    /// Keep rows at the given indices.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let values = Array2::from_shape_fn((rows.len(), self.n_cols()), |(i, j)| self.values[[rows[i], j]]);
        FeatureMatrix {
            calendar: rows.iter().map(|&i| self.calendar[i]).collect(),
            names: self.names.clone(),
            values,
            specs: self.specs.clone(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, d) in self.calendar.iter().enumerate() {
            out.push_str(&d.format(DATE_FORMAT).to_string());
            for v in self.values.row(i) {
                if v.is_nan() {
                    out.push(',');
                } else {
                    out.push_str(&format!(",{v}"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn specs_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.specs)?)
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let (c, j) = (csv_path.as_ref(), json_path.as_ref());
        std::fs::write(c, self.to_csv_string()).map_err(|e| Error::io(c, e))?;
        std::fs::write(j, self.specs_json()?).map_err(|e| Error::io(j, e))
    }

    pub fn read(csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<FeatureMatrix> {
        let (c, j) = (csv_path.as_ref(), json_path.as_ref());
        let text = std::fs::read_to_string(c).map_err(|e| Error::io(c, e))?;
        let specs: Vec<FeatureSpec> = serde_json::from_str(&std::fs::read_to_string(j).map_err(|e| Error::io(j, e))?)?;
        let parse_err = |line: usize, message: String| Error::Parse { path: c.to_path_buf(), line, message };
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty feature file".into()))?
            .split(',')
            .skip(1)
            .map(String::from)
            .collect();
        if header.len() != specs.len() || header.iter().zip(&specs).any(|(h, s)| *h != s.name) {
            return Err(parse_err(1, "header does not match feature specs".into()));
        }
        let mut calendar = Vec::new();
        let mut flat = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let date = cells.next().unwrap_or("");
            calendar.push(
                NaiveDate::parse_from_str(date, DATE_FORMAT)
                    .map_err(|_| parse_err(i + 2, format!("bad date `{date}`")))?,
            );
            let before = flat.len();
            for cell in cells {
                flat.push(if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse().map_err(|_| parse_err(i + 2, format!("bad value `{cell}`")))?
                });
            }
            if flat.len() - before != header.len() {
                return Err(parse_err(i + 2, "wrong number of fields".into()));
            }
        }
        let values =
            Array2::from_shape_vec((calendar.len(), header.len()), flat).map_err(|e| Error::data(e.to_string()))?;
        Ok(FeatureMatrix { calendar, names: header, values, specs })
    }
}

/// Compute every configured feature and trim the longest warm-up.
pub fn build_feature_matrix(returns: &ReturnPanel, target: &str, config: &FeatureConfig) -> Result<FeatureMatrix> {
    returns.column(target)?;
    let specs = config.enumerate(&returns.symbols, target)?;
    let columns: Vec<Vec<f64>> =
        specs.par_iter().map(|s| compute_feature(s, returns, target, config.entropy_bins)).collect::<Result<_>>()?;
    let warmup = specs.iter().map(|s| s.lookback()).max().unwrap_or(1) - 1;
    if warmup >= returns.len() {
        return Err(Error::data(format!("{} return dates cannot cover a {}-day warm-up", returns.len(), warmup + 1)));
    }
    let rows = returns.len() - warmup;
    let values = Array2::from_shape_fn((rows, specs.len()), |(i, j)| columns[j][warmup + i]);
    Ok(FeatureMatrix {
        calendar: returns.calendar[warmup..].to_vec(),
        names: specs.iter().map(|s| s.name.clone()).collect(),
        values,
        specs,
    })
}
