//! Probability-scaled long/short backtest on the target asset.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::DATE_FORMAT;
use crate::stats::{centered_products, mean, sample_std};

pub const REPORT_VERSION: u32 = 1;
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSeries {
    pub calendar: Vec<NaiveDate>,
    /// Fraction of capital in the target, positive for long.
    pub position: Vec<f64>,
}

/// `position = 1 - 2p`: full long at p = 0, flat at 0.5, full short at 1.
pub fn signal_to_position(calendar: &[NaiveDate], p: &[f64]) -> Result<PositionSeries> {
    if calendar.len() != p.len() {
        return Err(Error::invalid("calendar and probability lengths differ"));
    }
    if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("probability {} at row {i} outside [0, 1]", p[i])));
    }
    Ok(PositionSeries { calendar: calendar.to_vec(), position: p.iter().map(|v| 1.0 - 2.0 * v).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub calendar: Vec<NaiveDate>,
    pub returns: Vec<f64>,
}

/// Daily strategy returns `position[t-1] * bench[t]`, less `cost_bps` per
/// unit of position change. `bench` must share the position calendar; the
/// output starts on the second date.
pub fn strategy_returns(
    positions: &PositionSeries,
    bench_calendar: &[NaiveDate],
    bench: &[f64],
    cost_bps: f64,
) -> Result<ReturnSeries> {
    if bench_calendar != positions.calendar.as_slice() || bench.len() != bench_calendar.len() {
        return Err(Error::invalid("benchmark and position calendars are not aligned"));
    }
    if positions.calendar.len() < 2 {
        return Err(Error::invalid("need at least two dates to apply a lagged position"));
    }
    let pos = &positions.position;
    let cost = cost_bps / 1e4;
    let returns = (1..pos.len())
        .map(|t| {
            let prev = if t >= 2 { pos[t - 2] } else { 0.0 };
            pos[t - 1] * bench[t] - cost * (pos[t - 1] - prev).abs()
        })
        .collect();
    Ok(ReturnSeries { calendar: positions.calendar[1..].to_vec(), returns })
}

/// Quintile 1..=5 per observation by ascending probability, ties by position.
/// Rank r (1-based) lands in the smallest k with `r <= ceil(n k / 5)`.
pub fn quintile_assign(p: &[f64]) -> Result<Vec<u8>> {
    let n = p.len();
    if n < 5 {
        return Err(Error::invalid("quintiles need at least five observations"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0u8; n];
    let mut k = 1;
    for (r, &i) in order.iter().enumerate() {
        while r + 1 > (n * k).div_ceil(5) {
            k += 1;
        }
        out[i] = k as u8;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileRow {
    pub quintile: u8,
    pub count: usize,
    pub mean_forward_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileTable {
    pub horizon: usize,
    pub rows: Vec<QuintileRow>,
    /// Q5 mean.
    pub high: Option<f64>,
    /// Pooled Q1-Q4 mean.
    pub low: Option<f64>,
    /// Observations without a full forward window.
    pub dropped: usize,
}

/// Mean forward `h`-day sum of `returns` per quintile. `returns[i]` is the
/// return on the date of `quintiles[i]`; the slice may run past the
/// quintile dates to supply forward data.
pub fn quintile_forward_returns(quintiles: &[u8], returns: &[f64], h: usize) -> Result<QuintileTable> {
    if h == 0 {
        return Err(Error::invalid("forward horizon must be at least 1"));
    }
    if returns.len() < quintiles.len() {
        return Err(Error::invalid("fewer returns than quintile observations"));
    }
    let forward: Vec<Option<f64>> =
        (0..quintiles.len()).map(|i| (i + h < returns.len()).then(|| returns[i + 1..=i + h].iter().sum())).collect();
    quintile_table(quintiles, &forward, h)
}

/// Per-quintile means of precomputed forward returns; `None` entries are
/// counted as dropped.
pub fn quintile_table(quintiles: &[u8], forward: &[Option<f64>], h: usize) -> Result<QuintileTable> {
    if forward.len() != quintiles.len() {
        return Err(Error::invalid("forward returns do not match quintile labels"));
    }
    let mut sums = [0.0f64; 5];
    let mut counts = [0usize; 5];
    let mut dropped = 0;
    for (&q, f) in quintiles.iter().zip(forward) {
        if !(1..=5).contains(&q) {
            return Err(Error::invalid(format!("quintile label {q} outside 1..=5")));
        }
        match f {
            Some(v) => {
                sums[q as usize - 1] += v;
                counts[q as usize - 1] += 1;
            }
            None => dropped += 1,
        }
    }
    let avg = |s: f64, c: usize| if c == 0 { None } else { Some(s / c as f64) };
    let rows = (0..5)
        .map(|k| QuintileRow { quintile: k as u8 + 1, count: counts[k], mean_forward_return: avg(sums[k], counts[k]) })
        .collect();
    Ok(QuintileTable {
        horizon: h,
        rows,
        high: avg(sums[4], counts[4]),
        low: avg(sums[..4].iter().sum(), counts[..4].iter().sum()),
        dropped,
    })
}

pub fn equity_curve(returns: &[f64]) -> Vec<f64> {
    let mut e = 1.0;
    returns
        .iter()
        .map(|r| {
            e *= 1.0 + r;
            e
        })
        .collect()
}

/// Worst `equity / running_max - 1`, a value in `[-1, 0]`.
pub fn max_drawdown(equity: &[f64]) -> Result<f64> {
    if equity.is_empty() {
        return Err(Error::invalid("empty equity curve"));
    }
    if equity.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::numeric("equity curve must stay positive"));
    }
    let mut peak = equity[0];
    let mut worst = 0.0f64;
    for &v in equity {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMetrics {
    /// `None` when the return standard deviation is zero.
    pub sharpe: Option<f64>,
    /// `None` when the tracking error is zero.
    pub information_ratio: Option<f64>,
    pub annualized_return: f64,
    pub annualized_volatility: f64,
    pub flags: Vec<String>,
}

fn is_flat(std: f64, m: f64) -> bool {
    std == 0.0 || std <= 1e-12 * m.abs()
}

pub fn risk_adjusted_metrics(strategy: &[f64], bench: &[f64], days_per_year: f64) -> Result<RiskMetrics> {
    if strategy.len() != bench.len() {
        return Err(Error::invalid("strategy and benchmark lengths differ"));
    }
    if strategy.len() < 2 {
        return Err(Error::invalid("risk metrics need at least two observations"));
    }
    let n = strategy.len() as f64;
    let ann = days_per_year.sqrt();
    let mut flags = Vec::new();
    let (m, s) = (mean(strategy), sample_std(strategy));
    let sharpe = if is_flat(s, m) {
        flags.push("sharpe undefined: zero return volatility".to_string());
        None
    } else {
        Some(m / s * ann)
    };
    let active: Vec<f64> = strategy.iter().zip(bench).map(|(a, b)| a - b).collect();
    let (ma, sa) = (mean(&active), sample_std(&active));
    let information_ratio = if is_flat(sa, ma) {
        flags.push("information ratio undefined: zero tracking error".to_string());
        None
    } else {
        Some(ma / sa * ann)
    };
    let growth: f64 = strategy.iter().map(|r| (1.0 + r).ln()).sum();
    let annualized_return = (growth * days_per_year / n).exp() - 1.0;
    let annualized_volatility = if is_flat(s, m) {
        flags.push("annualized volatility is zero".to_string());
        0.0
    } else {
        s * ann
    };
    Ok(RiskMetrics { sharpe, information_ratio, annualized_return, annualized_volatility, flags })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapmFit {
    pub alpha_daily: f64,
    pub beta: f64,
    pub alpha_std_error: f64,
    /// Zero when the fit is degenerate.
    pub t_stat_alpha: f64,
    pub n: usize,
    /// Residuals vanish, so the alpha t-statistic is undefined.
    pub degenerate: bool,
}

/// OLS of strategy on benchmark returns with an n - 2 dof alpha t-statistic.
pub fn capm_fit(strategy: &[f64], bench: &[f64]) -> Result<CapmFit> {
    if strategy.len() != bench.len() {
        return Err(Error::invalid("strategy and benchmark lengths differ"));
    }
    let n = strategy.len();
    if n < 3 {
        return Err(Error::invalid("CAPM fit needs at least three observations"));
    }
    let (sxx, syy, sxy) = centered_products(bench, strategy);
    if !(sxx > 0.0) {
        return Err(Error::numeric("benchmark returns have zero variance"));
    }
    let beta = sxy / sxx;
    let (mx, my) = (mean(bench), mean(strategy));
    let alpha = my - beta * mx;
    let ssr: f64 = strategy
        .iter()
        .zip(bench)
        .map(|(y, x)| {
            let e = y - alpha - beta * x;
            e * e
        })
        .sum();
    let degenerate = ssr <= 1e-20 * syy.max(f64::MIN_POSITIVE) || ssr == 0.0;
    let sigma2 = ssr / (n - 2) as f64;
    let se = (sigma2 * (1.0 / n as f64 + mx * mx / sxx)).sqrt();
    let t = if degenerate || se == 0.0 { 0.0 } else { alpha / se };
    Ok(CapmFit { alpha_daily: alpha, beta, alpha_std_error: se, t_stat_alpha: t, n, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub strategy: Vec<usize>,
    pub benchmark: Vec<usize>,
}

/// Shared equal-width bins over both series.
pub fn return_histogram(strategy: &[f64], bench: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let all = strategy.iter().chain(bench);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 0.5, lo.max(0.0) + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for &v in xs {
            c[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    Histogram { edges, strategy: count(strategy), benchmark: count(bench) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    /// +1 long, -1 short, 0 flat.
    pub direction: i8,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub horizon: usize,
    pub trading_days: f64,
    pub cost_bps: f64,
    pub histogram_bins: usize,
    /// Rank quintiles within each evaluation fold instead of over the whole
    /// window.
    pub per_fold_quintiles: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            horizon: 5,
            trading_days: TRADING_DAYS,
            cost_bps: 0.0,
            histogram_bins: 50,
            per_fold_quintiles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub version: u32,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub days: usize,
    pub strategy: RiskMetrics,
    pub benchmark: RiskMetrics,
    pub max_drawdown: f64,
    pub benchmark_max_drawdown: f64,
    pub capm: CapmFit,
    pub quintiles: QuintileTable,
    pub cost_bps: f64,
    pub histogram_bins: usize,
    #[serde(skip)]
    pub series: BacktestSeries,
}

/// Per-day data behind the report, written as CSV plot data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BacktestSeries {
    pub dates: Vec<NaiveDate>,
    pub probability: Vec<f64>,
    pub position: Vec<f64>,
    pub quintile: Vec<u8>,
    /// Strategy and benchmark daily returns, dates[1..].
    pub strategy_returns: Vec<f64>,
    pub benchmark_returns: Vec<f64>,
    pub equity: Vec<f64>,
    pub benchmark_equity: Vec<f64>,
    pub trades: Vec<Trade>,
    pub histogram: Option<Histogram>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

impl BacktestReport {
    /// Headline metrics as (label, value) rows.
    pub fn metric_rows(&self) -> Vec<(&'static str, String)> {
        let q = &self.quintiles;
        vec![
            ("Sharpe Ratio", fmt_opt(self.strategy.sharpe)),
            ("Information Ratio vs SPY", fmt_opt(self.strategy.information_ratio)),
            ("Maximum Drawdown", self.max_drawdown.to_string()),
            ("Annualized Return", self.strategy.annualized_return.to_string()),
            ("Annualized Volatility", self.strategy.annualized_volatility.to_string()),
            ("CAPM Alpha (daily)", self.capm.alpha_daily.to_string()),
            ("CAPM Beta", self.capm.beta.to_string()),
            ("T-stat Alpha", self.capm.t_stat_alpha.to_string()),
            ("Mean forward return HIGH risk (Q5)", fmt_opt(q.high)),
            ("Mean forward return LOW risk (Q1-Q4)", fmt_opt(q.low)),
            ("Benchmark Sharpe Ratio", fmt_opt(self.benchmark.sharpe)),
        ]
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.metric_rows() {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn quintile_csv(&self) -> String {
        let mut out = String::from("group,count,mean_forward_return\n");
        for r in &self.quintiles.rows {
            out.push_str(&format!("Q{},{},{}\n", r.quintile, r.count, fmt_opt(r.mean_forward_return)));
        }
        let q5 = self.quintiles.rows[4].count;
        let low: usize = self.quintiles.rows[..4].iter().map(|r| r.count).sum();
        out.push_str(&format!("HIGH,{q5},{}\n", fmt_opt(self.quintiles.high)));
        out.push_str(&format!("LOW,{low},{}\n", fmt_opt(self.quintiles.low)));
        out
    }

    pub fn daily_csv(&self) -> String {
        let s = &self.series;
        let mut out = String::from(
            "date,probability,position,quintile,strategy_return,benchmark_return,equity,benchmark_equity\n",
        );
        for i in 0..s.dates.len() {
            let (sr, br, eq, beq) = if i == 0 {
                (String::new(), String::new(), "1".to_string(), "1".to_string())
            } else {
                (
                    s.strategy_returns[i - 1].to_string(),
                    s.benchmark_returns[i - 1].to_string(),
                    s.equity[i - 1].to_string(),
                    s.benchmark_equity[i - 1].to_string(),
                )
            };
            out.push_str(&format!(
                "{},{},{},{},{sr},{br},{eq},{beq}\n",
                s.dates[i].format(DATE_FORMAT),
                s.probability[i],
                s.position[i],
                s.quintile[i],
            ));
        }
        out
    }

    pub fn trades_csv(&self) -> String {
        let mut out = String::from("date,direction,size\n");
        for t in &self.series.trades {
            out.push_str(&format!("{},{},{}\n", t.date.format(DATE_FORMAT), t.direction, t.size));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count_strategy,count_benchmark\n");
        if let Some(h) = &self.series.histogram {
            for k in 0..h.strategy.len() {
                out.push_str(&format!("{},{},{},{}\n", h.edges[k], h.edges[k + 1], h.strategy[k], h.benchmark[k]));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Position changes, one marker per day the direction or size moves.
pub fn trade_markers(positions: &PositionSeries) -> Vec<Trade> {
    let mut prev = f64::NAN;
    let mut out = Vec::new();
    for (d, &p) in positions.calendar.iter().zip(&positions.position) {
        if p != prev {
            let direction = if p > 0.0 {
                1
            } else if p < 0.0 {
                -1
            } else {
                0
            };
            out.push(Trade { date: *d, direction, size: p.abs() });
            prev = p;
        }
    }
    out
}

/// Runs the backtest for probabilities on `calendar`. `ret_calendar` and
/// `log_returns` are the target's daily log returns; every evaluation date
/// must appear in them, and they may extend past the last one to supply
/// forward returns. A position is held from one evaluation date to the
/// next, so gaps in `calendar` compound the intervening returns. `folds`,
/// when given, labels each evaluation date with its fold for per-fold
/// quintiles.
pub fn backtest_report(
    calendar: &[NaiveDate],
    p: &[f64],
    ret_calendar: &[NaiveDate],
    log_returns: &[f64],
    folds: Option<&[usize]>,
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    if calendar.len() < 5 {
        return Err(Error::data("backtest needs at least five evaluation dates"));
    }
    if ret_calendar.len() != log_returns.len() {
        return Err(Error::invalid("return calendar and returns differ in length"));
    }
    let mut idx = Vec::with_capacity(calendar.len());
    let mut from = 0;
    for d in calendar {
        let k = ret_calendar[from..]
            .iter()
            .position(|r| r == d)
            .ok_or_else(|| Error::data(format!("evaluation date {d} missing from return calendar")))?;
        idx.push(from + k);
        from += k + 1;
    }
    let bench: Vec<f64> = (0..idx.len())
        .map(|i| {
            let lo = if i == 0 { idx[0] } else { idx[i - 1] + 1 };
            log_returns[lo..=idx[i]].iter().sum::<f64>().exp_m1()
        })
        .collect();
    let forward: Vec<Option<f64>> = idx
        .iter()
        .map(|&k| (k + cfg.horizon < log_returns.len()).then(|| log_returns[k + 1..=k + cfg.horizon].iter().sum()))
        .collect();
    let positions = signal_to_position(calendar, p)?;
    let strat = strategy_returns(&positions, calendar, &bench, cfg.cost_bps)?;
    let bench_tail = &bench[1..];

    let quintile = match (cfg.per_fold_quintiles, folds) {
        (true, Some(f)) => {
            if f.len() != calendar.len() {
                return Err(Error::invalid("fold labels do not cover the evaluation dates"));
            }
            let mut q = vec![0u8; p.len()];
            let mut i = 0;
            while i < f.len() {
                let j = (i..f.len()).find(|&k| f[k] != f[i]).unwrap_or(f.len());
                for (slot, v) in q[i..j].iter_mut().zip(quintile_assign(&p[i..j])?) {
                    *slot = v;
                }
                i = j;
            }
            q
        }
        _ => quintile_assign(p)?,
    };
    if cfg.horizon == 0 {
        return Err(Error::invalid("forward horizon must be at least 1"));
    }
    let quintiles = quintile_table(&quintile, &forward, cfg.horizon)?;

    let equity = equity_curve(&strat.returns);
    let benchmark_equity = equity_curve(bench_tail);
    let report = BacktestReport {
        version: REPORT_VERSION,
        start: calendar[0],
        end: calendar[calendar.len() - 1],
        days: strat.returns.len(),
        strategy: risk_adjusted_metrics(&strat.returns, bench_tail, cfg.trading_days)?,
        benchmark: risk_adjusted_metrics(bench_tail, bench_tail, cfg.trading_days)?,
        max_drawdown: max_drawdown(&equity)?,
        benchmark_max_drawdown: max_drawdown(&benchmark_equity)?,
        capm: capm_fit(&strat.returns, bench_tail)?,
        quintiles,
        cost_bps: cfg.cost_bps,
        histogram_bins: cfg.histogram_bins,
        series: BacktestSeries {
            dates: calendar.to_vec(),
            probability: p.to_vec(),
            trades: trade_markers(&positions),
            position: positions.position,
            quintile,
            histogram: Some(return_histogram(&strat.returns, bench_tail, cfg.histogram_bins)),
            strategy_returns: strat.returns,
            benchmark_returns: bench_tail.to_vec(),
            equity,
            benchmark_equity,
        },
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n).map(|i| d0 + chrono::Days::new(i as u64)).collect()
    }

    #[test]
    fn position_mapping() {
        let p = signal_to_position(&dates(3), &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(p.position, vec![1.0, 0.0, -1.0]);
        assert!(signal_to_position(&dates(1), &[1.5]).is_err());
    }

    #[test]
    fn lagged_application() {
        let cal = dates(4);
        let r = [0.01, -0.02, 0.03, 0.005];
        let long = PositionSeries { calendar: cal.clone(), position: vec![1.0; 4] };
        assert_eq!(strategy_returns(&long, &cal, &r, 0.0).unwrap().returns, r[1..].to_vec());
        let short = PositionSeries { calendar: cal.clone(), position: vec![-1.0; 4] };
        assert_eq!(strategy_returns(&short, &cal, &r, 0.0).unwrap().returns, vec![0.02, -0.03, -0.005]);
        // Long only at the close before the 0.02 day.
        let r = [0.0, 0.01, 0.02, -0.04];
        let once = PositionSeries { calendar: cal.clone(), position: vec![0.0, 1.0, 0.0, 0.0] };
        let s = strategy_returns(&once, &cal, &r, 0.0).unwrap();
        assert_eq!(s.returns, vec![0.0, 0.02, 0.0]);
        assert_eq!(s.calendar[1], cal[2]);
        assert!(strategy_returns(&once, &dates(3), &r[..3], 0.0).is_err());
    }

    #[test]
    fn costs_charge_position_changes() {
        let cal = dates(3);
        let pos = PositionSeries { calendar: cal.clone(), position: vec![1.0, -1.0, -1.0] };
        let s = strategy_returns(&pos, &cal, &[0.0, 0.0, 0.0], 10.0).unwrap();
        assert!((s.returns[0] + 0.001).abs() < 1e-15);
        assert!((s.returns[1] + 0.002).abs() < 1e-15);
    }

    #[test]
    fn quintile_sizes() {
        let p: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let q = quintile_assign(&p).unwrap();
        for k in 1..=5 {
            assert_eq!(q.iter().filter(|&&v| v == k).count(), 2);
        }
        let q7 = quintile_assign(&[0.3; 7]).unwrap();
        assert_eq!(q7, vec![1, 1, 2, 3, 3, 4, 5]);
        assert!(quintile_assign(&[0.1; 4]).is_err());
    }

    #[test]
    fn zero_returns_give_zero_quintile_means() {
        let q = quintile_assign(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let t = quintile_forward_returns(&q, &[0.0; 12], 5).unwrap();
        assert!(t.rows.iter().all(|r| r.mean_forward_return == Some(0.0)));
        assert_eq!(t.dropped, 0);
        let t = quintile_forward_returns(&q, &[0.0; 6], 2).unwrap();
        assert_eq!(t.dropped, 2);
    }

    #[test]
    fn drawdown_fixture() {
        assert!((max_drawdown(&[1.0, 1.1, 0.99, 1.2]).unwrap() + 0.1).abs() < 1e-12);
        assert_eq!(max_drawdown(&[1.0, 1.5, 2.0]).unwrap(), 0.0);
        assert!(max_drawdown(&[]).is_err());
    }

    #[test]
    fn risk_metric_fixtures() {
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let m = risk_adjusted_metrics(&alt, &[0.0; 10], 252.0).unwrap();
        assert!(m.sharpe.unwrap().abs() < 1e-12);
        let same = risk_adjusted_metrics(&alt, &alt, 252.0).unwrap();
        assert!(same.information_ratio.is_none());
        let c = vec![0.001; 252];
        let m = risk_adjusted_metrics(&c, &[0.0; 252], 252.0).unwrap();
        assert!((m.annualized_return - (1.001f64.powi(252) - 1.0)).abs() < 1e-12);
        assert!(m.sharpe.is_none());
        assert_eq!(m.annualized_volatility, 0.0);
    }

    #[test]
    fn capm_exact_relations() {
        let x = [0.01, -0.02, 0.005, 0.03, -0.01];
        let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let f = capm_fit(&half, &x).unwrap();
        assert!((f.beta - 0.5).abs() < 1e-12 && f.alpha_daily.abs() < 1e-12);
        assert!(f.degenerate && f.t_stat_alpha == 0.0);
        let shifted: Vec<f64> = x.iter().map(|v| 0.001 + v).collect();
        let f = capm_fit(&shifted, &x).unwrap();
        assert!((f.alpha_daily - 0.001).abs() < 1e-12 && (f.beta - 1.0).abs() < 1e-12);
        assert!(capm_fit(&x, &[0.01; 5]).is_err());
    }

    #[test]
    fn capm_matches_normal_equations() {
        let mut g = crate::rng::stream(5, &[]);
        let n = 300;
        let x: Vec<f64> = (0..n).map(|_| g.random_range(-0.02..0.02)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.0005 + 0.7 * v + g.random_range(-0.01..0.01)).collect();
        let f = capm_fit(&y, &x).unwrap();
        // Solve [n Sx; Sx Sxx] [a b]' = [Sy Sxy]' directly.
        let (s1, sx, sy) = (n as f64, x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let det = s1 * sxx - sx * sx;
        let a = (sy * sxx - sx * sxy) / det;
        let b = (s1 * sxy - sx * sy) / det;
        assert!((f.alpha_daily - a).abs() < 1e-10 && (f.beta - b).abs() < 1e-10);
        assert!((f.beta - 0.7).abs() < 0.1);
        assert!(!f.degenerate);
    }

    #[test]
    fn histogram_counts_every_day() {
        let h = return_histogram(&[0.01, -0.02, 0.0], &[0.03, 0.0, -0.01], 4);
        assert_eq!(h.strategy.iter().sum::<usize>(), 3);
        assert_eq!(h.benchmark.iter().sum::<usize>(), 3);
        assert_eq!(h.edges.len(), 5);
    }

    #[test]
    fn skipped_return_dates_compound_into_the_next_step() {
        let cal = dates(12);
        let r: Vec<f64> = (0..12).map(|i| 0.001 * i as f64 - 0.004).collect();
        // Evaluate every other date.
        let eval: Vec<NaiveDate> = cal.iter().step_by(2).copied().collect();
        let p = vec![0.0; eval.len()];
        let rep = backtest_report(&eval, &p, &cal, &r, None, &BacktestConfig::default()).unwrap();
        let bench = &rep.series.benchmark_returns;
        assert_eq!(bench.len(), eval.len() - 1);
        for (i, b) in bench.iter().enumerate() {
            let k = 2 * (i + 1);
            let want = (1.0 + r[k - 1].exp_m1()) * (1.0 + r[k].exp_m1()) - 1.0;
            assert!((b - want).abs() < 1e-15, "step {i}: {b} vs {want}");
        }
        // Fully long, so the strategy earns the compounded benchmark.
        assert_eq!(&rep.series.strategy_returns, bench);
    }

    #[test]
    fn report_has_headline_rows() {
        let n = 40;
        let cal = dates(n + 5);
        let r: Vec<f64> = (0..n + 5).map(|i| ((i * 7) % 5) as f64 * 0.004 - 0.008).collect();
        let p: Vec<f64> = (0..n).map(|i| ((i * 3) % 10) as f64 / 10.0).collect();
        let rep = backtest_report(&cal[..n], &p, &cal, &r, None, &BacktestConfig::default()).unwrap();
        let labels: Vec<&str> = rep.metric_rows().iter().map(|r| r.0).collect();
        for l in [
            "Sharpe Ratio",
            "Information Ratio vs SPY",
            "Maximum Drawdown",
            "Annualized Return",
            "Annualized Volatility",
            "CAPM Alpha (daily)",
            "CAPM Beta",
            "T-stat Alpha",
        ] {
            assert!(labels.contains(&l), "{l}");
        }
        assert_eq!(rep.quintiles.dropped, 0);
        assert_eq!(rep.to_json().unwrap(), rep.clone().to_json().unwrap());
    }

    proptest! {
        #[test]
        fn quintiles_partition_evenly(p in prop::collection::vec(0.0f64..1.0, 5..200)) {
            let q = quintile_assign(&p).unwrap();
            let counts: Vec<usize> = (1..=5).map(|k| q.iter().filter(|&&v| v == k).count()).collect();
            prop_assert_eq!(counts.iter().sum::<usize>(), p.len());
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            // Higher probability never gets a lower quintile.
            for i in 0..p.len() {
                for j in 0..p.len() {
                    if p[i] < p[j] {
                        prop_assert!(q[i] <= q[j]);
                    }
                }
            }
        }

        #[test]
        fn drawdown_scale_invariant(e in prop::collection::vec(0.1f64..10.0, 1..50), k in 0.1f64..100.0) {
            let a = max_drawdown(&e).unwrap();
            let scaled: Vec<f64> = e.iter().map(|v| v * k).collect();
            prop_assert!((-1.0..=0.0).contains(&a));
            prop_assert!((a - max_drawdown(&scaled).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn positions_bounded_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let p = signal_to_position(&dates(2), &[a, b]).unwrap().position;
            prop_assert!(p.iter().all(|v| v.abs() <= 1.0));
            if a < b { prop_assert!(p[0] > p[1]); }
        }

        #[test]
        fn truncation_keeps_earlier_returns(
            pos in prop::collection::vec(-1.0f64..=1.0, 3..40),
            seed in 0u64..100,
        ) {
            let mut g = crate::rng::stream(seed, &[]);
            let r: Vec<f64> = pos.iter().map(|_| g.random_range(-0.03..0.03)).collect();
            let cal = dates(pos.len());
            let full = strategy_returns(&PositionSeries { calendar: cal.clone(), position: pos.clone() }, &cal, &r, 1.0).unwrap();
            let n = pos.len() - 1;
            let cut = strategy_returns(&PositionSeries { calendar: cal[..n].to_vec(), position: pos[..n].to_vec() }, &cal[..n], &r[..n], 1.0).unwrap();
            prop_assert_eq!(&full.returns[..n - 1], &cut.returns[..]);
        }
    }
}
