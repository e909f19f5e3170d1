//! Price ingestion, calendar alignment, log returns and drawdown labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Default universe: equities, volatility, commodities, FX and rates proxies.
pub const DEFAULT_UNIVERSE: [&str; 12] =
    ["SPY", "QQQ", "IWM", "TLT", "VIX", "GLD", "CL=F", "DX-Y.NYB", "EURUSD=X", "JPYUSD=X", "TNX", "IRX"];

/// One symbol's daily adjusted closes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSeries {
    pub symbol: String,
    pub dates: Vec<NaiveDate>,
    pub adj_close: Vec<f64>,
    pub volume: Option<Vec<f64>>,
}

impl AssetSeries {
    pub fn new(
        symbol: impl Into<String>,
        dates: Vec<NaiveDate>,
        adj_close: Vec<f64>,
        volume: Option<Vec<f64>>,
    ) -> Result<Self> {
        let symbol = symbol.into();
        if dates.len() != adj_close.len() {
            return Err(Error::data(format!("{symbol}: {} dates but {} prices", dates.len(), adj_close.len())));
        }
        if let Some(v) = &volume {
            if v.len() != dates.len() {
                return Err(Error::data(format!("{symbol}: volume length mismatch")));
            }
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::data(format!("{symbol}: dates not strictly increasing at {}", w[1])));
        }
        if let Some((i, p)) = adj_close.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::data(format!("{symbol}: non-positive price {p} at {}", dates[i])));
        }
        Ok(Self { symbol, dates, adj_close, volume })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok()
}

/// Load a per-symbol OHLCV file. Only `date` and `adj_close` are required;
/// rows may arrive in any order and are sorted by date.
pub fn load_ohlcv_csv(path: impl AsRef<Path>, symbol: &str) -> Result<AssetSeries> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path).and_then(|mut f| f.read_to_string(&mut text)).map_err(|e| Error::io(path, e))?;
    parse_ohlcv_csv(&text, symbol, path)
}

fn parse_ohlcv_csv(text: &str, symbol: &str, path: &Path) -> Result<AssetSeries> {
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let date_col = column("date").ok_or_else(|| parse_err(1, "missing `date` column".into()))?;
    let price_col = column("adj_close").ok_or_else(|| parse_err(1, "missing `adj_close` column".into()))?;
    let volume_col = column("volume");

    let mut rows: Vec<(NaiveDate, f64, Option<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let line = row + 1;
        let record = record.map_err(|e| parse_err(line, format!("row {row}: {e}")))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let date = parse_date(field(date_col))
            .ok_or_else(|| parse_err(line, format!("row {row}: bad date `{}`", field(date_col))))?;
        let price: f64 = field(price_col)
            .parse()
            .map_err(|_| parse_err(line, format!("row {row}: bad adj_close `{}`", field(price_col))))?;
        if !(price.is_finite() && price > 0.0) {
            return Err(parse_err(line, format!("row {row}: non-positive adj_close {price}")));
        }
        let volume = match volume_col.map(field) {
            Some(v) if !v.is_empty() => {
                let v: f64 = v.parse().map_err(|_| parse_err(line, format!("row {row}: bad volume `{v}`")))?;
                if v < 0.0 {
                    return Err(parse_err(line, format!("row {row}: negative volume")));
                }
                Some(v)
            }
            _ => None,
        };
        rows.push((date, price, volume));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::data(format!("{}: duplicate date {}", path.display(), w[0].0)));
    }
    let volume = if rows.iter().all(|r| r.2.is_some()) && volume_col.is_some() {
        Some(rows.iter().map(|r| r.2.unwrap_or(0.0)).collect())
    } else {
        None
    };
    AssetSeries::new(symbol, rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect(), volume)
}

/// Write a series in the input schema (`date,open,high,low,close,adj_close,volume`).
/// OHLC fields are left empty since only adjusted closes are tracked.
pub fn write_ohlcv_csv(series: &AssetSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("date,open,high,low,close,adj_close,volume\n");
    for (i, (d, p)) in series.dates.iter().zip(&series.adj_close).enumerate() {
        let vol = series.volume.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
        out.push_str(&format!("{},,,,,{p},{vol}\n", d.format(DATE_FORMAT)));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Prices for several symbols on one trading calendar. Storage is
/// column-major: `prices[symbol][date]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    pub calendar: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub prices: Vec<Vec<f64>>,
    pub fill_flags: Vec<Vec<bool>>,
}

impl AlignedPanel {
    pub fn len(&self) -> usize {
        self.calendar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calendar.is_empty()
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn filled_cells(&self) -> usize {
        self.fill_flags.iter().flatten().filter(|f| **f).count()
    }

    /// Canonical CSV: `date`, one price column per symbol, then one
    /// `SYMBOL:filled` 0/1 column per symbol.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date");
        for s in &self.symbols {
            out.push(',');
            out.push_str(s);
        }
        for s in &self.symbols {
            out.push_str(&format!(",{s}:filled"));
        }
        out.push('\n');
        for (t, d) in self.calendar.iter().enumerate() {
            out.push_str(&d.format(DATE_FORMAT).to_string());
            for col in &self.prices {
                out.push_str(&format!(",{}", col[t]));
            }
            for col in &self.fill_flags {
                out.push_str(if col[t] { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_csv_string().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, path)
    }

    pub fn from_csv_str(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
        let mut lines = text.lines();
        let header: Vec<&str> =
            lines.next().ok_or_else(|| parse_err(1, "empty panel file".into()))?.split(',').collect();
        if header.first() != Some(&"date") || header.len().is_multiple_of(2) {
            return Err(parse_err(1, "malformed panel header".into()));
        }
        let k = (header.len() - 1) / 2;
        let symbols: Vec<String> = header[1..=k].iter().map(|s| s.to_string()).collect();
        let mut panel = AlignedPanel {
            calendar: Vec::new(),
            prices: vec![Vec::new(); k],
            fill_flags: vec![Vec::new(); k],
            symbols,
        };
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(parse_err(lineno, "wrong number of fields".into()));
            }
            panel.calendar.push(parse_date(cells[0]).ok_or_else(|| parse_err(lineno, "bad date".into()))?);
            for j in 0..k {
                let p: f64 =
                    cells[1 + j].parse().map_err(|_| parse_err(lineno, format!("bad price `{}`", cells[1 + j])))?;
                panel.prices[j].push(p);
                panel.fill_flags[j].push(cells[1 + k + j] == "1");
            }
        }
        Ok(panel)
    }
}

/// Align series onto the union of their observation dates inside
/// `[start, end]`, forward-filling gaps. Leading rows where some symbol has
/// not been observed yet are dropped.
pub fn align_panel(series: &[AssetSeries], start: NaiveDate, end: NaiveDate) -> Result<AlignedPanel> {
    if series.is_empty() {
        return Err(Error::invalid("align_panel needs at least one series"));
    }
    if start >= end {
        return Err(Error::invalid(format!("start {start} is not before end {end}")));
    }
    let in_range = |d: &NaiveDate| *d >= start && *d <= end;
    let calendar: BTreeSet<NaiveDate> = series.iter().flat_map(|s| s.dates.iter().copied().filter(in_range)).collect();
    let calendar: Vec<NaiveDate> = calendar.into_iter().collect();

    let mut prices = Vec::with_capacity(series.len());
    let mut flags = Vec::with_capacity(series.len());
    let mut first_valid = 0usize;
    for s in series {
        let observed: BTreeMap<NaiveDate, f64> =
            s.dates.iter().copied().zip(s.adj_close.iter().copied()).filter(|(d, _)| in_range(d)).collect();
        let mut col = Vec::with_capacity(calendar.len());
        let mut col_flags = Vec::with_capacity(calendar.len());
        let mut last: Option<f64> = None;
        let mut first_seen = None;
        for (t, d) in calendar.iter().enumerate() {
            match observed.get(d) {
                Some(&p) => {
                    last = Some(p);
                    first_seen.get_or_insert(t);
                    col.push(p);
                    col_flags.push(false);
                }
                None => {
                    col.push(last.unwrap_or(f64::NAN));
                    col_flags.push(last.is_some());
                }
            }
        }
        match first_seen {
            Some(t) => first_valid = first_valid.max(t),
            None => return Err(Error::data(format!("{}: no observations between {start} and {end}", s.symbol))),
        }
        prices.push(col);
        flags.push(col_flags);
    }
    if first_valid >= calendar.len() {
        return Err(Error::data("no common dates after dropping leading rows"));
    }
    Ok(AlignedPanel {
        calendar: calendar[first_valid..].to_vec(),
        symbols: series.iter().map(|s| s.symbol.clone()).collect(),
        prices: prices.into_iter().map(|c| c[first_valid..].to_vec()).collect(),
        fill_flags: flags.into_iter().map(|c| c[first_valid..].to_vec()).collect(),
    })
}

/// Daily log returns, column-major `returns[symbol][t]`. `calendar[t]` is
/// the date on which return `t` is realised.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub calendar: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub returns: Vec<Vec<f64>>,
}

impl ReturnPanel {
    pub fn len(&self) -> usize {
        self.calendar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calendar.is_empty()
    }

    pub fn column(&self, symbol: &str) -> Result<&[f64]> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .map(|i| self.returns[i].as_slice())
            .ok_or_else(|| Error::data(format!("symbol {symbol} not in return panel")))
    }
}

pub fn log_returns(panel: &AlignedPanel) -> Result<ReturnPanel> {
    if panel.len() < 2 {
        return Err(Error::invalid("log returns need at least two dates"));
    }
    let returns = panel.prices.iter().map(|col| col.windows(2).map(|w| w[1].ln() - w[0].ln()).collect()).collect();
    Ok(ReturnPanel { calendar: panel.calendar[1..].to_vec(), symbols: panel.symbols.clone(), returns })
}

/// Binary forward-drawdown labels for one target symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub calendar: Vec<NaiveDate>,
    pub y: Vec<u8>,
    pub horizon: usize,
    pub threshold: f64,
}

impl LabelVector {
    pub fn base_rate(&self) -> f64 {
        self.y.iter().map(|&v| v as f64).sum::<f64>() / self.y.len().max(1) as f64
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date,y\n");
        for (d, y) in self.calendar.iter().zip(&self.y) {
            out.push_str(&format!("{},{y}\n", d.format(DATE_FORMAT)));
        }
        out
    }
}

/// `y[t] = 1` iff the next `horizon` log returns of `target` sum to at most
/// `-threshold`. The final `horizon` dates have no label.
pub fn make_labels(returns: &ReturnPanel, target: &str, horizon: usize, threshold: f64) -> Result<LabelVector> {
    let r = returns.column(target)?;
    if horizon == 0 {
        return Err(Error::invalid("label horizon must be at least 1"));
    }
    if !(threshold > 0.0) {
        return Err(Error::invalid("drawdown threshold must be positive"));
    }
    if horizon >= r.len() {
        return Err(Error::invalid(format!("horizon {horizon} leaves no labelled dates in a {}-day panel", r.len())));
    }
    let n = r.len() - horizon;
    let y = (0..n)
        .map(|t| {
            let fwd: f64 = r[t + 1..=t + horizon].iter().sum();
            u8::from(fwd <= -threshold)
        })
        .collect();
    Ok(LabelVector { calendar: returns.calendar[..n].to_vec(), y, horizon, threshold })
}
