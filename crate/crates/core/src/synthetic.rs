//! Seeded synthetic market panels.
//!
//! Two regimes are supported: a pure correlated geometric random walk, and a
//! planted-crash walk in which the target suffers scheduled multi-day sell-offs
//! while a designated driver symbol carries a mean shift over exactly the
//! dates whose forward window overlaps a sell-off.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::AlignedPanel;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    RandomWalk,
    PlantedCrash(CrashPlan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashPlan {
    /// Symbol whose returns shift ahead of and during each sell-off.
    pub driver: String,
    /// Consecutive days of the target sell-off.
    pub crash_days: usize,
    /// Daily log return of the target on sell-off days, before noise.
    pub crash_return: f64,
    /// Days before the first sell-off day on which the driver shift starts.
    pub lead_days: usize,
    /// Added to the driver's daily return on signal days.
    pub driver_shift: f64,
    /// Driver return noise as a multiple of the scenario noise.
    pub driver_noise_scale: f64,
    /// Gap between consecutive sell-off starts is drawn from `[min_gap, max_gap]`.
    pub min_gap: usize,
    pub max_gap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub symbols: Vec<String>,
    pub target: String,
    /// Number of price dates.
    pub length: usize,
    pub start: NaiveDate,
    /// Daily log drift of every symbol.
    pub drift: f64,
    /// Daily noise of the target; other symbols scale from it.
    pub noise: f64,
    pub regime: Regime,
}

pub const PRESETS: [&str; 3] = ["random-walk", "planted-crash", "planted-crash-clean"];

impl ScenarioSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2005, 1, 3).expect("valid date");
        let planted = |noise: f64| ScenarioSpec {
            name: name.to_string(),
            symbols: ["SPY", "QQQ", "TLT", "GLD", "CL=F"].map(String::from).to_vec(),
            target: "SPY".into(),
            length: 1800,
            start,
            drift: 0.0015,
            noise,
            regime: Regime::PlantedCrash(CrashPlan {
                driver: "CL=F".into(),
                crash_days: 3,
                crash_return: -0.02,
                lead_days: 5,
                driver_shift: 0.025,
                driver_noise_scale: 5.0,
                min_gap: 30,
                max_gap: 70,
            }),
        };
        match name {
            "random-walk" => Ok(ScenarioSpec {
                name: name.into(),
                symbols: ["SPY", "QQQ", "TLT", "GLD"].map(String::from).to_vec(),
                target: "SPY".into(),
                length: 1500,
                start,
                drift: 0.0003,
                noise: 0.01,
                regime: Regime::RandomWalk,
            }),
            "planted-crash" => Ok(planted(0.0015)),
            "planted-crash-clean" => Ok(planted(0.0)),
            other => {
                Err(Error::Config(format!("unknown synthetic scenario `{other}` (known: {})", PRESETS.join(", "))))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario {}: {m}", self.name)));
        if self.length < 2 {
            return bad(format!("length {} is too short", self.length));
        }
        if !self.symbols.contains(&self.target) {
            return bad(format!("target {} not among symbols", self.target));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and nonnegative".into());
        }
        if let Regime::PlantedCrash(plan) = &self.regime {
            if !self.symbols.contains(&plan.driver) || plan.driver == self.target {
                return bad(format!("driver {} must be a non-target symbol", plan.driver));
            }
            if plan.crash_days == 0 || plan.min_gap == 0 || plan.min_gap > plan.max_gap {
                return bad("crash schedule parameters are inconsistent".into());
            }
            if plan.min_gap <= plan.crash_days + plan.lead_days {
                return bad("min_gap must exceed crash_days + lead_days".into());
            }
        }
        Ok(())
    }
}

/// One planted sell-off, expressed in price-calendar dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCrash {
    /// Date whose forward window is exactly the sell-off.
    pub label_date: NaiveDate,
    pub first_crash_date: NaiveDate,
    pub last_crash_date: NaiveDate,
}

/// What the generator planted, for checking downstream stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub scenario: String,
    pub seed: u64,
    pub target: String,
    pub driver: Option<String>,
    pub crashes: Vec<PlantedCrash>,
    /// Price-calendar dates on which the driver shift is active.
    pub signal_dates: Vec<NaiveDate>,
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

// Market-factor loading and idiosyncratic noise multiple for the k-th
// non-target symbol.
fn symbol_profile(k: usize) -> (f64, f64) {
    const LOADINGS: [f64; 5] = [0.9, -0.3, 0.4, 0.1, 0.6];
    const IDIO: [f64; 5] = [0.6, 0.8, 1.2, 1.5, 1.0];
    (LOADINGS[k % 5], IDIO[k % 5])
}

/// Generate a panel and record what was planted. Deterministic in `seed`.
pub fn generate_synthetic_panel(spec: &ScenarioSpec, seed: u64) -> Result<(AlignedPanel, SyntheticTruth)> {
    spec.validate()?;
    let n_ret = spec.length - 1;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    // Schedule sell-offs in return-index space.
    let mut crash_starts = Vec::new();
    if let Regime::PlantedCrash(plan) = &spec.regime {
        let mut sched = rng::stream(seed, &[u64::MAX]);
        let mut c = plan.lead_days + sched.random_range(plan.min_gap / 2..=plan.max_gap);
        while c + plan.crash_days + plan.lead_days < n_ret {
            crash_starts.push(c);
            c += sched.random_range(plan.min_gap..=plan.max_gap);
        }
    }

    let mut market = rng::stream(seed, &[0]);
    let shocks: Vec<f64> = (0..n_ret).map(|_| unit.sample(&mut market) * spec.noise).collect();

    let mut returns = Vec::with_capacity(spec.symbols.len());
    let mut signal = vec![false; n_ret];
    let mut other = 0usize;
    for (s_idx, sym) in spec.symbols.iter().enumerate() {
        let mut stream = rng::stream(seed, &[1 + s_idx as u64]);
        let col: Vec<f64> = if *sym == spec.target {
            let mut col: Vec<f64> = shocks.iter().map(|m| spec.drift + m).collect();
            if let Regime::PlantedCrash(plan) = &spec.regime {
                for &c in &crash_starts {
                    for r in &mut col[c..c + plan.crash_days] {
                        *r = plan.crash_return + (*r - spec.drift);
                    }
                }
            }
            col
        } else {
            match &spec.regime {
                Regime::PlantedCrash(plan) if *sym == plan.driver => {
                    let sd = spec.noise * plan.driver_noise_scale;
                    let mut col: Vec<f64> = (0..n_ret).map(|_| spec.drift + sd * unit.sample(&mut stream)).collect();
                    for &c in &crash_starts {
                        // Dates whose forward window overlaps the sell-off.
                        let lo = c.saturating_sub(plan.lead_days);
                        let hi = c + plan.crash_days - 1;
                        for t in lo..hi {
                            col[t] += plan.driver_shift;
                            signal[t] = true;
                        }
                    }
                    col
                }
                _ => {
                    let (loading, idio) = symbol_profile(other);
                    other += 1;
                    shocks
                        .iter()
                        .map(|m| spec.drift + loading * m + idio * spec.noise * unit.sample(&mut stream))
                        .collect()
                }
            }
        };
        returns.push(col);
    }

    let calendar = business_days(spec.start, spec.length);
    let prices: Vec<Vec<f64>> = returns
        .iter()
        .enumerate()
        .map(|(k, col)| {
            let mut p = Vec::with_capacity(spec.length);
            let mut log_p = (50.0 + 25.0 * k as f64).ln();
            p.push(log_p.exp());
            for r in col {
                log_p += r;
                p.push(log_p.exp());
            }
            p
        })
        .collect();

    let crashes = match &spec.regime {
        Regime::PlantedCrash(plan) => crash_starts
            .iter()
            .map(|&c| PlantedCrash {
                label_date: calendar[c],
                first_crash_date: calendar[c + 1],
                last_crash_date: calendar[c + plan.crash_days],
            })
            .collect(),
        Regime::RandomWalk => Vec::new(),
    };
    let truth = SyntheticTruth {
        scenario: spec.name.clone(),
        seed,
        target: spec.target.clone(),
        driver: match &spec.regime {
            Regime::PlantedCrash(plan) => Some(plan.driver.clone()),
            Regime::RandomWalk => None,
        },
        crashes,
        signal_dates: signal.iter().enumerate().filter(|(_, s)| **s).map(|(t, _)| calendar[t + 1]).collect(),
    };
    let k = spec.symbols.len();
    Ok((
        AlignedPanel { calendar, symbols: spec.symbols.clone(), prices, fill_flags: vec![vec![false; spec.length]; k] },
        truth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{log_returns, make_labels};

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = ScenarioSpec::preset("planted-crash").unwrap();
        let (a, ta) = generate_synthetic_panel(&spec, 11).unwrap();
        let (b, tb) = generate_synthetic_panel(&spec, 11).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(ta, tb);
        let (c, _) = generate_synthetic_panel(&spec, 12).unwrap();
        assert_ne!(a.prices, c.prices);
    }

    #[test]
    fn clean_planted_crashes_are_all_labelled() {
        let spec = ScenarioSpec::preset("planted-crash-clean").unwrap();
        let (panel, truth) = generate_synthetic_panel(&spec, 3).unwrap();
        assert!(truth.crashes.len() > 10);
        let labels = make_labels(&log_returns(&panel).unwrap(), "SPY", 5, 0.01).unwrap();
        for crash in &truth.crashes {
            let t = labels.calendar.iter().position(|d| *d == crash.label_date).unwrap();
            assert_eq!(labels.y[t], 1, "planted week at {}", crash.label_date);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ScenarioSpec::preset("bogus").is_err());
        let mut spec = ScenarioSpec::preset("random-walk").unwrap();
        spec.length = 0;
        assert!(generate_synthetic_panel(&spec, 1).is_err());
        let bad = r#"{"name":"x","symbols":["A"],"target":"A","length":10,
            "start":"2020-01-01","drift":0.0,"noise":0.01,"regime":{"kind":"volcano"}}"#;
        assert!(serde_json::from_str::<ScenarioSpec>(bad).is_err());
    }
}
