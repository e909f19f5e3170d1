//! TOML run configuration. Every field has a default, so an empty file is a
//! valid configuration for the built-in synthetic scenarios.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::attribution::{RegimeConfig, DEFAULT_BACKGROUND_SIZE};
use crate::backtest::BacktestConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::learners::grid::GridConfig;
use crate::market_data::DEFAULT_UNIVERSE;
use crate::selection::SelectionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    InSample,
    WalkForward,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::InSample => "in_sample",
            EvalMode::WalkForward => "walk_forward",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Built-in scenario name; when set, no files are read.
    pub synthetic: Option<String>,
    /// Directory holding `<SYMBOL>.csv` files for symbols without an entry
    /// in `files`.
    pub dir: Option<PathBuf>,
    pub files: BTreeMap<String, PathBuf>,
    pub symbols: Vec<String>,
    pub target: String,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: None,
            dir: None,
            files: BTreeMap::new(),
            symbols: DEFAULT_UNIVERSE.iter().map(|s| s.to_string()).collect(),
            target: "SPY".into(),
            start: None,
            end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub horizon: usize,
    pub threshold: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { horizon: 5, threshold: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Run the grid search; otherwise fit the configured defaults directly.
    pub search: bool,
    pub grid: GridConfig,
    /// Outer folds in walk-forward mode.
    pub walk_forward_folds: usize,
    pub walk_forward_min_train_frac: f64,
    /// Training rows dropped before each walk-forward test block so no
    /// training label looks into it.
    pub purge: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            search: true,
            grid: GridConfig::default(),
            walk_forward_folds: 5,
            walk_forward_min_train_frac: 0.5,
            purge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub background_size: usize,
    pub regime_rows: usize,
    pub regime_perms: usize,
    pub permutation_repeats: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        let r = RegimeConfig::default();
        AttributionConfig {
            background_size: DEFAULT_BACKGROUND_SIZE,
            regime_rows: r.max_rows,
            regime_perms: r.n_perms,
            permutation_repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: EvalMode,
    /// Output directory; not recorded in manifests.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub data: DataConfig,
    pub label: LabelConfig,
    pub features: FeatureConfig,
    pub selection: SelectionConfig,
    pub training: TrainingConfig,
    pub attribution: AttributionConfig,
    pub backtest: BacktestConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            mode: EvalMode::InSample,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            label: LabelConfig::default(),
            features: FeatureConfig::default(),
            selection: SelectionConfig::default(),
            training: TrainingConfig::default(),
            attribution: AttributionConfig::default(),
            backtest: BacktestConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config, or the `config` object of a run manifest when
    /// the file is JSON. Relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let inner = v.get("config").cloned().unwrap_or(v);
            serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            Self::from_toml_str(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = self.data.dir.as_mut() {
            fix(d);
        }
        for p in self.data.files.values_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.data.symbols.contains(&self.data.target) && self.data.synthetic.is_none() {
            return bad(format!("target {} is not in the symbol list", self.data.target));
        }
        if self.label.horizon == 0 || !(self.label.threshold > 0.0) {
            return bad("label horizon must be >= 1 and threshold > 0".into());
        }
        if self.selection.k == 0 || self.selection.mi_bins < 2 {
            return bad("selection needs k >= 1 and at least two MI bins".into());
        }
        if self.training.walk_forward_folds < 2 || self.training.grid.folds < 2 {
            return bad("cross-validation needs at least two folds".into());
        }
        for f in [self.training.walk_forward_min_train_frac, self.training.grid.min_train_frac] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("min_train_frac {f} must lie in (0, 1)"));
            }
        }
        if self.attribution.background_size == 0 || self.attribution.regime_perms == 0 {
            return bad("attribution needs a nonempty background and at least one permutation".into());
        }
        if let (Some(s), Some(e)) = (self.data.start, self.data.end) {
            if s >= e {
                return bad(format!("start {s} is not before end {e}"));
            }
        }
        for k in &self.features.kinds {
            k.parse::<crate::features::FeatureKind>()?;
        }
        Ok(())
    }

    /// Path of the price file for `symbol`.
    pub fn data_file(&self, symbol: &str) -> Result<PathBuf> {
        if let Some(p) = self.data.files.get(symbol) {
            return Ok(p.clone());
        }
        match &self.data.dir {
            Some(d) => Ok(d.join(format!("{symbol}.csv"))),
            None => Err(Error::Config(format!("no data file configured for symbol {symbol}"))),
        }
    }
}
