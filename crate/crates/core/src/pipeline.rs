//! End-to-end run: ingest, features, selection, training, evaluation,
//! attribution and backtest, with every artifact hashed into a manifest.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{
    background_rows, permutation_importance, regime_attribution_summary, PermutationImportance, RegimeConfig,
    RegimeSummary,
};
use crate::backtest::{backtest_report, return_histogram, trade_markers, BacktestReport, PositionSeries};
use crate::config::{EvalMode, RunConfig};
use crate::dataset::{assemble, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{classification_report, roc_auc, ClassificationReport};
use crate::features::{build_feature_matrix, FeatureMatrix};
use crate::learners::cv::time_series_splits;
use crate::learners::ensemble::{soft_vote, EnsembleModel, MEMBER_NAMES};
use crate::learners::grid::{fit_ensemble, fit_ensemble_with, search_hypers, GridResult, LearnerKind};
use crate::learners::ProbabilityModel;
use crate::market_data::{
    align_panel, load_ohlcv_csv, log_returns, make_labels, AlignedPanel, LabelVector, ReturnPanel, DATE_FORMAT,
};
use crate::rng::derive_seed;
use crate::selection::{select_top_k, SelectionReport};
use crate::synthetic::{generate_synthetic_panel, ScenarioSpec, SyntheticTruth};

pub const MANIFEST_VERSION: u32 = 1;

pub const PANEL_FILE: &str = "panel.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_CSV: &str = "features.csv";
pub const FEATURES_JSON: &str = "features.json";
pub const SELECTION_FILE: &str = "selection.json";
pub const MODEL_FILE: &str = "model.json";
pub const GRID_FILE: &str = "grid_search.json";
pub const FOLDS_FILE: &str = "folds.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const REPORT_TEXT_FILE: &str = "classification_report.txt";
pub const ATTRIBUTION_FILE: &str = "attribution.json";
pub const BACKTEST_FILE: &str = "backtest.json";
pub const BACKTEST_DAILY_FILE: &str = "backtest_daily.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "synthetic_truth.json";

// Seed stream tags for the stages that draw randomness.
const SEED_TRAIN: u64 = 1;
const SEED_FOLD: u64 = 2;
const SEED_ATTRIBUTION: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub symbol: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: String,
    /// `complete`, or `failed` when a stage aborted and the listed
    /// artifacts are partial.
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub mode: EvalMode,
    pub seed: u64,
    pub synthetic: Option<String>,
    pub inputs: Vec<InputRecord>,
    pub stages: Vec<String>,
    pub artifacts: Vec<ArtifactRecord>,
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Ingested and featurized data shared by the later stages.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub panel: AlignedPanel,
    pub returns: ReturnPanel,
    pub labels: LabelVector,
    pub features: FeatureMatrix,
}

impl Prepared {
    /// Rows with a label and every candidate feature finite, restricted to
    /// `columns`. The row set does not depend on `columns`.
    pub fn dataset(&self, columns: &[String]) -> Result<Dataset> {
        assemble(&self.features, &self.labels)?.columns(columns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldInfo {
    pub fold: usize,
    pub train_rows: Range<usize>,
    pub test_rows: Range<usize>,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

/// Per-row model outputs on the evaluation rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub dates: Vec<NaiveDate>,
    pub y: Vec<u8>,
    pub p: Vec<f64>,
    pub yhat: Vec<u8>,
    pub fold: Vec<usize>,
    pub members: [Vec<f64>; 3],
}

impl Predictions {
    fn extend(
        &mut self,
        dates: &[NaiveDate],
        y: &[u8],
        fold: usize,
        members: [Vec<f64>; 3],
        threshold: f64,
    ) -> Result<()> {
        let (p, yhat) = soft_vote(&members, threshold)?;
        self.dates.extend_from_slice(dates);
        self.y.extend_from_slice(y);
        self.p.extend(p);
        self.yhat.extend(yhat);
        self.fold.extend(std::iter::repeat_n(fold, dates.len()));
        for (dst, src) in self.members.iter_mut().zip(members) {
            dst.extend(src);
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("date,y,p,yhat,fold,{}\n", MEMBER_NAMES.join(","));
        for i in 0..self.dates.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.dates[i].format(DATE_FORMAT),
                self.y[i],
                self.p[i],
                self.yhat[i],
                self.fold[i],
                self.members[0][i],
                self.members[1][i],
                self.members[2][i]
            );
        }
        out
    }

    pub fn from_csv_str(text: &str, path: &Path) -> Result<Self> {
        let mut out = Predictions::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            let err = |m: &str| Error::Parse { path: path.to_path_buf(), line: i + 1, message: m.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(err("expected 8 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            out.dates.push(NaiveDate::parse_from_str(f[0], DATE_FORMAT).map_err(|_| err("bad date"))?);
            out.y.push(f[1].parse().map_err(|_| err("bad label"))?);
            out.p.push(num(f[2])?);
            out.yhat.push(f[3].parse().map_err(|_| err("bad label"))?);
            out.fold.push(f[4].parse().map_err(|_| err("bad fold"))?);
            for k in 0..3 {
                out.members[k].push(num(f[5 + k])?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: EnsembleModel,
    pub grid: Vec<GridResult>,
    pub folds: Vec<FoldInfo>,
    pub predictions: Predictions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEvaluation {
    pub fold: usize,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub rows: usize,
    pub base_rate: f64,
    /// `None` when the block holds a single class.
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub mode: EvalMode,
    pub rows: usize,
    pub base_rate: f64,
    pub roc_auc: f64,
    pub member_roc_auc: Vec<(String, f64)>,
    pub report: ClassificationReport,
    pub folds: Vec<FoldEvaluation>,
    /// AUC of the last walk-forward test block.
    pub final_fold_roc_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub rows: usize,
    pub background_size: usize,
    pub regimes: RegimeSummary,
    pub permutation_importance: PermutationImportance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: EvalMode,
    pub seed: u64,
    pub label_rows: usize,
    pub label_base_rate: f64,
    pub candidate_features: usize,
    pub selected_features: usize,
    pub evaluation_rows: usize,
    pub roc_auc: f64,
    pub final_fold_roc_auc: Option<f64>,
    pub q1_mean_forward_return: Option<f64>,
    pub q5_mean_forward_return: Option<f64>,
    pub strategy_sharpe: Option<f64>,
    pub benchmark_sharpe: Option<f64>,
}

/// Walk-forward outer folds over `n` dataset rows.
pub fn outer_splits(n: usize, cfg: &RunConfig) -> Result<Vec<crate::learners::cv::CvSplit>> {
    time_series_splits(n, cfg.training.walk_forward_folds, cfg.training.walk_forward_min_train_frac)
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub artifacts: Vec<ArtifactRecord>,
    pub inputs: Vec<InputRecord>,
    pub stages: Vec<String>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Pipeline { cfg, out, artifacts: Vec::new(), inputs: Vec::new(), stages: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let bytes = contents.as_ref();
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.retain(|a| a.name != name);
        self.artifacts.push(ArtifactRecord { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    fn read(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        fs::read_to_string(&path).map_err(|e| Error::data(format!("missing upstream artifact {}: {e}", path.display())))
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let v = f(self).map_err(|e| e.in_stage(name))?;
        self.stages.push(name.to_string());
        Ok(v)
    }

    // ---- ingest ----

    pub fn ingest(&mut self) -> Result<AlignedPanel> {
        self.stage("ingest", |p| p.ingest_inner())
    }

    fn ingest_inner(&mut self) -> Result<AlignedPanel> {
        let data = self.cfg.data.clone();
        let panel = if let Some(name) = &data.synthetic {
            let spec = ScenarioSpec::preset(name)?;
            let (panel, truth) = generate_synthetic_panel(&spec, self.cfg.seed)?;
            self.write(TRUTH_FILE, serde_json::to_string_pretty(&truth)?)?;
            panel
        } else {
            let mut series = Vec::with_capacity(data.symbols.len());
            for sym in &data.symbols {
                let path = self.cfg.data_file(sym)?;
                let bytes = fs::read(&path)
                    .map_err(|e| Error::data(format!("symbol {sym}: cannot read {}: {e}", path.display())))?;
                self.inputs.push(InputRecord {
                    symbol: sym.clone(),
                    path: path.display().to_string(),
                    sha256: sha256_hex(&bytes),
                });
                series.push(load_ohlcv_csv(&path, sym).map_err(|e| Error::data(format!("symbol {sym}: {e}")))?);
            }
            let lo = series.iter().filter_map(|s| s.dates.first()).min().copied();
            let hi = series.iter().filter_map(|s| s.dates.last()).max().copied();
            let (Some(lo), Some(hi)) = (lo, hi) else {
                return Err(Error::data("no price rows in any input file"));
            };
            align_panel(&series, data.start.unwrap_or(lo), data.end.unwrap_or(hi))?
        };
        self.write(PANEL_FILE, panel.to_csv_string())?;
        Ok(panel)
    }

    fn target(&self) -> Result<String> {
        match &self.cfg.data.synthetic {
            Some(name) => Ok(ScenarioSpec::preset(name)?.target),
            None => Ok(self.cfg.data.target.clone()),
        }
    }

    // ---- features ----

    pub fn features(&mut self, panel: AlignedPanel) -> Result<Prepared> {
        self.stage("features", |p| {
            let prepared = p.prepare(panel)?;
            p.write(LABELS_FILE, prepared.labels.to_csv_string())?;
            p.write(FEATURES_CSV, prepared.features.to_csv_string())?;
            p.write(FEATURES_JSON, prepared.features.specs_json()?)?;
            Ok(prepared)
        })
    }

    fn prepare(&self, panel: AlignedPanel) -> Result<Prepared> {
        let target = self.target()?;
        let returns = log_returns(&panel)?;
        let labels = make_labels(&returns, &target, self.cfg.label.horizon, self.cfg.label.threshold)?;
        let features = build_feature_matrix(&returns, &target, &self.cfg.features)?;
        Ok(Prepared { panel, returns, labels, features })
    }

    /// Rebuild [`Prepared`] from the panel and feature artifacts of an
    /// earlier run.
    pub fn load_prepared(&self) -> Result<Prepared> {
        let panel = AlignedPanel::read_csv(self.path(PANEL_FILE))
            .map_err(|e| Error::data(format!("missing upstream artifact {PANEL_FILE}: {e}")))?;
        let target = self.target()?;
        let returns = log_returns(&panel)?;
        let labels = make_labels(&returns, &target, self.cfg.label.horizon, self.cfg.label.threshold)?;
        let features = FeatureMatrix::read(self.path(FEATURES_CSV), self.path(FEATURES_JSON))
            .map_err(|e| Error::data(format!("missing upstream artifact {FEATURES_CSV}: {e}")))?;
        Ok(Prepared { panel, returns, labels, features })
    }

    pub fn load_panel(&self) -> Result<AlignedPanel> {
        AlignedPanel::read_csv(self.path(PANEL_FILE))
            .map_err(|e| Error::data(format!("missing upstream artifact {PANEL_FILE}: {e}")))
    }

    // ---- select ----

    /// Rows of the full dataset usable for selection and model search: all
    /// of them in-sample, those before the first test block walk-forward.
    fn search_rows(&self, n: usize) -> Result<usize> {
        Ok(match self.cfg.mode {
            EvalMode::InSample => n,
            EvalMode::WalkForward => outer_splits(n, &self.cfg)?[0].test.start,
        })
    }

    pub fn select(&mut self, prepared: &Prepared) -> Result<SelectionReport> {
        self.stage("select", |p| {
            let full = assemble(&prepared.features, &prepared.labels)?;
            let rows = p.search_rows(full.n_rows())?;
            let labels = if rows < full.n_rows() {
                let cutoff = full.calendar[rows];
                let keep = prepared.labels.calendar.partition_point(|d| *d < cutoff);
                LabelVector {
                    calendar: prepared.labels.calendar[..keep].to_vec(),
                    y: prepared.labels.y[..keep].to_vec(),
                    ..prepared.labels.clone()
                }
            } else {
                prepared.labels.clone()
            };
            let report = select_top_k(&prepared.features, &labels, &p.cfg.selection)?;
            p.write(SELECTION_FILE, serde_json::to_string_pretty(&report)?)?;
            Ok(report)
        })
    }

    pub fn load_selection(&self) -> Result<SelectionReport> {
        Ok(serde_json::from_str(&self.read(SELECTION_FILE)?)?)
    }

    // ---- train ----

    pub fn train(&mut self, prepared: &Prepared, selection: &SelectionReport) -> Result<Trained> {
        self.stage("train", |p| {
            let trained = p.train_inner(prepared, selection)?;
            p.write(MODEL_FILE, trained.model.to_json()?)?;
            p.write(GRID_FILE, serde_json::to_string_pretty(&trained.grid)?)?;
            p.write(FOLDS_FILE, serde_json::to_string_pretty(&trained.folds)?)?;
            p.write(PREDICTIONS_FILE, trained.predictions.to_csv_string())?;
            Ok(trained)
        })
    }

    fn train_inner(&self, prepared: &Prepared, selection: &SelectionReport) -> Result<Trained> {
        let ds = prepared.dataset(&selection.selected)?;
        let n = ds.n_rows();
        let seed = derive_seed(self.cfg.seed, &[SEED_TRAIN]);
        let t = &self.cfg.training;
        let mut predictions = Predictions::default();
        match self.cfg.mode {
            EvalMode::InSample => {
                let (model, grid) = fit_ensemble(ds.x.view(), &ds.y, &ds.names, &t.grid, t.search, seed)?;
                let members = model.predict_members(ds.x.view())?;
                predictions.extend(&ds.calendar, &ds.y, 0, members, model.threshold)?;
                Ok(Trained { model, grid, folds: Vec::new(), predictions })
            }
            EvalMode::WalkForward => {
                let splits = outer_splits(n, &self.cfg)?;
                let search_end = splits[0].test.start;
                let (hypers, grid) = if t.search {
                    search_hypers(ds.x.slice(s![..search_end, ..]), &ds.y[..search_end], &t.grid, seed)?
                } else {
                    (LearnerKind::ALL.iter().map(|&k| t.grid.base(k)).collect(), Vec::new())
                };
                let purge = t.purge.unwrap_or(self.cfg.label.horizon);
                let mut folds = Vec::new();
                let mut last = None;
                for sp in &splits {
                    let train_end = sp.train.end.saturating_sub(purge);
                    if train_end < 2 {
                        return Err(Error::data(format!("fold {} has no training rows after purging", sp.fold)));
                    }
                    let fold_seed = derive_seed(self.cfg.seed, &[SEED_FOLD, sp.fold as u64]);
                    let model = fit_ensemble_with(
                        ds.x.slice(s![..train_end, ..]),
                        &ds.y[..train_end],
                        &ds.names,
                        &hypers,
                        fold_seed,
                    )?;
                    let test = sp.test.clone();
                    let members = model.predict_members(ds.x.slice(s![test.clone(), ..]))?;
                    predictions.extend(
                        &ds.calendar[test.clone()],
                        &ds.y[test.clone()],
                        sp.fold,
                        members,
                        model.threshold,
                    )?;
                    folds.push(FoldInfo {
                        fold: sp.fold,
                        train_rows: 0..train_end,
                        test_rows: test.clone(),
                        train_start: ds.calendar[0],
                        train_end: ds.calendar[train_end - 1],
                        test_start: ds.calendar[test.start],
                        test_end: ds.calendar[test.end - 1],
                    });
                    last = Some(model);
                }
                let model = last.ok_or_else(|| Error::data("walk-forward produced no folds"))?;
                Ok(Trained { model, grid, folds, predictions })
            }
        }
    }

    pub fn load_model(&self) -> Result<EnsembleModel> {
        EnsembleModel::from_json(&self.read(MODEL_FILE)?)
    }

    pub fn load_predictions(&self) -> Result<Predictions> {
        Predictions::from_csv_str(&self.read(PREDICTIONS_FILE)?, &self.path(PREDICTIONS_FILE))
    }

    pub fn load_folds(&self) -> Result<Vec<FoldInfo>> {
        Ok(serde_json::from_str(&self.read(FOLDS_FILE)?)?)
    }

    // ---- evaluate ----

    pub fn evaluate(&mut self, predictions: &Predictions, folds: &[FoldInfo]) -> Result<EvaluationSummary> {
        self.stage("evaluate", |p| {
            let summary = p.evaluate_inner(predictions, folds)?;
            p.write(EVALUATION_FILE, serde_json::to_string_pretty(&summary)?)?;
            let header =
                format!("mode: {}\nrows: {}\nroc_auc: {}\n\n", summary.mode.as_str(), summary.rows, summary.roc_auc);
            p.write(REPORT_TEXT_FILE, header + &summary.report.to_text_table())?;
            Ok(summary)
        })
    }

    fn evaluate_inner(&self, pr: &Predictions, folds: &[FoldInfo]) -> Result<EvaluationSummary> {
        let report = classification_report(&pr.y, &pr.yhat)?;
        let auc = roc_auc(&pr.p, &pr.y)?;
        let member_roc_auc = MEMBER_NAMES
            .iter()
            .zip(&pr.members)
            .map(|(n, m)| Ok((n.to_string(), roc_auc(m, &pr.y)?)))
            .collect::<Result<_>>()?;
        let mut fold_evals = Vec::new();
        for f in folds {
            let idx: Vec<usize> = (0..pr.fold.len()).filter(|&i| pr.fold[i] == f.fold).collect();
            let y: Vec<u8> = idx.iter().map(|&i| pr.y[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| pr.p[i]).collect();
            fold_evals.push(FoldEvaluation {
                fold: f.fold,
                test_start: f.test_start,
                test_end: f.test_end,
                rows: y.len(),
                base_rate: y.iter().map(|&v| v as f64).sum::<f64>() / y.len().max(1) as f64,
                roc_auc: roc_auc(&p, &y).ok(),
            });
        }
        Ok(EvaluationSummary {
            mode: self.cfg.mode,
            rows: pr.y.len(),
            base_rate: pr.y.iter().map(|&v| v as f64).sum::<f64>() / pr.y.len() as f64,
            roc_auc: auc,
            member_roc_auc,
            report,
            final_fold_roc_auc: fold_evals.last().and_then(|f| f.roc_auc),
            folds: fold_evals,
        })
    }

    // ---- attribute ----

    pub fn attribute(
        &mut self,
        prepared: &Prepared,
        model: &EnsembleModel,
        folds: &[FoldInfo],
    ) -> Result<AttributionSummary> {
        self.stage("attribute", |p| {
            let summary = p.attribute_inner(prepared, model, folds)?;
            p.write(ATTRIBUTION_FILE, serde_json::to_string_pretty(&summary)?)?;
            p.write("attribution_regimes.csv", summary.regimes.to_csv_string())?;
            let mut pi = String::from("feature,mean_auc_drop\n");
            for (f, v) in &summary.permutation_importance.drops {
                let _ = writeln!(pi, "{f},{v}");
            }
            p.write("permutation_importance.csv", pi)?;
            Ok(summary)
        })
    }

    fn attribute_inner(
        &self,
        prepared: &Prepared,
        model: &EnsembleModel,
        folds: &[FoldInfo],
    ) -> Result<AttributionSummary> {
        let ds = prepared.dataset(&model.selected_features)?;
        // Background comes from the rows the explained model was fitted on.
        let train_end = folds.last().map_or(ds.n_rows(), |f| f.train_rows.end);
        let a = &self.cfg.attribution;
        let seed = derive_seed(self.cfg.seed, &[SEED_ATTRIBUTION]);
        let background = background_rows(ds.x.slice(s![..train_end, ..]), a.background_size, seed);
        let f = |x: ndarray::ArrayView2<'_, f64>| model.predict_proba(x);
        let regime_cfg = RegimeConfig {
            max_rows: a.regime_rows,
            n_perms: a.regime_perms,
            background_size: a.background_size,
            seed: derive_seed(seed, &[1]),
        };
        let regimes = regime_attribution_summary(&f, ds.x.view(), &ds.y, &ds.names, background.view(), &regime_cfg)?;
        let permutation_importance =
            permutation_importance(&f, ds.x.view(), &ds.y, &ds.names, a.permutation_repeats, derive_seed(seed, &[2]))?;
        Ok(AttributionSummary {
            rows: ds.n_rows(),
            background_size: background.nrows(),
            regimes,
            permutation_importance,
        })
    }

    // ---- backtest ----

    pub fn backtest(&mut self, prepared: &Prepared, predictions: &Predictions) -> Result<BacktestReport> {
        self.stage("backtest", |p| {
            let target = p.target()?;
            let r = prepared.returns.column(&target)?;
            let folds = (p.cfg.mode == EvalMode::WalkForward).then_some(predictions.fold.as_slice());
            let report = backtest_report(
                &predictions.dates,
                &predictions.p,
                &prepared.returns.calendar,
                r,
                folds,
                &p.cfg.backtest,
            )?;
            p.write(BACKTEST_FILE, report.to_json()?)?;
            p.write("backtest_metrics.csv", report.metrics_csv())?;
            p.write(BACKTEST_DAILY_FILE, report.daily_csv())?;
            Ok(report)
        })
    }

    // ---- manifest ----

    pub fn manifest(&self, failure: Option<&Error>) -> Manifest {
        let mut artifacts = self.artifacts.clone();
        artifacts.sort_by(|a, b| a.name.cmp(&b.name));
        let failed_stage = failure.map(|e| match e {
            Error::Stage { stage, .. } => stage.clone(),
            _ => "setup".to_string(),
        });
        Manifest {
            format_version: MANIFEST_VERSION,
            tool: format!("crashcast {}", env!("CARGO_PKG_VERSION")),
            status: if failure.is_some() { "failed" } else { "complete" }.to_string(),
            failed_stage,
            error: failure.map(|e| e.to_string()),
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            synthetic: self.cfg.data.synthetic.clone(),
            inputs: self.inputs.clone(),
            stages: self.stages.clone(),
            artifacts,
            config: self.cfg.clone(),
        }
    }

    pub fn write_manifest(&self, failure: Option<&Error>) -> Result<Manifest> {
        let m = self.manifest(failure);
        let path = self.path(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }

    fn run_stages(&mut self) -> Result<RunSummary> {
        let panel = self.ingest()?;
        let prepared = self.features(panel)?;
        let selection = self.select(&prepared)?;
        let trained = self.train(&prepared, &selection)?;
        let eval = self.evaluate(&trained.predictions, &trained.folds)?;
        self.attribute(&prepared, &trained.model, &trained.folds)?;
        let bt = self.backtest(&prepared, &trained.predictions)?;
        let plots = self.stage("plot-data", |p| emit_plot_data(&p.out, PlotData::All))?;
        for (name, text) in plots {
            self.write(&name, text)?;
        }
        let q = &bt.quintiles.rows;
        let summary = RunSummary {
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            label_rows: prepared.labels.y.len(),
            label_base_rate: prepared.labels.base_rate(),
            candidate_features: selection.candidates,
            selected_features: selection.selected.len(),
            evaluation_rows: eval.rows,
            roc_auc: eval.roc_auc,
            final_fold_roc_auc: eval.final_fold_roc_auc,
            q1_mean_forward_return: q[0].mean_forward_return,
            q5_mean_forward_return: q[4].mean_forward_return,
            strategy_sharpe: bt.strategy.sharpe,
            benchmark_sharpe: bt.benchmark.sharpe,
        };
        self.write(SUMMARY_FILE, serde_json::to_string_pretty(&summary)?)?;
        Ok(summary)
    }

    /// Runs every stage. The manifest is written either way; on failure it
    /// is marked `failed` and lists the partial artifacts.
    pub fn run(&mut self) -> Result<RunSummary> {
        match self.run_stages() {
            Ok(s) => {
                self.write_manifest(None)?;
                Ok(s)
            }
            Err(e) => {
                // Best effort; the stage error is what the caller needs.
                let _ = self.write_manifest(Some(&e));
                Err(e)
            }
        }
    }
}

/// Convenience wrapper: validate, run, return the summary.
pub fn run_pipeline(cfg: RunConfig) -> Result<RunSummary> {
    Pipeline::new(cfg)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotData {
    MiScores,
    Confusion,
    Trades,
    Histogram,
    Quintiles,
    Equity,
    All,
}

impl std::str::FromStr for PlotData {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mi" | "mi_scores" => PlotData::MiScores,
            "confusion" => PlotData::Confusion,
            "trades" => PlotData::Trades,
            "histogram" => PlotData::Histogram,
            "quintiles" => PlotData::Quintiles,
            "equity" => PlotData::Equity,
            "all" => PlotData::All,
            other => return Err(Error::Config(format!("unknown plot data set `{other}`"))),
        })
    }
}

struct DailyRow {
    date: NaiveDate,
    position: f64,
    quintile: u8,
    strategy: Option<f64>,
    benchmark: Option<f64>,
    equity: f64,
    benchmark_equity: f64,
}

fn read_daily(dir: &Path) -> Result<Vec<DailyRow>> {
    let path = dir.join(BACKTEST_DAILY_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::data(format!("missing upstream artifact {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let err = || Error::Parse { path: path.clone(), line: i + 1, message: "malformed daily row".into() };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err());
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| err())
            }
        };
        rows.push(DailyRow {
            date: NaiveDate::parse_from_str(f[0], DATE_FORMAT).map_err(|_| err())?,
            position: f[2].parse().map_err(|_| err())?,
            quintile: f[3].parse().map_err(|_| err())?,
            strategy: opt(f[4])?,
            benchmark: opt(f[5])?,
            equity: f[6].parse().map_err(|_| err())?,
            benchmark_equity: f[7].parse().map_err(|_| err())?,
        });
    }
    Ok(rows)
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::data(format!("missing upstream artifact {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Builds chart-ready CSV tables from the artifacts of an earlier run and
/// returns `(file name, contents)` pairs; the caller decides where to
/// write them.
pub fn emit_plot_data(dir: &Path, which: PlotData) -> Result<Vec<(String, String)>> {
    let want = |w: PlotData| which == PlotData::All || which == w;
    let mut out = Vec::new();
    if want(PlotData::MiScores) {
        let sel: SelectionReport = read_json(dir, SELECTION_FILE)?;
        let status = |name: &str| {
            if sel.selected.iter().any(|s| s == name) {
                "selected"
            } else if sel.dropped_low_variance.iter().any(|s| s == name) {
                "dropped_low_variance"
            } else if sel.dropped_correlated.iter().any(|c| c.dropped == name) {
                "dropped_correlated"
            } else {
                "not_selected"
            }
        };
        let mut rows: Vec<(&String, &f64)> = sel.candidate_mi_scores.iter().collect();
        rows.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let mut csv = String::from("feature,mutual_information,status\n");
        for (name, mi) in rows {
            let _ = writeln!(csv, "{name},{mi},{}", status(name));
        }
        out.push(("plot_mi_scores.csv".to_string(), csv));
    }
    if want(PlotData::Confusion) {
        let eval: EvaluationSummary = read_json(dir, EVALUATION_FILE)?;
        let c = eval.report.confusion;
        let csv = format!("actual,predicted,count\n0,0,{}\n0,1,{}\n1,0,{}\n1,1,{}\n", c.tn, c.fp, c.fn_, c.tp);
        out.push(("plot_confusion.csv".to_string(), csv));
    }
    let needs_daily =
        [PlotData::Trades, PlotData::Histogram, PlotData::Quintiles, PlotData::Equity].into_iter().any(want);
    if needs_daily {
        let daily = read_daily(dir)?;
        let report: BacktestReport = read_json(dir, BACKTEST_FILE)?;
        if want(PlotData::Trades) {
            let positions = PositionSeries {
                calendar: daily.iter().map(|r| r.date).collect(),
                position: daily.iter().map(|r| r.position).collect(),
            };
            let mut csv = String::from("date,direction,size\n");
            for t in trade_markers(&positions) {
                let _ = writeln!(csv, "{},{},{}", t.date.format(DATE_FORMAT), t.direction, t.size);
            }
            out.push(("plot_trades.csv".to_string(), csv));
        }
        if want(PlotData::Histogram) {
            let s: Vec<f64> = daily.iter().filter_map(|r| r.strategy).collect();
            let b: Vec<f64> = daily.iter().filter_map(|r| r.benchmark).collect();
            let h = return_histogram(&s, &b, report.histogram_bins);
            let mut csv = String::from("bin_left,bin_right,count_strategy,count_benchmark\n");
            for k in 0..h.strategy.len() {
                let _ = writeln!(csv, "{},{},{},{}", h.edges[k], h.edges[k + 1], h.strategy[k], h.benchmark[k]);
            }
            out.push(("plot_return_histogram.csv".to_string(), csv));
        }
        if want(PlotData::Quintiles) {
            let mut table = String::from("group,count,mean_forward_return\n");
            for r in &report.quintiles.rows {
                let v = r.mean_forward_return.map_or(String::new(), |v| v.to_string());
                let _ = writeln!(table, "Q{},{},{v}", r.quintile, r.count);
            }
            let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            let low: usize = report.quintiles.rows[..4].iter().map(|r| r.count).sum();
            let _ = writeln!(table, "HIGH,{},{}", report.quintiles.rows[4].count, fmt(report.quintiles.high));
            let _ = writeln!(table, "LOW,{low},{}", fmt(report.quintiles.low));
            out.push(("plot_quintile_table.csv".to_string(), table));
            // Cumulative next-day benchmark return accumulated per quintile.
            let mut cum = [0.0f64; 5];
            let mut curves = String::from("date,Q1,Q2,Q3,Q4,Q5\n");
            for w in daily.windows(2) {
                if let Some(r) = w[1].benchmark {
                    cum[w[0].quintile as usize - 1] += r;
                }
                let _ = writeln!(
                    curves,
                    "{},{},{},{},{},{}",
                    w[1].date.format(DATE_FORMAT),
                    cum[0],
                    cum[1],
                    cum[2],
                    cum[3],
                    cum[4]
                );
            }
            out.push(("plot_quintile_curves.csv".to_string(), curves));
        }
        if want(PlotData::Equity) {
            let mut csv = String::from("date,strategy_equity,benchmark_equity\n");
            for r in &daily {
                let _ = writeln!(csv, "{},{},{}", r.date.format(DATE_FORMAT), r.equity, r.benchmark_equity);
            }
            out.push(("plot_equity.csv".to_string(), csv));
        }
    }
    Ok(out)
}

/// Feature rows for `model` from a prepared run, in model column order.
pub fn model_inputs(prepared: &Prepared, model: &EnsembleModel) -> Result<(Vec<NaiveDate>, Array2<f64>)> {
    let ds = prepared.dataset(&model.selected_features)?;
    Ok((ds.calendar, ds.x))
}

/// Generates a synthetic scenario and writes per-symbol price files plus the
/// planted truth into `dir`.
pub fn write_synthetic(name: &str, seed: u64, dir: &Path) -> Result<(AlignedPanel, SyntheticTruth)> {
    let spec = ScenarioSpec::preset(name)?;
    let (panel, truth) = generate_synthetic_panel(&spec, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (j, sym) in panel.symbols.iter().enumerate() {
        let series =
            crate::market_data::AssetSeries::new(sym.clone(), panel.calendar.clone(), panel.prices[j].clone(), None)?;
        crate::market_data::write_ohlcv_csv(&series, dir.join(format!("{sym}.csv")))?;
    }
    let p = dir.join(PANEL_FILE);
    fs::write(&p, panel.to_csv_string()).map_err(|e| Error::io(&p, e))?;
    let t = dir.join(TRUTH_FILE);
    fs::write(&t, serde_json::to_string_pretty(&truth)?).map_err(|e| Error::io(&t, e))?;
    Ok((panel, truth))
}
