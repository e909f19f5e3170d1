//! Exhaustive hyperparameter search scored by mean time-ordered fold AUC.

use ndarray::{s, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{time_series_splits, CvSplit};
use super::ensemble::{EnsembleModel, DEFAULT_THRESHOLD, FORMAT_VERSION};
use super::gbdt::{gbdt_predict_proba, gbdt_train, GbdtModel, GbdtParams};
use super::mlp::{mlp_predict_proba, mlp_train, MlpModel, MlpParams};
use super::standardize::fit_standardizer;
use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Mlp,
    GbdtA,
    GbdtB,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 3] = [LearnerKind::Mlp, LearnerKind::GbdtA, LearnerKind::GbdtB];

    fn tag(self) -> u64 {
        match self {
            LearnerKind::Mlp => 1,
            LearnerKind::GbdtA => 2,
            LearnerKind::GbdtB => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum Hyper {
    Mlp(MlpParams),
    Gbdt(GbdtParams),
}

impl Hyper {
    fn with_seed(&self, seed: u64) -> Hyper {
        match self {
            Hyper::Mlp(p) => Hyper::Mlp(MlpParams { seed, ..p.clone() }),
            Hyper::Gbdt(p) => Hyper::Gbdt(GbdtParams { seed, ..p.clone() }),
        }
    }
}

/// A fitted member of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Mlp(MlpModel),
    Gbdt(GbdtModel),
}

impl Fitted {
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match self {
            Fitted::Mlp(m) => mlp_predict_proba(m, x),
            Fitted::Gbdt(m) => gbdt_predict_proba(m, x),
        }
    }
}

pub fn fit_hyper(hyper: &Hyper, x: ArrayView2<'_, f64>, y: &[u8]) -> Result<Fitted> {
    Ok(match hyper {
        Hyper::Mlp(p) => Fitted::Mlp(mlp_train(x, y, p)?),
        Hyper::Gbdt(p) => Fitted::Gbdt(gbdt_train(x, y, p)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub folds: usize,
    pub min_train_frac: f64,
    pub tree_depths: Vec<usize>,
    pub tree_learning_rates: Vec<f64>,
    pub mlp_hidden: Vec<Vec<usize>>,
    pub mlp_learning_rates: Vec<f64>,
    pub mlp: MlpParams,
    pub gbdt_a: GbdtParams,
    pub gbdt_b: GbdtParams,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            folds: 3,
            min_train_frac: 0.5,
            tree_depths: vec![2, 3, 4],
            tree_learning_rates: vec![0.05, 0.1],
            mlp_hidden: vec![vec![16], vec![32], vec![64]],
            mlp_learning_rates: vec![0.003, 0.01],
            mlp: MlpParams::default(),
            gbdt_a: GbdtParams::variant_a(),
            gbdt_b: GbdtParams::variant_b(),
        }
    }
}

impl GridConfig {
    /// Defaults for `kind` without any search.
    pub fn base(&self, kind: LearnerKind) -> Hyper {
        match kind {
            LearnerKind::Mlp => Hyper::Mlp(self.mlp.clone()),
            LearnerKind::GbdtA => Hyper::Gbdt(self.gbdt_a.clone()),
            LearnerKind::GbdtB => Hyper::Gbdt(self.gbdt_b.clone()),
        }
    }

    /// Candidates in canonical order: (hidden, lr) for the MLP and
    /// (depth, learning rate) for trees, each in lexicographic order of the
    /// configured lists.
    pub fn candidates(&self, kind: LearnerKind) -> Vec<Hyper> {
        let mut out = Vec::new();
        match kind {
            LearnerKind::Mlp => {
                for hidden in &self.mlp_hidden {
                    for &lr in &self.mlp_learning_rates {
                        out.push(Hyper::Mlp(MlpParams {
                            hidden: hidden.clone(),
                            learning_rate: lr,
                            ..self.mlp.clone()
                        }));
                    }
                }
            }
            LearnerKind::GbdtA | LearnerKind::GbdtB => {
                let base = if kind == LearnerKind::GbdtA { &self.gbdt_a } else { &self.gbdt_b };
                for &depth in &self.tree_depths {
                    for &lr in &self.tree_learning_rates {
                        out.push(Hyper::Gbdt(GbdtParams { max_depth: depth, learning_rate: lr, ..base.clone() }));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub hyper: Hyper,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Folds that fell back to AUC 0.5, with the reason.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub kind: LearnerKind,
    pub splits: Vec<CvSplit>,
    pub candidates: Vec<CandidateScore>,
    pub best_index: usize,
}

impl GridResult {
    pub fn best(&self) -> &CandidateScore {
        &self.candidates[self.best_index]
    }
}

fn score_fold(hyper: &Hyper, x: ArrayView2<'_, f64>, y: &[u8], split: &CvSplit) -> Result<f64> {
    let train = x.slice(s![split.train.clone(), ..]);
    let test = x.slice(s![split.test.clone(), ..]);
    let stats = fit_standardizer(train)?;
    let model = fit_hyper(hyper, stats.apply(train)?.view(), &y[split.train.clone()])?;
    let p = model.predict_proba(stats.apply(test)?.view())?;
    roc_auc(&p, &y[split.test.clone()])
}

/// Scores every candidate on every fold and returns the best by mean AUC;
/// ties go to the earliest candidate. `x` is unstandardized; each fold fits
/// its own standardizer on its training rows.
pub fn grid_search(
    kind: LearnerKind,
    candidates: &[Hyper],
    x: ArrayView2<'_, f64>,
    y: &[u8],
    splits: &[CvSplit],
    seed: u64,
) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    if x.nrows() != y.len() {
        return Err(Error::invalid("feature and label row counts differ"));
    }
    let jobs: Vec<(usize, usize)> =
        (0..candidates.len()).flat_map(|c| (0..splits.len()).map(move |f| (c, f))).collect();
    let outcomes: Vec<std::result::Result<f64, String>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let s = derive_seed(seed, &[kind.tag(), c as u64, f as u64]);
            score_fold(&candidates[c].with_seed(s), x, y, &splits[f]).map_err(|e| e.to_string())
        })
        .collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for (c, hyper) in candidates.iter().enumerate() {
        let mut fold_aucs = Vec::with_capacity(splits.len());
        let mut failures = Vec::new();
        for f in 0..splits.len() {
            match &outcomes[c * splits.len() + f] {
                Ok(a) => fold_aucs.push(*a),
                Err(msg) => {
                    fold_aucs.push(0.5);
                    failures.push(format!("fold {f}: {msg}"));
                }
            }
        }
        let mean_auc = fold_aucs.iter().sum::<f64>() / fold_aucs.len().max(1) as f64;
        scores.push(CandidateScore { index: c, hyper: hyper.clone(), fold_aucs, mean_auc, failures });
    }
    let mut best_index = 0;
    for (i, sc) in scores.iter().enumerate() {
        if sc.mean_auc > scores[best_index].mean_auc {
            best_index = i;
        }
    }
    Ok(GridResult { kind, splits: splits.to_vec(), candidates: scores, best_index })
}

/// Seed used when refitting a member on the full training set.
pub fn refit_seed(master: u64, kind: LearnerKind) -> u64 {
    derive_seed(master, &[kind.tag(), u64::MAX])
}

/// Grid-searches each member on `x` and returns the winners in
/// [`LearnerKind::ALL`] order with the full search record.
pub fn search_hypers(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    grid: &GridConfig,
    seed: u64,
) -> Result<(Vec<Hyper>, Vec<GridResult>)> {
    let splits = time_series_splits(x.nrows(), grid.folds, grid.min_train_frac)?;
    let mut chosen = Vec::new();
    let mut results = Vec::new();
    for kind in LearnerKind::ALL {
        let r = grid_search(kind, &grid.candidates(kind), x, y, &splits, seed)?;
        chosen.push(r.best().hyper.clone());
        results.push(r);
    }
    Ok((chosen, results))
}

/// Fits the ensemble on raw rows `x` with one hyperparameter set per member
/// in [`LearnerKind::ALL`] order.
pub fn fit_ensemble_with(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    features: &[String],
    hypers: &[Hyper],
    seed: u64,
) -> Result<EnsembleModel> {
    if features.len() != x.ncols() {
        return Err(Error::invalid("feature name count does not match matrix width"));
    }
    if hypers.len() != LearnerKind::ALL.len() {
        return Err(Error::invalid("need one hyperparameter set per ensemble member"));
    }
    let standardizer = fit_standardizer(x)?;
    let z = standardizer.apply(x)?;
    let fitted: Vec<Fitted> = LearnerKind::ALL
        .par_iter()
        .zip(hypers.par_iter())
        .map(|(&kind, hyper)| fit_hyper(&hyper.with_seed(refit_seed(seed, kind)), z.view(), y))
        .collect::<Result<_>>()?;
    let mut it = fitted.into_iter();
    let (Some(Fitted::Mlp(mlp)), Some(Fitted::Gbdt(gbdt_a)), Some(Fitted::Gbdt(gbdt_b))) =
        (it.next(), it.next(), it.next())
    else {
        return Err(Error::invalid("hyperparameters are not in mlp, gbdt, gbdt order"));
    };
    Ok(EnsembleModel {
        format_version: FORMAT_VERSION,
        selected_features: features.to_vec(),
        standardizer,
        mlp,
        gbdt_a,
        gbdt_b,
        threshold: DEFAULT_THRESHOLD,
    })
}

/// Fits the three-member ensemble on raw rows `x`. With `search` set, each
/// member's hyperparameters come from a grid search on the same rows.
pub fn fit_ensemble(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    features: &[String],
    grid: &GridConfig,
    search: bool,
    seed: u64,
) -> Result<(EnsembleModel, Vec<GridResult>)> {
    let (hypers, results) = if search {
        search_hypers(x, y, grid, seed)?
    } else {
        (LearnerKind::ALL.iter().map(|&k| grid.base(k)).collect(), Vec::new())
    };
    Ok((fit_ensemble_with(x, y, features, &hypers, seed)?, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::gbdt::Variant;
    use ndarray::Array2;
    use rand::Rng;

    fn xor_data(n: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = crate::rng::stream(seed, &[]);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y.push(u8::from((a > 0.0) != (b > 0.0)));
        }
        (x, y)
    }

    fn small_trees(depths: &[usize]) -> Vec<Hyper> {
        depths
            .iter()
            .map(|&d| Hyper::Gbdt(GbdtParams { max_depth: d, n_trees: 30, ..GbdtParams::variant_a() }))
            .collect()
    }

    #[test]
    fn single_candidate_is_returned() {
        let (x, y) = xor_data(200, 1);
        let splits = time_series_splits(200, 2, 0.5).unwrap();
        let cands = small_trees(&[2]);
        let r = grid_search(LearnerKind::GbdtA, &cands, x.view(), &y, &splits, 3).unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.best().fold_aucs.len(), 2);
    }

    #[test]
    fn interaction_needs_depth() {
        let (x, y) = xor_data(400, 2);
        let splits = time_series_splits(400, 3, 0.5).unwrap();
        let cands = small_trees(&[1, 2]);
        let r = grid_search(LearnerKind::GbdtA, &cands, x.view(), &y, &splits, 3).unwrap();
        assert_eq!(r.best_index, 1);
        assert!(r.candidates[1].mean_auc > 0.9);
        let again = grid_search(LearnerKind::GbdtA, &cands, x.view(), &y, &splits, 3).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn failing_fold_scores_half() {
        let (x, mut y) = xor_data(100, 3);
        for v in &mut y[..60] {
            *v = 0;
        }
        let splits = time_series_splits(100, 2, 0.4).unwrap();
        // First training window [0, 40) holds only zeros.
        let r = grid_search(LearnerKind::GbdtA, &small_trees(&[2]), x.view(), &y, &splits, 0).unwrap();
        assert_eq!(r.best().fold_aucs[0], 0.5);
        assert_eq!(r.best().failures.len(), 1);
    }

    #[test]
    fn default_grid_order() {
        let g = GridConfig::default();
        let c = g.candidates(LearnerKind::GbdtB);
        assert_eq!(c.len(), 6);
        let Hyper::Gbdt(first) = &c[0] else { panic!() };
        assert_eq!((first.max_depth, first.learning_rate, first.variant), (2, 0.05, Variant::B));
        assert_eq!(g.candidates(LearnerKind::Mlp).len(), 6);
    }

    #[test]
    fn ensemble_round_trips_through_json() {
        let (x, y) = xor_data(120, 4);
        let grid = GridConfig {
            mlp: MlpParams { epochs: 5, ..MlpParams::default() },
            gbdt_a: GbdtParams { n_trees: 10, ..GbdtParams::variant_a() },
            gbdt_b: GbdtParams { n_trees: 10, ..GbdtParams::variant_b() },
            ..GridConfig::default()
        };
        let names = vec!["a".to_string(), "b".to_string()];
        let (m, _) = fit_ensemble(x.view(), &y, &names, &grid, false, 9).unwrap();
        let text = m.to_json().unwrap();
        let back = EnsembleModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
        let (p, _) = m.predict(x.view()).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
