//! Second-order gradient boosting of regression trees on the logistic loss.
//!
//! Each round fits one tree to the per-row gradients `g = p - y` and hessians
//! `h = p (1 - p)` of the current model. Splits maximise the usual L2-regularised
//! gain and leaves carry `w = -G / (H + lambda)`. Trees are grown level by
//! level over presorted feature columns, so every level costs one pass over
//! `rows x features`.

use ndarray::{ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{check_labels, check_width, log_loss, sigmoid, ProbabilityModel};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub variant: Variant,
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub subsample: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl GbdtParams {
    /// Deeper trees, mild L2, no row sampling.
    pub fn variant_a() -> Self {
        GbdtParams {
            variant: Variant::A,
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            lambda: 1.0,
            subsample: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }

    /// Stumpier trees, stronger L2, 80% row sampling, more rounds.
    pub fn variant_b() -> Self {
        GbdtParams {
            variant: Variant::B,
            n_trees: 400,
            max_depth: 2,
            learning_rate: 0.05,
            lambda: 3.0,
            subsample: 0.8,
            min_child_weight: 1.0,
            seed: 0,
        }
    }

    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::A => Self::variant_a(),
            Variant::B => Self::variant_b(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::invalid("tree depth must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || self.min_child_weight < 0.0 {
            return Err(Error::invalid("learning rate must be positive and lambda nonnegative"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid("subsample must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { weight } => return *weight,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_weights(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { weight } => Some(*weight),
                Node::Split { .. } => None,
            })
            .collect()
    }

    pub fn uses_feature(&self, j: usize) -> bool {
        self.nodes.iter().any(|n| matches!(n, Node::Split { feature, .. } if *feature == j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub n_features: usize,
    /// Prior log-odds of the training labels.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Mean training log-loss before the first tree and after each round.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.params.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Frontier {
    node: usize,
    g: f64,
    h: f64,
}

fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn grow_tree(
    cols: &[Vec<f64>],
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    params: &GbdtParams,
) -> Option<Tree> {
    let n = grad.len();
    let lambda = params.lambda;
    let mut node_of: Vec<Option<usize>> = (0..n).map(|i| in_sample[i].then_some(0)).collect();
    let (g0, h0) = (0..n).filter(|&i| in_sample[i]).fold((0.0, 0.0), |(g, h), i| (g + grad[i], h + hess[i]));
    let mut nodes = vec![Node::Leaf { weight: leaf_weight(g0, h0, lambda) }];
    let mut frontier = vec![Frontier { node: 0, g: g0, h: h0 }];

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        // Frontier slot per node id.
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, f) in frontier.iter().enumerate() {
            slot[f.node] = s;
        }
        let mut best: Vec<Option<Candidate>> = frontier.iter().map(|_| None).collect();
        let mut acc = vec![(0.0f64, 0.0f64, f64::NAN); frontier.len()];
        for (feature, order) in sorted.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = (0.0, 0.0, f64::NAN));
            let col = &cols[feature];
            for &i in order {
                let i = i as usize;
                let Some(node) = node_of[i] else { continue };
                let s = slot[node];
                let v = col[i];
                let (gl, hl, last) = acc[s];
                if !last.is_nan() && v > last {
                    let fr = &frontier[s];
                    let (gr, hr) = (fr.g - gl, fr.h - hl);
                    if hl >= params.min_child_weight && hr >= params.min_child_weight {
                        let gain = 0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(fr.g, fr.h, lambda));
                        if gain > 0.0 && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                            let mut threshold = 0.5 * (last + v);
                            if threshold >= v {
                                threshold = last;
                            }
                            best[s] = Some(Candidate { gain, feature, threshold });
                        }
                    }
                }
                acc[s] = (gl + grad[i], hl + hess[i], v);
            }
        }

        if frontier[0].node == 0 && best[0].is_none() && nodes.len() == 1 {
            return None;
        }

        let mut next = Vec::new();
        let mut children = vec![(usize::MAX, usize::MAX); frontier.len()];
        for (s, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let left = nodes.len();
                nodes.push(Node::Leaf { weight: 0.0 });
                nodes.push(Node::Leaf { weight: 0.0 });
                nodes[frontier[s].node] =
                    Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                children[s] = (left, left + 1);
            }
        }
        let mut sums = vec![(0.0f64, 0.0f64); nodes.len()];
        for i in 0..n {
            let Some(node) = node_of[i] else { continue };
            let s = slot[node];
            match &best[s] {
                Some(c) => {
                    let child = if cols[c.feature][i] <= c.threshold { children[s].0 } else { children[s].1 };
                    node_of[i] = Some(child);
                    sums[child].0 += grad[i];
                    sums[child].1 += hess[i];
                }
                None => node_of[i] = None,
            }
        }
        for &(l, r) in children.iter().filter(|c| c.0 != usize::MAX) {
            for k in [l, r] {
                let (g, h) = sums[k];
                nodes[k] = Node::Leaf { weight: leaf_weight(g, h, lambda) };
                next.push(Frontier { node: k, g, h });
            }
        }
        frontier = next;
    }
    Some(Tree { nodes })
}

/// Boost `params.n_trees` rounds (fewer if the root can no longer be split).
pub fn gbdt_train(x: ArrayView2<'_, f64>, y: &[u8], params: &GbdtParams) -> Result<GbdtModel> {
    if x.nrows() != y.len() {
        return Err(Error::invalid("row and label counts differ"));
    }
    check_labels(y)?;
    params.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("GBDT inputs must be finite"));
    }
    let n = x.nrows();
    let cols: Vec<Vec<f64>> = x.axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
    let sorted: Vec<Vec<u32>> = cols
        .iter()
        .map(|c| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]));
            idx
        })
        .collect();
    let rate = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let mut margin = vec![base_score; n];
    let mut model = GbdtModel {
        params: params.clone(),
        n_features: x.ncols(),
        base_score,
        trees: Vec::new(),
        train_loss: Vec::new(),
    };
    let probs = |m: &[f64]| m.iter().map(|&z| sigmoid(z)).collect::<Vec<f64>>();
    model.train_loss.push(log_loss(&probs(&margin), y));

    let mut rng = rng::stream(params.seed, &[0x67626474]);
    let n_sample = ((params.subsample * n as f64).floor() as usize).clamp(1, n);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let rows: Vec<Vec<f64>> = x.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    for _round in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - y[i] as f64;
            hess[i] = p * (1.0 - p);
        }
        let in_sample = if n_sample < n {
            let mut mask = vec![false; n];
            for i in sample(&mut rng, n, n_sample) {
                mask[i] = true;
            }
            mask
        } else {
            vec![true; n]
        };
        let Some(tree) = grow_tree(&cols, &sorted, &grad, &hess, &in_sample, params) else {
            break;
        };
        for (m, row) in margin.iter_mut().zip(&rows) {
            *m += params.learning_rate * tree.predict_row(row);
        }
        if tree.leaf_weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::numeric("non-finite leaf weight"));
        }
        model.trees.push(tree);
        model.train_loss.push(log_loss(&probs(&margin), y));
    }
    Ok(model)
}

pub fn gbdt_predict_proba(model: &GbdtModel, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_width(model.n_features, &x)?;
    Ok(x.axis_iter(Axis(0))
        .map(|row| {
            let row = row.to_vec();
            sigmoid(model.margin_row(&row))
        })
        .collect())
}

impl ProbabilityModel for GbdtModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        gbdt_predict_proba(self, x)
    }
}
