//! Shallow fully connected network with a two-way softmax output.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_labels, check_width, ProbabilityModel};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: vec![32],
            activation: Activation::Relu,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 64,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn weight_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.outputs, self.inputs), &self.weights).expect("layer shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub params: MlpParams,
    /// Mean mini-batch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Gradients in the same layout as [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Symmetric uniform initialisation in `±1/sqrt(fan_in)`.
    pub fn init(n_inputs: usize, params: &MlpParams) -> Result<Self> {
        if params.hidden.is_empty() || params.hidden.len() > 3 {
            return Err(Error::invalid("MLP must have between one and three hidden layers"));
        }
        if n_inputs == 0 || params.hidden.contains(&0) {
            return Err(Error::invalid("MLP layer widths must be positive"));
        }
        let mut rng = rng::stream(params.seed, &[0x6d6c70]);
        let mut sizes = vec![n_inputs];
        sizes.extend(&params.hidden);
        sizes.push(2);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(MlpModel { layers, activation: params.activation, params: params.clone(), loss_history: Vec::new() })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    /// Activations of every layer for a batch; the last entry holds softmax
    /// probabilities.
    fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { acts[l - 1usize].view() };
            let mut z = input.dot(&layer.weight_view().t());
            z += &ArrayView2::from_shape((1, layer.outputs), &layer.bias).expect("bias shape");
            if l == last {
                for mut row in z.axis_iter_mut(Axis(0)) {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - m).exp());
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
            } else {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean cross-entropy plus `l2 / 2 * sum(W^2)` and its gradients.
    pub fn loss_and_gradients(&self, x: ArrayView2<'_, f64>, y: &[u8], l2: f64) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let acts = self.forward_batch(x);
        let probs = acts.last().expect("output layer");
        let mut loss = 0.0;
        let mut delta = probs.clone();
        for (i, &yi) in y.iter().enumerate() {
            let c = yi as usize;
            loss -= probs[[i, c]].max(1e-300).ln();
            delta[[i, c]] -= 1.0;
        }
        loss /= n;
        delta.mapv_inplace(|v| v / n);
        loss += 0.5 * l2 * self.layers.iter().flat_map(|l| &l.weights).map(|w| w * w).sum::<f64>();

        let mut gw = vec![Vec::new(); self.layers.len()];
        let mut gb = vec![Vec::new(); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = if l == 0 { x } else { acts[l - 1].view() };
            let mut dw = delta.t().dot(&input);
            dw.zip_mut_with(&layer.weight_view(), |g, w| *g += l2 * w);
            gw[l] = dw.into_raw_vec_and_offset().0;
            gb[l] = delta.sum_axis(Axis(0)).to_vec();
            if l > 0 {
                let mut back = delta.dot(&layer.weight_view());
                back.zip_mut_with(&acts[l - 1], |d, a| *d *= self.activation.derivative_from_output(*a));
                delta = back;
            }
        }
        (loss, Gradients { weights: gw, bias: gb })
    }

    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[u8], l2: f64) -> f64 {
        self.loss_and_gradients(x, y, l2).0
    }

    fn forward_row(&self, row: &[f64], scratch: &mut Vec<f64>, next: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(row);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            next.clear();
            for o in 0..layer.outputs {
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let z = layer.bias[o] + w.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum::<f64>();
                next.push(if l == last { z } else { self.activation.apply(z) });
            }
            std::mem::swap(scratch, next);
        }
        // Two-way softmax, class-1 probability.
        super::sigmoid(scratch[1] - scratch[0])
    }
}

/// Mini-batch gradient descent on cross-entropy with L2 weight decay.
pub fn mlp_train(x: ArrayView2<'_, f64>, y: &[u8], params: &MlpParams) -> Result<MlpModel> {
    if x.nrows() != y.len() {
        return Err(Error::invalid("row and label counts differ"));
    }
    check_labels(y)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("MLP inputs must be finite"));
    }
    if params.batch_size == 0 || !(params.learning_rate > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    let mut model = MlpModel::init(x.ncols(), params)?;
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut shuffle = rng::stream(params.seed, &[0x73687566]);
    for epoch in 0..params.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(params.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = model.loss_and_gradients(xb.view(), &yb, params.l2);
            if !loss.is_finite() {
                return Err(Error::numeric(format!("MLP loss diverged at epoch {epoch}")));
            }
            total += loss;
            batches += 1;
            let lr = params.learning_rate;
            for (layer, (gw, gb)) in model.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
                layer.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
                layer.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
            }
        }
        model.loss_history.push(total / batches as f64);
    }
    if model.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)).any(|v| !v.is_finite()) {
        return Err(Error::numeric("MLP parameters became non-finite"));
    }
    Ok(model)
}

pub fn mlp_predict_proba(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_width(model.layers[0].inputs, &x)?;
    let mut scratch = Vec::new();
    let mut next = Vec::new();
    Ok(x.axis_iter(Axis(0))
        .map(|row| {
            let row: Vec<f64> = row.to_vec();
            model.forward_row(&row, &mut scratch, &mut next)
        })
        .collect())
}

impl ProbabilityModel for MlpModel {
    fn n_features(&self) -> usize {
        self.layers[0].inputs
    }

    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        mlp_predict_proba(self, x)
    }
}

/// Both class probabilities for each row; rows sum to one.
pub fn mlp_predict_both(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let p1 = Array1::from(mlp_predict_proba(model, x)?);
    let mut out = Array2::zeros((p1.len(), 2));
    out.column_mut(1).assign(&p1);
    out.column_mut(0).assign(&p1.mapv(|p| 1.0 - p));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn zero_model(d: usize) -> MlpModel {
        let mut m = MlpModel::init(d, &MlpParams::default()).unwrap();
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        m
    }

    #[test]
    fn zero_weights_predict_one_half() {
        let m = zero_model(3);
        let x = array![[1.0, -2.0, 3.0], [0.0, 0.0, 0.0]];
        assert_eq!(mlp_predict_proba(&m, x.view()).unwrap(), vec![0.5, 0.5]);
        let both = mlp_predict_both(&m, x.view()).unwrap();
        for row in both.rows() {
            assert_eq!(row.sum(), 1.0);
        }
        assert!(mlp_predict_proba(&m, array![[1.0]].view()).is_err());
    }

    #[test]
    fn batch_and_single_row_predictions_agree() {
        let m = MlpModel::init(4, &MlpParams { seed: 9, ..Default::default() }).unwrap();
        let x = Array2::from_shape_fn((6, 4), |(i, j)| (i as f64 - 2.5) * 0.3 + j as f64 * 0.1);
        let batch = mlp_predict_proba(&m, x.view()).unwrap();
        for i in 0..6 {
            let single = mlp_predict_proba(&m, x.slice(ndarray::s![i..i + 1, ..])).unwrap();
            assert_eq!(single[0], batch[i]);
        }
    }

    #[test]
    fn separable_fixture_is_learned() {
        let n = 200;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let t = i as f64 / n as f64;
            if j == 0 {
                (t * 37.0).sin()
            } else {
                (t * 53.0).cos()
            }
        });
        let y: Vec<u8> = x.rows().into_iter().map(|r| u8::from(r[0] + r[1] > 0.0)).collect();
        let params = MlpParams {
            hidden: vec![8],
            learning_rate: 0.1,
            epochs: 500,
            batch_size: 16,
            seed: 1,
            ..Default::default()
        };
        let m = mlp_train(x.view(), &y, &params).unwrap();
        let p = mlp_predict_proba(&m, x.view()).unwrap();
        let acc = p.iter().zip(&y).filter(|(p, y)| u8::from(**p >= 0.5) == **y).count();
        assert_eq!(acc, n);
    }

    #[test]
    fn full_batch_loss_is_monotone_on_easy_problem() {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let y: Vec<u8> = (0..40).map(|i| u8::from(x[[i, 0]] > 0.0)).collect();
        let params = MlpParams {
            hidden: vec![4],
            activation: Activation::Tanh,
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 40,
            seed: 2,
            ..Default::default()
        };
        let m = mlp_train(x.view(), &y, &params).unwrap();
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn rejects_bad_architectures_and_single_class() {
        let x = array![[0.0], [1.0]];
        assert!(mlp_train(x.view(), &[1, 1], &MlpParams::default()).is_err());
        let deep = MlpParams { hidden: vec![2, 2, 2, 2], ..Default::default() };
        assert!(mlp_train(x.view(), &[0, 1], &deep).is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i + 3 * j) % 7) as f64);
        let y: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let p = MlpParams { epochs: 5, seed: 4, ..Default::default() };
        assert_eq!(mlp_train(x.view(), &y, &p).unwrap(), mlp_train(x.view(), &y, &p).unwrap());
    }
}
