//! Base learners, the soft-voting ensemble and time-ordered model selection.

pub mod cv;
pub mod ensemble;
pub mod gbdt;
pub mod grid;
pub mod mlp;
pub mod standardize;

use ndarray::ArrayView2;

use crate::error::Result;

/// Anything that maps feature rows to a crash probability in `[0, 1]`.
pub trait ProbabilityModel: Sync {
    fn n_features(&self) -> usize;

    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>>;
}

pub(crate) fn check_width(expected: usize, x: &ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(crate::Error::invalid(format!("model expects {expected} features, got {}", x.ncols())));
    }
    Ok(())
}

pub(crate) fn check_labels(y: &[u8]) -> Result<()> {
    let pos = y.iter().filter(|&&v| v == 1).count();
    if y.iter().any(|&v| v > 1) {
        return Err(crate::Error::invalid("labels must be 0 or 1"));
    }
    if pos == 0 || pos == y.len() {
        return Err(crate::Error::invalid("training labels contain a single class"));
    }
    Ok(())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of probabilities against labels.
pub fn log_loss(p: &[f64], y: &[u8]) -> f64 {
    let eps = 1e-15;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / p.len().max(1) as f64
}
