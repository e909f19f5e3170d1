//! Soft-voting ensemble of the MLP and the two boosted-tree variants.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::gbdt::{gbdt_predict_proba, GbdtModel};
use super::mlp::{mlp_predict_proba, MlpModel};
use super::standardize::StandardizerStats;
use super::{check_width, ProbabilityModel};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const MEMBER_NAMES: [&str; 3] = ["mlp", "gbdt_a", "gbdt_b"];

/// Fitted ensemble. Inputs are raw feature rows in `selected_features`
/// order; standardization happens inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format_version: u32,
    pub selected_features: Vec<String>,
    pub standardizer: StandardizerStats,
    pub mlp: MlpModel,
    pub gbdt_a: GbdtModel,
    pub gbdt_b: GbdtModel,
    pub threshold: f64,
}

impl EnsembleModel {
    /// Per-member probabilities, in [`MEMBER_NAMES`] order.
    pub fn predict_members(&self, x: ArrayView2<'_, f64>) -> Result<[Vec<f64>; 3]> {
        check_width(self.selected_features.len(), &x)?;
        let z = self.standardizer.apply(x)?;
        Ok([
            mlp_predict_proba(&self.mlp, z.view())?,
            gbdt_predict_proba(&self.gbdt_a, z.view())?,
            gbdt_predict_proba(&self.gbdt_b, z.view())?,
        ])
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Vec<u8>)> {
        let members = self.predict_members(x)?;
        soft_vote(&members, self.threshold)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: EnsembleModel = serde_json::from_str(text)?;
        if model.format_version != FORMAT_VERSION {
            return Err(Error::data(format!("unsupported model format version {}", model.format_version)));
        }
        Ok(model)
    }
}

impl ProbabilityModel for EnsembleModel {
    fn n_features(&self) -> usize {
        self.selected_features.len()
    }

    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.predict(x)?.0)
    }
}

/// Mean of member probabilities and the thresholded label (`p >= threshold`).
///
/// Members are summed in sorted order so the result does not depend on
/// member order, and the mean is clamped to the members' range to absorb
/// rounding.
pub fn soft_vote<M: AsRef<[f64]>>(members: &[M], threshold: f64) -> Result<(Vec<f64>, Vec<u8>)> {
    let Some(first) = members.first() else {
        return Err(Error::invalid("soft vote needs at least one member"));
    };
    let n = first.as_ref().len();
    if members.iter().any(|m| m.as_ref().len() != n) {
        return Err(Error::invalid("member prediction lengths differ"));
    }
    let k = members.len() as f64;
    let mut buf = vec![0.0; members.len()];
    let mut p = Vec::with_capacity(n);
    for i in 0..n {
        for (b, m) in buf.iter_mut().zip(members) {
            *b = m.as_ref()[i];
        }
        if buf.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("member probability outside [0, 1] at row {i}")));
        }
        buf.sort_by(f64::total_cmp);
        let (lo, hi) = (buf[0], buf[buf.len() - 1]);
        let v = if lo == hi { lo } else { (buf.iter().sum::<f64>() / k).clamp(lo, hi) };
        p.push(v);
    }
    let yhat = p.iter().map(|&v| u8::from(v >= threshold)).collect();
    Ok((p, yhat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inclusive_threshold() {
        let (p, y) = soft_vote(&[vec![0.2], vec![0.4], vec![0.9]], 0.5).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert_eq!(y, vec![1]);
        let (p, y) = soft_vote(&[vec![0.5], vec![0.5], vec![0.5]], 0.5).unwrap();
        assert_eq!((p[0], y[0]), (0.5, 1));
    }

    #[test]
    fn rejects_bad_members() {
        assert!(soft_vote(&[vec![0.2, 0.1], vec![0.4]], 0.5).is_err());
        assert!(soft_vote(&[vec![1.2]], 0.5).is_err());
        assert!(soft_vote::<Vec<f64>>(&[], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn vote_is_symmetric_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
            let p1 = soft_vote(&[vec![a], vec![b], vec![c]], 0.5).unwrap();
            for perm in [[b, c, a], [c, a, b], [a, c, b], [c, b, a], [b, a, c]] {
                let p2 = soft_vote(&[vec![perm[0]], vec![perm[1]], vec![perm[2]]], 0.5).unwrap();
                prop_assert_eq!(&p1, &p2);
            }
            let lo = a.min(b).min(c);
            let hi = a.max(b).max(c);
            prop_assert!(p1.0[0] >= lo && p1.0[0] <= hi);
            let same = soft_vote(&[vec![a], vec![a], vec![a]], 0.5).unwrap();
            prop_assert_eq!(same.0[0], a);
        }
    }
}
