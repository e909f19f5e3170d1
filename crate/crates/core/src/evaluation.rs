//! Binary classification diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with class 0 (non-crash) first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

fn check_binary(y: &[u8], yhat: &[u8]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::invalid("label and prediction lengths differ"));
    }
    if y.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    if y.iter().chain(yhat).any(|&v| v > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    Ok(())
}

pub fn confusion_matrix(y: &[u8], yhat: &[u8]) -> Result<Confusion> {
    check_binary(y, yhat)?;
    let mut c = Confusion { tn: 0, fp: 0, fn_: 0, tp: 0 };
    for (&t, &p) in y.iter().zip(yhat) {
        match (t, p) {
            (0, 0) => c.tn += 1,
            (0, _) => c.fp += 1,
            (_, 0) => c.fn_ += 1,
            _ => c.tp += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Index 0 is the non-crash class, index 1 the crash class.
    pub classes: [ClassMetrics; 2],
    pub accuracy: f64,
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
    pub confusion: Confusion,
    /// Set when some rate had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64, flag: &mut bool) -> f64 {
    if p + r == 0.0 {
        *flag = true;
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl ClassificationReport {
    pub fn from_confusion(c: Confusion) -> Result<Self> {
        let n = c.total();
        let (neg, pos) = (c.tn + c.fp, c.fn_ + c.tp);
        if neg == 0 || pos == 0 {
            return Err(Error::invalid("classification report needs both classes in y"));
        }
        let mut flag = false;
        let p0 = ratio(c.tn, c.tn + c.fn_, &mut flag);
        let r0 = ratio(c.tn, neg, &mut flag);
        let p1 = ratio(c.tp, c.tp + c.fp, &mut flag);
        let r1 = ratio(c.tp, pos, &mut flag);
        let classes = [
            ClassMetrics { precision: p0, recall: r0, f1: f1(p0, r0, &mut flag), support: neg },
            ClassMetrics { precision: p1, recall: r1, f1: f1(p1, r1, &mut flag), support: pos },
        ];
        let avg = |w0: f64, w1: f64| ClassMetrics {
            precision: w0 * classes[0].precision + w1 * classes[1].precision,
            recall: w0 * classes[0].recall + w1 * classes[1].recall,
            f1: w0 * classes[0].f1 + w1 * classes[1].f1,
            support: n,
        };
        Ok(ClassificationReport {
            classes,
            accuracy: (c.tn + c.tp) as f64 / n as f64,
            macro_avg: avg(0.5, 0.5),
            weighted_avg: avg(neg as f64 / n as f64, pos as f64 / n as f64),
            confusion: c,
            zero_division: flag,
        })
    }

    /// Plain-text table: one row per class, then accuracy, macro and
    /// weighted averages.
    pub fn to_text_table(&self) -> String {
        let mut out = format!("{:<14}{:>10}{:>10}{:>10}{:>10}\n", "", "precision", "recall", "f1-score", "support");
        for (label, m) in [("0", &self.classes[0]), ("1", &self.classes[1])] {
            out.push_str(&format!(
                "{label:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!(
            "{:<14}{:>10}{:>10}{:>10.4}{:>10}\n",
            "accuracy",
            "",
            "",
            self.accuracy,
            self.confusion.total()
        ));
        for (label, m) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            out.push_str(&format!(
                "{label:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out
    }
}

pub fn classification_report(y: &[u8], yhat: &[u8]) -> Result<ClassificationReport> {
    ClassificationReport::from_confusion(confusion_matrix(y, yhat)?)
}

/// Mann-Whitney ROC-AUC with ties counted as one half.
pub fn roc_auc(scores: &[f64], y: &[u8]) -> Result<f64> {
    if scores.len() != y.len() {
        return Err(Error::invalid("score and label lengths differ"));
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("ROC-AUC needs both classes"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks (1-based) of the positives, times two to stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| y[k] == 1).count() as u128;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}
