//! Binary classification metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GdgmError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "AUC")]
    pub auc: f64,
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "N_TP")]
    pub n_tp: usize,
    #[serde(rename = "N_FP")]
    pub n_fp: usize,
    #[serde(rename = "N_TN")]
    pub n_tn: usize,
    #[serde(rename = "N_FN")]
    pub n_fn: usize,
    pub threshold: f64,
    /// Names of metrics whose denominator was zero and were reported as 0.
    pub degenerate: Vec<String>,
}

impl MetricsReport {
    pub fn total(&self) -> usize {
        self.n_tp + self.n_fp + self.n_tn + self.n_fn
    }

    /// `key = value` lines using the report's field names.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("AUC", fmt_f(self.auc));
        line("Accuracy", fmt_f(self.accuracy));
        line("F1", fmt_f(self.f1));
        line("Precision", fmt_f(self.precision));
        line("Recall", fmt_f(self.recall));
        line("N_TP", self.n_tp.to_string());
        line("N_FP", self.n_fp.to_string());
        line("N_TN", self.n_tn.to_string());
        line("N_FN", self.n_fn.to_string());
        line("threshold", fmt_f(self.threshold));
        line("degenerate", self.degenerate.join(","));
        s
    }

    /// Inverse of [`MetricsReport::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = MetricsReport {
            auc: 0.0,
            accuracy: 0.0,
            f1: 0.0,
            precision: 0.0,
            recall: 0.0,
            n_tp: 0,
            n_fp: 0,
            n_tn: 0,
            n_fn: 0,
            threshold: 0.0,
            degenerate: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| GdgmError::Parse { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            let f = || v.parse::<f64>().map_err(|e| err(format!("{k}: {e}")));
            let u = || v.parse::<usize>().map_err(|e| err(format!("{k}: {e}")));
            match k {
                "AUC" => r.auc = f()?,
                "Accuracy" => r.accuracy = f()?,
                "F1" => r.f1 = f()?,
                "Precision" => r.precision = f()?,
                "Recall" => r.recall = f()?,
                "N_TP" => r.n_tp = u()?,
                "N_FP" => r.n_fp = u()?,
                "N_TN" => r.n_tn = u()?,
                "N_FN" => r.n_fn = u()?,
                "threshold" => r.threshold = f()?,
                "degenerate" => {
                    r.degenerate = v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect()
                }
                _ => return Err(err(format!("unknown field `{k}`"))),
            }
        }
        Ok(r)
    }
}

fn fmt_f(x: f64) -> String {
    // Shortest round-trip representation.
    format!("{x:?}")
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "AUC={:.4} Acc={:.4} F1={:.4} P={:.4} R={:.4} (TP={} FP={} TN={} FN={})",
            self.auc, self.accuracy, self.f1, self.precision, self.recall, self.n_tp, self.n_fp, self.n_tn, self.n_fn
        )
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&y| y > 1) {
        Some(y) => Err(GdgmError::InvalidArgument(format!("label {y} outside {{0,1}}"))),
        None => Ok(()),
    }
}

/// Rank-statistic AUC with ties counted one half. Returns `None` when
/// either class is absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(GdgmError::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GdgmError::InvalidArgument("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Work in doubled ranks so tie averages stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u128;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum2 += avg2;
            }
        }
        i = j + 1;
    }
    let p = n_pos as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Ok(Some(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64)))
}

pub fn compute_metrics(scores: &[f64], decisions: &[u8], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if decisions.len() != labels.len() {
        return Err(GdgmError::InvalidArgument(format!(
            "{} decisions for {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    check_labels(decisions)?;
    let auc_v = auc(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&d, &y) in decisions.iter().zip(labels) {
        match (d, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: usize, den: usize| {
        if den == 0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let auc = auc_v.unwrap_or(0.0);
    let precision = ratio("Precision", tp, tp + fp);
    let recall = ratio("Recall", tp, tp + fn_);
    let accuracy = ratio("Accuracy", tp + tn, labels.len());
    if auc_v.is_none() {
        degenerate.push("AUC".into());
    }
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate.push("F1".into());
        0.0
    };
    Ok(MetricsReport {
        auc,
        accuracy,
        f1,
        precision,
        recall,
        n_tp: tp,
        n_fp: fp,
        n_tn: tn,
        n_fn: fn_,
        threshold,
        degenerate,
    })
}

/// Strict decision rule: 1 iff `p > z`.
pub fn decide(p: f64, z: f64) -> u8 {
    u8::from(p > z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_auc_example() {
        let a = auc(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0]).unwrap().unwrap();
        assert_eq!(a, 0.75);
    }

    #[test]
    fn all_ties_half() {
        assert_eq!(auc(&[0.5; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), Some(0.5));
    }

    #[test]
    fn perfect_predictions() {
        let m = compute_metrics(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0], &[1, 1, 0, 0], 0.6).unwrap();
        for v in [m.auc, m.accuracy, m.f1, m.precision, m.recall] {
            assert_eq!(v, 1.0);
        }
        assert!(m.degenerate.is_empty());
    }

    #[test]
    fn precision_three_quarters() {
        let m = compute_metrics(&[0.0; 5], &[1, 1, 1, 1, 0], &[1, 1, 1, 0, 0], 0.6).unwrap();
        assert_eq!((m.n_tp, m.n_fp), (3, 1));
        assert_eq!(m.precision, 0.75);
    }

    #[test]
    fn no_positive_predictions_flagged() {
        let m = compute_metrics(&[0.1, 0.2], &[0, 0], &[1, 0], 0.6).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.degenerate.contains(&"Precision".to_string()));
        assert!(m.degenerate.contains(&"F1".to_string()));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(compute_metrics(&[0.1], &[0, 1], &[1, 0], 0.5).is_err());
        assert!(compute_metrics(&[0.1, 0.2], &[0, 1], &[2, 0], 0.5).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = compute_metrics(&[0.7, 0.2, 0.65], &[1, 0, 0], &[1, 0, 1], 0.6).unwrap();
        assert_eq!(MetricsReport::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn decide_strict() {
        assert_eq!(decide(0.61, 0.6), 1);
        assert_eq!(decide(0.6, 0.6), 0);
        assert_eq!(decide(1e-12, 1e-15), 1);
    }
}
