//! Confusion counts, threshold rules, ROC and Youden search.
//!
//! The positive class is *normal* (label 1). Residuals are anomaly scores:
//! a window is predicted normal when its residual is at most τ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1` (normal) iff `a ≤ τ`.
pub fn assess(a: f64, tau: f64) -> u8 {
    u8::from(a <= tau)
}

/// Rank (1-based) of the two-sigma threshold among `n` sorted residuals:
/// `ceil(0.9545 n)`, in integer arithmetic.
pub fn two_sigma_rank(n: usize) -> usize {
    (9545 * n).div_ceil(10000)
}

/// Smallest residual whose empirical coverage reaches 95.45%.
pub fn fit_two_sigma(residuals: &[f64]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Empty("two-sigma fit needs at least one residual"));
    }
    if residuals.iter().any(|a| a.is_nan()) {
        return Err(Error::NonFinite { example: residuals.iter().position(|a| a.is_nan()).unwrap() });
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[two_sigma_rank(sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Counts from predicted and reference labels (1 = normal).
    pub fn from_labels(predicted: &[u8], truth: &[u8]) -> Self {
        let mut c = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fp += 1,
                _ => c.fn_ += 1,
            }
        }
        c
    }

    /// Counts at threshold `tau` for residual scores.
    pub fn at_threshold(scores: &[f64], truth: &[u8], tau: f64) -> Self {
        let pred: Vec<u8> = scores.iter().map(|&a| assess(a, tau)).collect();
        Self::from_labels(&pred, truth)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// ACC, TPR and TNR with TPR = TP/(TP+FP) and TNR = TN/(TN+FN).
/// `None` marks an undefined value (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMetrics {
    pub acc: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

pub fn metrics_predictive(c: &ConfusionCounts) -> PredictiveMetrics {
    PredictiveMetrics {
        acc: ratio(c.tp + c.tn, c.total()),
        tpr: ratio(c.tp, c.tp + c.fp),
        tnr: ratio(c.tn, c.tn + c.fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConventionalMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn metrics_conventional(c: &ConfusionCounts) -> ConventionalMetrics {
    ConventionalMetrics {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau: f64,
    /// 1 − specificity
    pub fpr: f64,
    /// sensitivity
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    /// From τ = −∞ (nothing normal) to the largest residual (everything normal).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn class_sizes(labels: &[u8]) -> (u64, u64) {
    let normal = labels.iter().filter(|&&l| l == 1).count() as u64;
    (normal, labels.len() as u64 - normal)
}

/// Sorted distinct scores with the number of normal and motion windows at each.
fn tally(scores: &[f64], labels: &[u8]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    for i in order {
        let (n, m) = if labels[i] == 1 { (1, 0) } else { (0, 1) };
        match out.last_mut() {
            Some(last) if last.0 == scores[i] => {
                last.1 += n;
                last.2 += m;
            }
            _ => out.push((scores[i], n, m)),
        }
    }
    out
}

fn check_scored(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|a| a.is_nan()) {
        return Err(Error::NonFinite { example: i });
    }
    let (normal, motion) = class_sizes(labels);
    if normal == 0 || motion == 0 {
        return Err(Error::SingleClass("ROC and Youden need normal and motion windows"));
    }
    Ok((normal, motion))
}

/// ROC over every distinct residual and its trapezoidal area, which equals the
/// probability that a motion window scores above a normal one (ties ½).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Roc> {
    let (normal, motion) = check_scored(scores, labels)?;
    let mut points = vec![RocPoint {
        tau: f64::NEG_INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2 = 0u128;
    for (tau, n, m) in tally(scores, labels) {
        // Trapezoid in count units: (fp_new - fp)(tp + tp_new), halved at the end.
        area2 += u128::from(m) * u128::from(2 * tp + n);
        tp += n;
        fp += m;
        points.push(RocPoint {
            tau,
            fpr: fp as f64 / motion as f64,
            tpr: tp as f64 / normal as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * normal as f64 * motion as f64);
    Ok(Roc { points, auc })
}

/// Which TPR/TNR definitions enter `J = TPR + TNR − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JFormula {
    /// Sensitivity and specificity.
    #[default]
    Conventional,
    /// TP/(TP+FP) and TN/(TN+FN).
    Predictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoudenResult {
    pub tau: f64,
    pub j: f64,
}

pub fn youden_j(c: &ConfusionCounts, formula: JFormula) -> Option<f64> {
    match formula {
        JFormula::Conventional => {
            let m = metrics_conventional(c);
            Some(m.sensitivity? + m.specificity? - 1.0)
        }
        JFormula::Predictive => {
            let m = metrics_predictive(c);
            Some(m.tpr? + m.tnr? - 1.0)
        }
    }
}

/// Threshold maximizing Youden's J over the distinct residuals; ties go to the
/// smaller τ. Candidates with an undefined J are skipped.
pub fn youden_max(scores: &[f64], labels: &[u8], formula: JFormula) -> Result<YoudenResult> {
    let (normal, motion) = check_scored(scores, labels)?;
    let mut best: Option<YoudenResult> = None;
    let (mut tp, mut fp) = (0u64, 0u64);
    for (tau, n, m) in tally(scores, labels) {
        tp += n;
        fp += m;
        let c = ConfusionCounts {
            tp,
            fp,
            tn: motion - fp,
            fn_: normal - tp,
        };
        if let Some(j) = youden_j(&c, formula) {
            if best.is_none_or(|b| j > b.j) {
                best = Some(YoudenResult { tau, j });
            }
        }
    }
    best.ok_or(Error::SingleClass("no threshold gives a defined J"))
}
