//! Independent reference implementations used by the integration and
//! acceptance tests. None of them call into the crate's numeric kernels.

#![allow(dead_code)]

use cvsqa_core::model::LstmVariant;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM step written out element by element.
///
/// `w` is `4h × n` (rows F, I, O, C), `u` is `3h × h` (cell-gated) or
/// `4h × h` (standard), `b` is `4h`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_cell(
    variant: LstmVariant,
    w: &[f64],
    u: &[f64],
    b: &[f64],
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let h = h_prev.len();
    let n = x.len();
    let pre = |gate: usize, k: usize| -> f64 {
        let row = gate * h + k;
        let mut s = b[row];
        for j in 0..n {
            s += w[row * n + j] * x[j];
        }
        let rec = match variant {
            LstmVariant::CellGated if gate < 3 => Some(c_prev),
            LstmVariant::CellGated => None,
            LstmVariant::Standard => Some(h_prev),
        };
        if let Some(r) = rec {
            for j in 0..h {
                s += u[row * h + j] * r[j];
            }
        }
        s
    };
    let mut c = vec![0.0; h];
    let mut hn = vec![0.0; h];
    for k in 0..h {
        let f = sig(pre(0, k));
        let i = sig(pre(1, k));
        let o = sig(pre(2, k));
        let g = pre(3, k).tanh();
        c[k] = f * c_prev[k] + i * g;
        hn[k] = o * c[k].tanh();
    }
    (c, hn)
}

/// Smallest observed value whose coverage reaches 0.9545, by scanning every
/// candidate.
pub fn brute_two_sigma(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mut best = f64::INFINITY;
    for &v in values {
        let covered = values.iter().filter(|&&a| a <= v).count() as f64;
        if covered / n >= 0.9545 && v < best {
            best = v;
        }
    }
    best
}

/// P(motion score > normal score) + ½ P(tie), over all pairs.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &a) in scores.iter().enumerate() {
        if labels[i] != 0 {
            continue;
        }
        for (j, &b) in scores.iter().enumerate() {
            if labels[j] != 1 {
                continue;
            }
            pairs += 1.0;
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// (tp, tn, fp, fn) with normal (1) as positive and `a ≤ τ` predicted normal.
pub fn brute_counts(scores: &[f64], labels: &[u8], tau: f64) -> (u64, u64, u64, u64) {
    let (mut tp, mut tn, mut fp, mut fneg) = (0, 0, 0, 0);
    for (&a, &y) in scores.iter().zip(labels) {
        let pred = a <= tau;
        match (pred, y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
        }
    }
    (tp, tn, fp, fneg)
}

/// Exhaustive Youden search over observed scores with conventional
/// sensitivity/specificity; ties resolved toward the smaller threshold.
pub fn brute_youden(scores: &[f64], labels: &[u8]) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for &tau in scores {
        let (tp, tn, fp, fneg) = brute_counts(scores, labels, tau);
        let j = tp as f64 / (tp + fneg) as f64 + tn as f64 / (tn + fp) as f64 - 1.0;
        if j > best.1 || (j == best.1 && tau < best.0) {
            best = (tau, j);
        }
    }
    best
}

/// Scalar AdamW trajectory with decoupled decay.
pub fn adamw_trajectory(theta0: f64, grads: &[f64], lr: f64, wd: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut theta = theta0;
    let mut m = 0.0;
    let mut v = 0.0;
    let mut out = Vec::new();
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        theta = theta - lr * wd * theta - lr * mh / (vh.sqrt() + eps);
        out.push(theta);
    }
    out
}
