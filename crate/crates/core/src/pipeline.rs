//! End-to-end paths: corpus on disk → windows → checkpoint → per-trace tracks
//! and evaluation reports.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::{
    assess, fit_two_sigma, metrics_conventional, metrics_predictive, residual, roc_auc, youden_max, ConfusionCounts,
    ConventionalMetrics, JFormula, PredictiveMetrics, Roc, YoudenResult,
};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig};
use crate::preprocess::{cycles_from_trace, CycleIndex, RPeakParams, Sequences, WindowSet};
use crate::signal::{apply_norm, fit_norm, load_trace, save_trace, write_atomic, NormStats, SignalTrace};
use crate::train::{train_with, Checkpoint, TrainConfig};

/// Every `*.csv` trace in `dir`, ordered by file name.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<SignalTrace>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(load_trace).collect()
}

/// Writes each trace to `dir/<trace_id>.csv`.
pub fn save_corpus(traces: &[SignalTrace], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for t in traces {
        save_trace(t, dir.join(format!("{}.csv", t.trace_id)))?;
    }
    Ok(())
}

/// Normalized model input for one trace: samples, or embedded cycles with
/// their sample boundaries.
pub fn sequences_for(
    trace: &SignalTrace,
    model: &ModelConfig,
    norm: &NormStats,
) -> Result<(Sequences, Option<CycleIndex>)> {
    let normalized = apply_norm(trace, norm);
    match model.mode {
        Mode::Point => Ok((Sequences::from_trace(&normalized), None)),
        Mode::Cycle => {
            let cycles = cycles_from_trace(&normalized, model.data_dim, &RPeakParams::default())?;
            Ok((Sequences::from_cycles(&cycles), Some(cycles.index)))
        }
    }
}

/// Training windows over `traces` at `stride`.
pub fn prepare_windows(
    traces: &[SignalTrace],
    model: &ModelConfig,
    norm: &NormStats,
    stride: usize,
) -> Result<WindowSet> {
    let sources = traces
        .par_iter()
        .map(|t| sequences_for(t, model, norm).map(|s| s.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowSet::new(sources, model.r, model.p, stride))
}

/// Fits normalization on `traces`, builds windows and trains.
pub fn train_corpus(
    traces: &[SignalTrace],
    config: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<Checkpoint> {
    let norm = fit_norm(traces)?;
    let windows = prepare_windows(traces, &config.model, &norm, config.stride)?;
    train_with(&windows, norm, config, on_epoch)
}

/// Residuals of every anchor of one trace; thresholding is cheap afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceScores {
    pub trace_id: String,
    pub mode: Mode,
    pub n_samples: usize,
    /// Step index (sample or cycle) of each assessed window's last input step.
    pub anchors: Vec<usize>,
    pub residuals: Vec<f64>,
    pub anchor_labels: Option<Vec<u8>>,
    /// Cycle boundaries in samples (cycle mode only).
    pub cycles: Option<CycleIndex>,
    /// Set when the trace is too short to hold a single window.
    pub warning: Option<String>,
}

/// Scores windows ending at every `stride`-th step.
pub fn score_trace(ckpt: &Checkpoint, trace: &SignalTrace, stride: usize) -> Result<TraceScores> {
    let model = &ckpt.params.config;
    let empty = |warning: String, cycles| TraceScores {
        trace_id: trace.trace_id.clone(),
        mode: model.mode,
        n_samples: trace.len(),
        anchors: Vec::new(),
        residuals: Vec::new(),
        anchor_labels: trace.labels.as_ref().map(|_| Vec::new()),
        cycles,
        warning: Some(warning),
    };
    let (seq, cycles) = match sequences_for(trace, model, &ckpt.norm) {
        Ok(v) => v,
        Err(Error::InsufficientBeats { found }) => {
            return Ok(empty(format!("only {found} R peaks; no cycle window fits"), None))
        }
        Err(e) => return Err(e),
    };
    let windows = WindowSet::new(vec![seq], model.r, 0, stride.max(1));
    if windows.is_empty() {
        let steps = windows.sources[0].steps();
        return Ok(empty(format!("{steps} steps is shorter than one window of {}", model.r), cycles));
    }
    let norm = ckpt.train.norm;
    let residuals = windows
        .windows
        .par_iter()
        .map(|&w| residual(&ckpt.params, windows.input(w), norm))
        .collect::<Result<Vec<_>>>()?;
    let anchors = windows.windows.iter().map(|&w| windows.anchor(w)).collect();
    let anchor_labels = windows.sources[0]
        .labels
        .as_ref()
        .map(|_| windows.windows.iter().map(|&w| windows.anchor_label(w).unwrap()).collect());
    Ok(TraceScores {
        trace_id: trace.trace_id.clone(),
        mode: model.mode,
        n_samples: trace.len(),
        anchors,
        residuals,
        anchor_labels,
        cycles,
        warning: None,
    })
}

impl TraceScores {
    pub fn predictions(&self, tau: f64) -> Vec<u8> {
        self.residuals.iter().map(|&a| assess(a, tau)).collect()
    }

    /// Per-step track: each step takes the decision of the latest anchor at or
    /// before it (steps before the first anchor are unassessed, `None`).
    pub fn step_track(&self, tau: f64, n_steps: usize) -> Vec<Option<u8>> {
        let mut track = vec![None; n_steps];
        let preds = self.predictions(tau);
        for (i, (&a, &p)) in self.anchors.iter().zip(&preds).enumerate() {
            let end = self.anchors.get(i + 1).copied().unwrap_or(n_steps).min(n_steps);
            for v in &mut track[a.min(n_steps)..end] {
                *v = Some(p);
            }
        }
        track
    }

    /// Per-sample track aligned with the trace.
    pub fn sample_track(&self, tau: f64) -> Vec<Option<u8>> {
        match &self.cycles {
            None => self.step_track(tau, self.n_samples),
            Some(index) => {
                let per_cycle = self.step_track(tau, index.len());
                let mut track = vec![None; self.n_samples];
                for (c, p) in per_cycle.iter().enumerate() {
                    for v in &mut track[index.span(c)] {
                        *v = *p;
                    }
                }
                track
            }
        }
    }

    /// Per-cycle track (cycle mode only).
    pub fn cycle_track(&self, tau: f64) -> Option<Vec<Option<u8>>> {
        self.cycles.as_ref().map(|index| self.step_track(tau, index.len()))
    }
}

/// Thresholded assessment of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAssessment {
    pub scores: TraceScores,
    pub tau: f64,
    pub predictions: Vec<u8>,
    pub sample_track: Vec<Option<u8>>,
    pub cycle_track: Option<Vec<Option<u8>>>,
}

pub fn assess_trace(ckpt: &Checkpoint, trace: &SignalTrace, tau: f64, stride: usize) -> Result<TraceAssessment> {
    let scores = score_trace(ckpt, trace, stride)?;
    Ok(TraceAssessment {
        predictions: scores.predictions(tau),
        sample_track: scores.sample_track(tau),
        cycle_track: scores.cycle_track(tau),
        tau,
        scores,
    })
}

/// CSV of a sample track: `t,cvs,prediction` with an empty field for
/// unassessed samples.
pub fn track_csv(trace: &SignalTrace, track: &[Option<u8>]) -> String {
    let mut out = String::from("t,cvs,prediction\n");
    for (k, p) in track.iter().enumerate() {
        let p = p.map_or(String::new(), |p| p.to_string());
        out.push_str(&format!("{},{},{}\n", trace.time(k), trace.cvs[k], p));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffRule {
    TwoSigma,
    YoudenMax,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: Mode,
    pub n_traces: usize,
    pub n_windows: usize,
    pub n_normal: usize,
    pub n_motion: usize,
    pub rule: CutoffRule,
    pub tau: f64,
    pub counts: ConfusionCounts,
    /// TPR = TP/(TP+FP), TNR = TN/(TN+FN).
    pub predictive_metrics: PredictiveMetrics,
    pub conventional: ConventionalMetrics,
    pub auc: Option<f64>,
    pub two_sigma_tau: Option<f64>,
    pub youden: Option<YoudenResult>,
    pub youden_predictive: Option<YoudenResult>,
}

/// Pooled residuals and anchor labels over labeled traces.
pub fn pooled_scores(scores: &[TraceScores]) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut a = Vec::new();
    let mut y = Vec::new();
    for s in scores {
        let labels = s
            .anchor_labels
            .as_ref()
            .ok_or_else(|| Error::InvalidTrace(format!("trace {} has no labels", s.trace_id)))?;
        a.extend_from_slice(&s.residuals);
        y.extend_from_slice(labels);
    }
    Ok((a, y))
}

/// Metrics of `scores` at the cut-off chosen by `rule` (`manual_tau` for
/// [`CutoffRule::Manual`]).
pub fn evaluate_scores(
    ckpt: &Checkpoint,
    scores: &[TraceScores],
    rule: CutoffRule,
    manual_tau: Option<f64>,
) -> Result<(EvaluationReport, Option<Roc>)> {
    let (a, y) = pooled_scores(scores)?;
    if a.is_empty() {
        return Err(Error::Empty("no assessable windows"));
    }
    let two_sigma_tau = match (ckpt.tau, ckpt.train_residuals.is_empty()) {
        (Some(t), _) => Some(t),
        (None, false) => Some(fit_two_sigma(&ckpt.train_residuals)?),
        (None, true) => None,
    };
    let both = y.contains(&0) && y.contains(&1);
    let roc = both.then(|| roc_auc(&a, &y)).transpose()?;
    let youden = both.then(|| youden_max(&a, &y, JFormula::Conventional)).transpose()?;
    let youden_predictive = if both { youden_max(&a, &y, JFormula::Predictive).ok() } else { None };
    let tau = match rule {
        CutoffRule::TwoSigma => two_sigma_tau.ok_or(Error::Config("checkpoint has no two-sigma cut-off".into()))?,
        CutoffRule::YoudenMax => {
            youden.ok_or(Error::SingleClass("Youden cut-off needs normal and motion windows"))?.tau
        }
        CutoffRule::Manual => manual_tau.ok_or(Error::Config("manual rule needs a tau".into()))?,
    };
    let counts = ConfusionCounts::at_threshold(&a, &y, tau);
    let n_normal = y.iter().filter(|&&l| l == 1).count();
    let report = EvaluationReport {
        mode: ckpt.params.config.mode,
        n_traces: scores.len(),
        n_windows: a.len(),
        n_normal,
        n_motion: a.len() - n_normal,
        rule,
        tau,
        counts,
        predictive_metrics: metrics_predictive(&counts),
        conventional: metrics_conventional(&counts),
        auc: roc.as_ref().map(|r| r.auc),
        two_sigma_tau,
        youden,
        youden_predictive: youden_predictive,
    };
    Ok((report, roc))
}

pub fn evaluate(
    ckpt: &Checkpoint,
    traces: &[SignalTrace],
    stride: usize,
    rule: CutoffRule,
    manual_tau: Option<f64>,
) -> Result<(EvaluationReport, Option<Roc>)> {
    let scores = traces
        .iter()
        .map(|t| score_trace(ckpt, t, stride))
        .collect::<Result<Vec<_>>>()?;
    evaluate_scores(ckpt, &scores, rule, manual_tau)
}

pub fn roc_csv(roc: &Roc) -> String {
    let mut out = String::from("tau,fpr,tpr\n");
    for p in &roc.points {
        out.push_str(&format!("{},{},{}\n", p.tau, p.fpr, p.tpr));
    }
    out
}

/// Anchors with `|a - τ| / τ` below this are listed for review on export.
pub const REVIEW_MARGIN: f64 = 0.1;
pub const REVIEW_FILE: &str = "review.json";

/// An anchor whose residual lies close to the cut-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewAnchor {
    pub trace_id: String,
    /// Step index (sample or cycle) of the anchor.
    pub anchor: usize,
    pub residual: f64,
    pub margin: f64,
}

pub fn review_anchors(scores: &TraceScores, tau: f64) -> Vec<ReviewAnchor> {
    scores
        .anchors
        .iter()
        .zip(&scores.residuals)
        .filter_map(|(&anchor, &a)| {
            let margin = (a - tau).abs() / tau;
            (margin < REVIEW_MARGIN).then(|| ReviewAnchor {
                trace_id: scores.trace_id.clone(),
                anchor,
                residual: a,
                margin,
            })
        })
        .collect()
}

/// `trace` relabeled with the machine decisions at `tau`; unassessed samples
/// are labeled normal.
pub fn pseudolabel(trace: &SignalTrace, scores: &TraceScores, tau: f64) -> SignalTrace {
    SignalTrace {
        labels: Some(scores.sample_track(tau).iter().map(|p| p.unwrap_or(1)).collect()),
        ..trace.clone()
    }
}

fn tau_text<S: serde::Serializer>(tau: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if tau.is_finite() {
        s.serialize_f64(*tau)
    } else {
        s.serialize_str("inf")
    }
}

/// Contents of the review sidecar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudolabelExport {
    #[serde(serialize_with = "tau_text")]
    pub tau: f64,
    pub margin: f64,
    pub files: Vec<String>,
    pub anchors: Vec<ReviewAnchor>,
}

/// Writes `dir/<trace_id>.csv` for each pair plus the review sidecar.
pub fn export_pseudolabels(
    items: &[(&SignalTrace, &TraceScores)],
    tau: f64,
    dir: impl AsRef<Path>,
) -> Result<PseudolabelExport> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut anchors = Vec::new();
    for (trace, scores) in items {
        let name = format!("{}.csv", trace.trace_id);
        save_trace(&pseudolabel(trace, scores, tau), dir.join(&name))?;
        files.push(name);
        anchors.extend(review_anchors(scores, tau));
    }
    let export = PseudolabelExport {
        tau,
        margin: REVIEW_MARGIN,
        files,
        anchors,
    };
    write_atomic(&dir.join(REVIEW_FILE), &serde_json::to_vec_pretty(&export)?)?;
    Ok(export)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(anchors: Vec<usize>, residuals: Vec<f64>, n: usize, cycles: Option<CycleIndex>) -> TraceScores {
        TraceScores {
            trace_id: "x".into(),
            mode: if cycles.is_some() { Mode::Cycle } else { Mode::Point },
            n_samples: n,
            anchors,
            residuals,
            anchor_labels: None,
            cycles,
            warning: None,
        }
    }

    #[test]
    fn point_track_marks_leading_samples_unassessed() {
        let s = scores(vec![2, 3, 4], vec![0.1, 0.9, 0.2], 5, None);
        assert_eq!(s.sample_track(0.5), vec![None, None, Some(1), Some(0), Some(1)]);
        assert_eq!(s.sample_track(f64::INFINITY), vec![None, None, Some(1), Some(1), Some(1)]);
        assert_eq!(s.sample_track(-1.0), vec![None, None, Some(0), Some(0), Some(0)]);
        let strided = scores(vec![1, 3], vec![0.1, 0.9], 5, None);
        assert_eq!(strided.sample_track(0.5), vec![None, Some(1), Some(1), Some(0), Some(0)]);
    }

    #[test]
    fn cycle_track_spans_samples() {
        let index = CycleIndex {
            boundaries: vec![1, 3, 6, 8],
            labels: None,
        };
        let s = scores(vec![1, 2], vec![2.0, 0.0], 9, Some(index));
        assert_eq!(s.cycle_track(1.0).unwrap(), vec![None, Some(0), Some(1)]);
        assert_eq!(
            s.sample_track(1.0),
            vec![None, None, None, Some(0), Some(0), Some(0), Some(1), Some(1), None]
        );
    }

    #[test]
    fn review_margin_and_unassessed_labels() {
        let s = scores(vec![1, 2, 3], vec![0.95, 1.5, 1.09], 4, None);
        let picked: Vec<usize> = review_anchors(&s, 1.0).iter().map(|r| r.anchor).collect();
        assert_eq!(picked, vec![1, 3]);
        assert!(review_anchors(&s, f64::INFINITY).is_empty());
        let trace = SignalTrace::new("x", 10.0, 0.0, vec![0.0; 4], vec![0.0; 4], None).unwrap();
        assert_eq!(pseudolabel(&trace, &s, 1.0).labels.unwrap(), vec![1, 1, 0, 0]);
    }
}
