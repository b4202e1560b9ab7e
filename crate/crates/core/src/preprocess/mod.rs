//! Turns traces into model-ready sequences.
//!
//! Two sequence kinds feed the same network: raw CVS samples (point mode,
//! dimension 1) and heartbeat cycles resampled onto a fixed grid (cycle mode).
//! Each window pairs an input sequence with its order-reversed copy (the
//! reconstruction target) and the sequence that immediately follows it (the
//! prediction target).

mod rpeak;
mod window_set;

pub use rpeak::{detect_r_peaks, detect_r_peaks_with, energy_envelope, match_peaks, RPeakParams};
pub use window_set::{Sequences, WindowRef, WindowSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalTrace;

/// Points per embedded cycle.
pub const CYCLE_DIM: usize = 150;

/// Cycle boundaries at R peaks; cycle `T` spans `[boundaries[T], boundaries[T+1])`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleIndex {
    pub boundaries: Vec<usize>,
    pub labels: Option<Vec<u8>>,
}

impl CycleIndex {
    pub fn len(&self) -> usize {
        self.boundaries.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self, cycle: usize) -> std::ops::Range<usize> {
        self.boundaries[cycle]..self.boundaries[cycle + 1]
    }

    /// Cycle containing sample `k`, if any.
    pub fn cycle_of(&self, k: usize) -> Option<usize> {
        if self.is_empty() || k < self.boundaries[0] || k >= *self.boundaries.last().unwrap() {
            return None;
        }
        Some(self.boundaries.partition_point(|&b| b <= k) - 1)
    }
}

/// Splits a trace at `peaks`. A cycle is labeled 0 if any of its samples is.
pub fn segment_cycles(trace: &SignalTrace, peaks: &[usize]) -> Result<CycleIndex> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientBeats { found: peaks.len() });
    }
    if peaks.windows(2).any(|w| w[0] >= w[1]) || *peaks.last().unwrap() > trace.len() {
        return Err(Error::InvalidTrace(
            "peaks must be strictly increasing and inside the trace".into(),
        ));
    }
    let labels = trace.labels.as_ref().map(|labels| {
        peaks
            .windows(2)
            .map(|w| u8::from(labels[w[0]..w[1]].iter().all(|&l| l == 1)))
            .collect()
    });
    Ok(CycleIndex {
        boundaries: peaks.to_vec(),
        labels,
    })
}

/// Linear interpolation of `samples` onto `dim` equispaced nodes spanning the
/// first and last sample. Both endpoints are reproduced exactly.
pub fn embed_cycle(samples: &[f64], dim: usize) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidTrace(format!("cycle of length {n} cannot be embedded")));
    }
    if dim < 2 {
        return Err(Error::Config(format!("embedding dimension {dim} is below 2")));
    }
    let last = n - 1;
    Ok((0..dim)
        .map(|j| {
            let pos = (j * last) as f64 / (dim - 1) as f64;
            let i0 = pos.floor() as usize;
            if i0 >= last {
                return samples[last];
            }
            let frac = pos - i0 as f64;
            if frac == 0.0 {
                samples[i0]
            } else {
                samples[i0] + frac * (samples[i0 + 1] - samples[i0])
            }
        })
        .collect())
}

/// Every cycle of a trace embedded at a fixed dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedCycles {
    pub trace_id: String,
    pub dim: usize,
    pub data: Vec<f64>,
    pub index: CycleIndex,
}

impl EmbeddedCycles {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn cycle(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn embed_cycles(trace: &SignalTrace, index: CycleIndex, dim: usize) -> Result<EmbeddedCycles> {
    let mut data = Vec::with_capacity(index.len() * dim);
    for t in 0..index.len() {
        data.extend(embed_cycle(&trace.cvs[index.span(t)], dim)?);
    }
    Ok(EmbeddedCycles {
        trace_id: trace.trace_id.clone(),
        dim,
        data,
        index,
    })
}

/// Detects R peaks on the trace's ECG, segments and embeds every cycle.
pub fn cycles_from_trace(trace: &SignalTrace, dim: usize, params: &RPeakParams) -> Result<EmbeddedCycles> {
    let peaks = detect_r_peaks_with(&trace.ecg, trace.fs, params)?;
    embed_cycles(trace, segment_cycles(trace, &peaks)?, dim)
}

/// Reverses the order of the elements of `seq`.
pub fn reverse<T: Clone>(seq: &[T]) -> Vec<T> {
    seq.iter().rev().cloned().collect()
}

/// Reverses the order of `dim`-sized vectors in a flattened sequence,
/// leaving each vector's contents untouched.
pub fn reverse_steps(seq: &[f64], dim: usize) -> Vec<f64> {
    seq.chunks_exact(dim).rev().flatten().copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointWindow {
    pub input: Vec<f64>,
    pub target_recon: Vec<f64>,
    pub target_pred: Vec<f64>,
    pub anchor_index: usize,
    pub anchor_label: Option<u8>,
}

/// Number of windows of `r + p` steps at `stride` over `len` steps.
pub fn window_count(len: usize, r: usize, p: usize, stride: usize) -> usize {
    if r == 0 || stride == 0 || len < r + p {
        0
    } else {
        (len - r - p) / stride + 1
    }
}

pub fn make_point_windows(trace: &SignalTrace, r: usize, p: usize, stride: usize) -> Vec<PointWindow> {
    let n = window_count(trace.len(), r, p, stride);
    (0..n)
        .map(|w| {
            let s = w * stride;
            let input = trace.cvs[s..s + r].to_vec();
            PointWindow {
                target_recon: reverse(&input),
                target_pred: trace.cvs[s + r..s + r + p].to_vec(),
                input,
                anchor_index: s + r - 1,
                anchor_label: trace.labels.as_ref().map(|l| l[s + r - 1]),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleWindow {
    /// `R` embedded cycles, row-major.
    pub input: Vec<f64>,
    pub target_recon: Vec<f64>,
    pub target_pred: Vec<f64>,
    pub anchor_cycle: usize,
    pub anchor_label: Option<u8>,
}

pub fn make_cycle_windows(cycles: &EmbeddedCycles, r: usize, p: usize, stride: usize) -> Vec<CycleWindow> {
    let dim = cycles.dim;
    let n = window_count(cycles.len(), r, p, stride);
    (0..n)
        .map(|w| {
            let s = w * stride;
            let input = cycles.data[s * dim..(s + r) * dim].to_vec();
            CycleWindow {
                target_recon: reverse_steps(&input, dim),
                target_pred: cycles.data[(s + r) * dim..(s + r + p) * dim].to_vec(),
                input,
                anchor_cycle: s + r - 1,
                anchor_label: cycles.index.labels.as_ref().map(|l| l[s + r - 1]),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(n: usize, labels: Option<Vec<u8>>) -> SignalTrace {
        let cvs: Vec<f64> = (0..n).map(|k| k as f64).collect();
        SignalTrace::new("t", 100.0, 0.0, cvs, vec![0.0; n], labels).unwrap()
    }

    #[test]
    fn segments_and_labels_cycles() {
        let mut labels = vec![1u8; 400];
        let peaks = [100, 200, 300];
        let c = segment_cycles(&trace(400, Some(labels.clone())), &peaks).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!((c.span(0), c.span(1)), (100..200, 200..300));
        assert_eq!(c.labels, Some(vec![1, 1]));
        labels[150] = 0;
        let c = segment_cycles(&trace(400, Some(labels)), &peaks).unwrap();
        assert_eq!(c.labels, Some(vec![0, 1]));
        assert_eq!(c.cycle_of(99), None);
        assert_eq!(c.cycle_of(100), Some(0));
        assert_eq!(c.cycle_of(299), Some(1));
        assert_eq!(c.cycle_of(300), None);
    }

    #[test]
    fn embedding_examples() {
        let e = embed_cycle(&[0.0, 3.0], 150).unwrap();
        assert_eq!((e[0], e[149]), (0.0, 3.0));
        assert!(e[74] < 1.5 && e[75] > 1.5);
        let same: Vec<f64> = (0..150).map(|k| (k as f64 * 0.37).sin()).collect();
        assert_eq!(embed_cycle(&same, 150).unwrap(), same);
        assert_eq!(embed_cycle(&[0.0, 1.0, 2.0], 5).unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(embed_cycle(&[1.0], 150).is_err());
    }

    #[test]
    fn reversal() {
        assert_eq!(reverse(&[1, 2, 3]), vec![3, 2, 1]);
        assert_eq!(reverse::<i32>(&[]), Vec::<i32>::new());
        assert_eq!(reverse_steps(&[1.0, 2.0, 3.0, 4.0], 2), vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn point_window_counts() {
        let t = trace(10, None);
        assert_eq!(make_point_windows(&t, 4, 2, 1).len(), 5);
        assert_eq!(make_point_windows(&t, 4, 0, 1).len(), 7);
        let w = &make_point_windows(&t, 4, 2, 1)[0];
        assert_eq!(w.input, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(w.target_recon, vec![3.0, 2.0, 1.0, 0.0]);
        assert_eq!(w.target_pred, vec![4.0, 5.0]);
        assert_eq!(w.anchor_index, 3);
        assert!(make_point_windows(&t, 8, 3, 1).is_empty());
        assert_eq!(make_point_windows(&t, 4, 2, 3).len(), 2);
    }

    #[test]
    fn cycle_windows() {
        let t = trace(60, Some(vec![1; 60]));
        let mut idx = segment_cycles(&t, &[0, 10, 20, 30, 40, 50]).unwrap();
        idx.labels = Some(vec![1, 1, 0, 1, 1]);
        let cycles = embed_cycles(&t, idx, 4).unwrap();
        let w = make_cycle_windows(&cycles, 2, 2, 1);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].anchor_cycle, 1);
        assert_eq!(w[1].anchor_label, Some(0));
        assert_eq!(&w[0].target_recon[..4], cycles.cycle(1));
        assert_eq!(&w[0].target_pred[..4], cycles.cycle(2));
        let single = make_cycle_windows(&cycles, 1, 0, 1);
        assert_eq!(single.len(), 5);
        for (k, w) in single.iter().enumerate() {
            assert_eq!(w.anchor_label, cycles.index.labels.as_ref().map(|l| l[k]));
        }
    }
}
