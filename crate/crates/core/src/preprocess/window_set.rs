use serde::{Deserialize, Serialize};

use super::{window_count, EmbeddedCycles};
use crate::signal::SignalTrace;

/// One flattened sequence of `dim`-sized steps: CVS samples (dim 1) or
/// embedded cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequences {
    pub id: String,
    pub dim: usize,
    pub data: Vec<f64>,
    /// One label per step.
    pub labels: Option<Vec<u8>>,
}

impl Sequences {
    pub fn from_trace(trace: &SignalTrace) -> Self {
        Self {
            id: trace.trace_id.clone(),
            dim: 1,
            data: trace.cvs.clone(),
            labels: trace.labels.clone(),
        }
    }

    pub fn from_cycles(cycles: &EmbeddedCycles) -> Self {
        Self {
            id: cycles.trace_id.clone(),
            dim: cycles.dim,
            data: cycles.data.clone(),
            labels: cycles.index.labels.clone(),
        }
    }

    pub fn steps(&self) -> usize {
        self.data.len() / self.dim
    }
}

/// Window position: source index and first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub source: usize,
    pub start: usize,
}

/// Windows over a set of sequences, stored as offsets rather than copies.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub dim: usize,
    pub r: usize,
    pub p: usize,
    pub sources: Vec<Sequences>,
    pub windows: Vec<WindowRef>,
}

impl WindowSet {
    /// All windows of `r` input and `p` future steps at `stride`, source by source.
    ///
    /// # Panics
    /// If the sources do not share one step dimension.
    pub fn new(sources: Vec<Sequences>, r: usize, p: usize, stride: usize) -> Self {
        let dim = sources.first().map_or(1, |s| s.dim);
        assert!(sources.iter().all(|s| s.dim == dim), "mixed step dimensions");
        let windows = sources
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                (0..window_count(s.steps(), r, p, stride)).map(move |w| WindowRef {
                    source: i,
                    start: w * stride,
                })
            })
            .collect();
        Self {
            dim,
            r,
            p,
            sources,
            windows,
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn input(&self, w: WindowRef) -> &[f64] {
        let d = self.dim;
        &self.sources[w.source].data[w.start * d..(w.start + self.r) * d]
    }

    pub fn future(&self, w: WindowRef) -> &[f64] {
        let d = self.dim;
        let from = w.start + self.r;
        &self.sources[w.source].data[from * d..(from + self.p) * d]
    }

    /// Step index (sample or cycle) of the last input step.
    pub fn anchor(&self, w: WindowRef) -> usize {
        w.start + self.r - 1
    }

    pub fn anchor_label(&self, w: WindowRef) -> Option<u8> {
        self.sources[w.source].labels.as_ref().map(|l| l[self.anchor(w)])
    }

    pub fn input_has_motion(&self, w: WindowRef) -> bool {
        self.sources[w.source]
            .labels
            .as_ref()
            .is_some_and(|l| l[w.start..w.start + self.r].contains(&0))
    }

    /// Drops windows whose input contains any motion-labeled step.
    pub fn retain_positive(&mut self) {
        let keep: Vec<bool> = self.windows.iter().map(|&w| !self.input_has_motion(w)).collect();
        let mut it = keep.into_iter();
        self.windows.retain(|_| it.next().unwrap());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_match_owned_windows() {
        let cvs: Vec<f64> = (0..12).map(f64::from).collect();
        let mut labels = vec![1u8; 12];
        labels[5] = 0;
        let trace = SignalTrace::new("a", 100.0, 0.0, cvs, vec![0.0; 12], Some(labels)).unwrap();
        let owned = super::super::make_point_windows(&trace, 4, 2, 2);
        let mut set = WindowSet::new(vec![Sequences::from_trace(&trace)], 4, 2, 2);
        assert_eq!(set.len(), owned.len());
        for (w, o) in set.windows.iter().zip(&owned) {
            assert_eq!(set.input(*w), &o.input[..]);
            assert_eq!(set.future(*w), &o.target_pred[..]);
            assert_eq!(set.anchor(*w), o.anchor_index);
            assert_eq!(set.anchor_label(*w), o.anchor_label);
        }
        set.retain_positive();
        assert!(set.windows.iter().all(|w| !set.input(*w).contains(&5.0)));
        assert_eq!(set.len(), 2);
    }
}
