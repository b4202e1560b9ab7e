//! Energy-based R-peak detector in the Pan-Tompkins family.
//!
//! Processing runs offline on the whole record, so every filter is centered
//! (zero phase) and no group-delay compensation is needed:
//! band-pass (difference of moving averages) → derivative → squaring →
//! moving-window integration → adaptive threshold with a refractory period →
//! refinement to the raw ECG maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RPeakParams {
    /// Seconds after an accepted beat during which no other beat is accepted.
    pub refractory: f64,
    /// Threshold as a fraction of the running peak average.
    pub threshold_ratio: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Moving-window integration width in seconds.
    pub integration: f64,
    /// Half-width of the search window used to refine each beat (seconds).
    pub search: f64,
}

impl Default for RPeakParams {
    fn default() -> Self {
        Self {
            refractory: 0.25,
            threshold_ratio: 0.4,
            band_low_hz: 5.0,
            band_high_hz: 25.0,
            integration: 0.15,
            search: 0.075,
        }
    }
}

/// Centered moving average with an odd window of roughly `width` samples.
/// Samples beyond the edges are excluded from the mean.
fn centered_mean(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Squared-slope energy envelope of the ECG after band-pass filtering.
pub fn energy_envelope(ecg: &[f64], fs: f64, params: &RPeakParams) -> Vec<f64> {
    let samples = |seconds: f64| ((seconds * fs).round() as usize).max(1);
    let short = centered_mean(ecg, samples(1.0 / params.band_high_hz));
    let long = centered_mean(ecg, samples(1.0 / params.band_low_hz));
    let band: Vec<f64> = short.iter().zip(&long).map(|(a, b)| a - b).collect();
    let n = band.len();
    let slope_sq: Vec<f64> = (0..n)
        .map(|k| {
            let prev = band[k.saturating_sub(1)];
            let next = band[(k + 1).min(n - 1)];
            let d = 0.5 * (next - prev) * fs;
            d * d
        })
        .collect();
    centered_mean(&slope_sq, samples(params.integration))
}

pub fn detect_r_peaks(ecg: &[f64], fs: f64) -> Result<Vec<usize>> {
    detect_r_peaks_with(ecg, fs, &RPeakParams::default())
}

/// Sample indices of detected R peaks, strictly increasing.
///
/// Fails with [`Error::InsufficientBeats`] when fewer than two beats are found;
/// callers holding reference peaks may fall back to them.
pub fn detect_r_peaks_with(ecg: &[f64], fs: f64, params: &RPeakParams) -> Result<Vec<usize>> {
    let n = ecg.len();
    if n < 3 {
        return Err(Error::InsufficientBeats { found: 0 });
    }
    let env = energy_envelope(ecg, fs, params);
    let refractory = (params.refractory * fs).round() as usize;
    let search = ((params.search * fs).round() as usize).max(1);

    // Running peak level starts at the largest envelope value in the first two seconds.
    let warmup = ((2.0 * fs) as usize).clamp(1, n);
    let mut level = env[..warmup].iter().cloned().fold(0.0, f64::max);

    let is_local_max = |k: usize| -> bool {
        let left = k == 0 || env[k] >= env[k - 1];
        let right = k + 1 == n || env[k] > env[k + 1];
        left && right
    };

    let mut humps: Vec<usize> = Vec::new();
    for k in 0..n {
        if !is_local_max(k) {
            continue;
        }
        let threshold = params.threshold_ratio * level;
        if !(env[k] > threshold) || env[k] <= 0.0 {
            continue;
        }
        match humps.last_mut() {
            Some(last) if k - *last < refractory => {
                if env[k] > env[*last] {
                    *last = k;
                }
            }
            _ => humps.push(k),
        }
        level = 0.125 * env[k] + 0.875 * level;
    }

    let mut peaks: Vec<usize> = humps
        .iter()
        .map(|&k| {
            let lo = k.saturating_sub(search);
            let hi = (k + search + 1).min(n);
            (lo..hi)
                .max_by(|&a, &b| ecg[a].total_cmp(&ecg[b]).then(b.cmp(&a)))
                .unwrap_or(k)
        })
        .collect();
    peaks.dedup();
    if peaks.len() < 2 {
        return Err(Error::InsufficientBeats { found: peaks.len() });
    }
    Ok(peaks)
}

/// Greedy one-to-one matching of detections to reference peaks within
/// `tolerance` samples. Returns (matched, detected, reference) counts.
pub fn match_peaks(detected: &[usize], reference: &[usize], tolerance: usize) -> (usize, usize, usize) {
    let mut used = vec![false; detected.len()];
    let mut matched = 0;
    let mut j = 0;
    for &r in reference {
        while j < detected.len() && detected[j] + tolerance < r {
            j += 1;
        }
        let mut k = j;
        let mut best: Option<usize> = None;
        while k < detected.len() && detected[k] <= r + tolerance {
            if !used[k] {
                let better = best.map_or(true, |b| detected[k].abs_diff(r) < detected[b].abs_diff(r));
                if better {
                    best = Some(k);
                }
            }
            k += 1;
        }
        if let Some(b) = best {
            used[b] = true;
            matched += 1;
        }
    }
    (matched, detected.len(), reference.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spike_train(n: usize, at: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for &k in at {
            for d in -2i64..=2 {
                let i = k as i64 + d;
                if (0..n as i64).contains(&i) {
                    x[i as usize] += (-(d * d) as f64 / 1.5).exp();
                }
            }
        }
        x
    }

    #[test]
    fn flat_signal_has_no_beats() {
        let err = detect_r_peaks(&vec![0.0; 1000], 100.0).unwrap_err();
        assert!(matches!(err, Error::InsufficientBeats { found: 0 }));
    }

    #[test]
    fn finds_isolated_spikes() {
        let at = [50, 150, 250, 350];
        let peaks = detect_r_peaks(&spike_train(400, &at), 100.0).unwrap();
        assert_eq!(peaks, at);
    }

    #[test]
    fn refractory_merges_close_spikes() {
        // Beats one second apart, plus a second spike 0.1 s after the one at 200.
        let x = spike_train(500, &[100, 200, 210, 300, 400]);
        let peaks = detect_r_peaks(&x, 100.0).unwrap();
        assert_eq!(peaks.len(), 4, "{peaks:?}");
        assert!(peaks.contains(&200) || peaks.contains(&210));
    }

    #[test]
    fn matching_counts() {
        assert_eq!(match_peaks(&[10, 20, 31], &[10, 21, 40], 2), (2, 3, 3));
        assert_eq!(match_peaks(&[], &[1], 2), (0, 0, 1));
    }
}
