//! Synthetic CVS + ECG generator with ground-truth motion labels.
//!
//! A simulated CVS is the sum of a cardiogenic part (a cycle template warped
//! onto each RR interval) and a motion artifact driven by a per-episode
//! velocity proxy. The artifact is identically zero outside motion episodes,
//! and those are exactly the samples labeled `0`.
//!
//! The optional lumped-channel mode routes both parts through a 208-channel
//! trans-conductance vector and a weighting vector, `x = wᵀ Ġ`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{SignalTrace, DEFAULT_FS};

/// Points in the default cycle template.
pub const TEMPLATE_LEN: usize = 150;

/// RR intervals are redrawn until they fall inside this range (seconds).
pub const RR_BOUNDS: (f64, f64) = (0.3, 2.0);

/// Width of the moving average applied to the velocity proxy (seconds).
pub const VELOCITY_SMOOTHING: f64 = 0.1;

const BURST_HZ: f64 = 1.2;

// Independent RNG streams per generator stage.
const STREAM_ECG: u64 = 1;
const STREAM_CVS: u64 = 2;
const STREAM_MOTION: u64 = 3;
const STREAM_LUMPED: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes a corpus seed and a trace index into a per-trace seed (splitmix64).
pub fn trace_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "samples")]
pub enum CvsTemplate {
    #[default]
    DefaultBiphasic,
    Custom(Vec<f64>),
}

impl CvsTemplate {
    pub fn samples(&self) -> Vec<f64> {
        match self {
            CvsTemplate::DefaultBiphasic => default_biphasic_template(),
            CvsTemplate::Custom(s) => s.clone(),
        }
    }
}

/// Biphasic cardiac pulse on [`TEMPLATE_LEN`] points: a fast systolic upstroke,
/// an exponential decay and a shallow late undershoot. Peak is 1, both ends 0.
pub fn default_biphasic_template() -> Vec<f64> {
    let raw = |phi: f64| -> f64 {
        let rise = 0.12;
        let main = if phi < rise {
            (0.5 * PI * phi / rise).sin().powi(2)
        } else {
            (-(phi - rise) / 0.22).exp()
        };
        let undershoot = 0.25 * (-((phi - 0.62) / 0.13).powi(2)).exp();
        main - undershoot
    };
    let end = raw(1.0);
    let start = raw(0.0);
    let mut t: Vec<f64> = (0..TEMPLATE_LEN)
        .map(|k| {
            let phi = k as f64 / TEMPLATE_LEN as f64;
            raw(phi) - start - (end - start) * phi
        })
        .collect();
    let peak = t.iter().cloned().fold(f64::MIN, f64::max);
    t.iter_mut().for_each(|v| *v /= peak);
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityProfile {
    /// Constant velocity for the whole episode.
    Step,
    /// Linear ramp from 0 to the amplitude.
    Ramp,
    /// Oscillating velocity, as when a subject rocks or shifts repeatedly.
    Burst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEpisode {
    /// Seconds from the start of the trace.
    pub start: f64,
    pub end: f64,
    pub profile: VelocityProfile,
    pub amplitude: f64,
    #[serde(default = "default_drift_gain")]
    pub drift_gain: f64,
    #[serde(default = "default_morph_gain")]
    pub morph_gain: f64,
}

fn default_drift_gain() -> f64 {
    1.0
}

fn default_morph_gain() -> f64 {
    0.5
}

impl MotionEpisode {
    fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }

    fn velocity(&self, t: f64) -> f64 {
        let u = t - self.start;
        match self.profile {
            VelocityProfile::Step => self.amplitude,
            VelocityProfile::Ramp => self.amplitude * u / (self.end - self.start),
            VelocityProfile::Burst => self.amplitude * (2.0 * PI * BURST_HZ * u).sin(),
        }
    }
}

/// Channel gains and weighting vector for the 208-channel lumped mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpedChannelConfig {
    pub n_channels: usize,
    /// Weighting vector `w` applied to the conductance changes.
    pub w: Vec<f64>,
    /// Per-channel gain of the cardiogenic component.
    pub cardiac_gain: Vec<f64>,
    /// Per-channel gain of the motion component.
    pub motion_gain: Vec<f64>,
}

impl LumpedChannelConfig {
    /// Random positive gains; `w` is scaled so that `wᵀ cardiac_gain = 1`.
    pub fn random(seed: u64) -> Self {
        let n = electrode_pairs().len();
        let mut rng = stream(seed, STREAM_LUMPED);
        let cardiac_gain: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let motion_gain: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let norm2: f64 = cardiac_gain.iter().map(|a| a * a).sum();
        let w = cardiac_gain.iter().map(|a| a / norm2).collect();
        Self {
            n_channels: n,
            w,
            cardiac_gain,
            motion_gain,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.w.len() != self.n_channels
            || self.cardiac_gain.len() != self.n_channels
            || self.motion_gain.len() != self.n_channels
        {
            return Err(Error::Config("lumped channel vectors must have n_channels entries".into()));
        }
        if self.w.iter().map(|w| w * w).sum::<f64>() <= 0.0 {
            return Err(Error::Config("weighting vector must be nonzero".into()));
        }
        Ok(())
    }

    /// Conductance change of every channel at one instant.
    pub fn conductance(&self, normal: f64, motion: f64) -> Vec<f64> {
        self.cardiac_gain
            .iter()
            .zip(&self.motion_gain)
            .map(|(a, m)| a * normal + m * motion)
            .collect()
    }

    pub fn project(&self, g_dot: &[f64]) -> f64 {
        self.w.iter().zip(g_dot).map(|(w, g)| w * g).sum()
    }
}

/// The 208 (injection, measurement) electrode pairs of a 16-electrode belt,
/// 1-based. Injection runs between electrodes `i` and `i+1`; measurements
/// that share an electrode with the injection pair are skipped.
pub fn electrode_pairs() -> Vec<(usize, usize)> {
    let n = 16;
    let mut out = Vec::with_capacity(208);
    for i in 1..=n {
        for step in 2..=14 {
            let j = (i - 1 + step) % n + 1;
            out.push((i, j));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub trace_id: String,
    pub fs: f64,
    /// Seconds.
    pub duration: f64,
    /// Beats per minute.
    pub hr_mean: f64,
    /// Beat-to-beat heart-rate spread in bpm.
    pub hr_std: f64,
    pub cvs_template: CvsTemplate,
    /// Relative per-cycle amplitude jitter: amplitudes lie in `1 ± jitter`.
    pub template_jitter: f64,
    pub sensor_noise_std: f64,
    pub ecg_noise_std: f64,
    pub motion_episodes: Vec<MotionEpisode>,
    pub seed: u64,
    pub lumped: Option<LumpedChannelConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            trace_id: "sim".into(),
            fs: DEFAULT_FS,
            duration: 60.0,
            hr_mean: 70.0,
            hr_std: 2.0,
            cvs_template: CvsTemplate::DefaultBiphasic,
            template_jitter: 0.05,
            sensor_noise_std: 0.02,
            ecg_noise_std: 0.02,
            motion_episodes: Vec::new(),
            seed: 0,
            lumped: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fs > 0.0) {
            return bad(format!("fs must be positive, got {}", self.fs));
        }
        if !(30.0..=200.0).contains(&self.hr_mean) {
            return bad(format!("hr_mean {} outside [30, 200]", self.hr_mean));
        }
        if self.duration * self.hr_mean / 60.0 < 2.0 || self.duration * self.fs < 2.0 {
            return bad("duration must cover at least two cycles".into());
        }
        if self.hr_std < 0.0
            || self.template_jitter < 0.0
            || self.sensor_noise_std < 0.0
            || self.ecg_noise_std < 0.0
        {
            return bad("standard deviations must be nonnegative".into());
        }
        if self.cvs_template.samples().len() < 2 {
            return bad("cvs template needs at least two samples".into());
        }
        for (k, ep) in self.motion_episodes.iter().enumerate() {
            if !(ep.start < ep.end) || ep.start < 0.0 || ep.end > self.duration {
                return bad(format!("motion episode {k} [{}, {}) is not within the trace", ep.start, ep.end));
            }
            if !(ep.amplitude >= 0.0) {
                return bad(format!("motion episode {k} has negative amplitude"));
            }
        }
        if let Some(l) = &self.lumped {
            l.validate()?;
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.fs).round() as usize
    }
}

/// Synthetic ECG and the exact R-peak times (seconds) of every beat in the trace.
pub fn gen_ecg(config: &SimConfig, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let beats = beat_times(config, seed);
    let peaks: Vec<f64> = beats.iter().copied().filter(|&t| t < config.duration).collect();

    let n = config.n_samples();
    let fs = config.fs;
    let mut ecg = vec![0.0; n];
    // (offset from R in seconds, amplitude, width in seconds)
    let waves = |rr: f64| -> [(f64, f64, f64); 5] {
        [
            (-0.16, 0.15, 0.025),
            (-0.025, -0.10, 0.010),
            (0.0, 1.0, 0.010),
            (0.025, -0.20, 0.010),
            (0.3 * rr.sqrt(), 0.30, 0.050),
        ]
    };
    for (j, &r) in beats.iter().enumerate() {
        let rr = if j + 1 < beats.len() { beats[j + 1] - r } else { r - beats[j.saturating_sub(1)] };
        for (offset, amp, width) in waves(rr.max(RR_BOUNDS.0)) {
            let center = r + offset;
            let lo = (((center - 5.0 * width) * fs).floor().max(0.0)) as usize;
            let hi = ((((center + 5.0 * width) * fs).ceil()).max(0.0) as usize).min(n);
            for (k, v) in ecg.iter_mut().enumerate().take(hi).skip(lo) {
                let d = (k as f64 / fs - center) / width;
                *v += amp * (-0.5 * d * d).exp();
            }
        }
    }
    if config.ecg_noise_std > 0.0 {
        let mut rng = stream(seed, STREAM_ECG + 100);
        for v in ecg.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += config.ecg_noise_std * z;
        }
    }
    (ecg, peaks)
}

/// Beat times starting at 0 and continuing one beat past the end of the trace.
fn beat_times(config: &SimConfig, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, STREAM_ECG);
    let mean_rr = 60.0 / config.hr_mean;
    let sd_rr = 60.0 * config.hr_std / (config.hr_mean * config.hr_mean);
    let normal = Normal::new(mean_rr, sd_rr).expect("nonnegative spread");
    let mut times = vec![0.0];
    let mut t = 0.0;
    while t < config.duration {
        let rr = if sd_rr == 0.0 {
            mean_rr.clamp(RR_BOUNDS.0, RR_BOUNDS.1)
        } else {
            loop {
                let rr = normal.sample(&mut rng);
                if (RR_BOUNDS.0..=RR_BOUNDS.1).contains(&rr) {
                    break rr;
                }
            }
        };
        t += rr;
        times.push(t);
    }
    times
}

/// Cardiogenic CVS component: the template warped onto each RR interval,
/// scaled by a per-cycle amplitude, plus white sensor noise.
///
/// Samples before the first and after the last peak continue the neighbouring
/// interval.
pub fn gen_cvs_normal(rpeak_times: &[f64], config: &SimConfig) -> Result<Vec<f64>> {
    if rpeak_times.len() < 2 {
        return Err(Error::InsufficientBeats {
            found: rpeak_times.len(),
        });
    }
    let template = config.cvs_template.samples();
    if template.len() < 2 {
        return Err(Error::Config("cvs template needs at least two samples".into()));
    }
    let m = template.len() as f64;
    let fs = config.fs;
    let n = config.n_samples();
    let mut rng = stream(config.seed, STREAM_CVS);

    // Peak positions in sample units, extended by one interval on each side.
    let mut marks: Vec<f64> = rpeak_times.iter().map(|t| t * fs).collect();
    let first = marks[0] - (marks[1] - marks[0]);
    let k = marks.len();
    let last = marks[k - 1] + (marks[k - 1] - marks[k - 2]);
    marks.insert(0, first);
    marks.push(last);
    while *marks.last().unwrap() <= n as f64 {
        let k = marks.len();
        let next = marks[k - 1] + (marks[k - 1] - marks[k - 2]);
        marks.push(next);
    }
    let jitter = config.template_jitter;
    let amps: Vec<f64> = (0..marks.len())
        .map(|_| {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            1.0 + jitter * u
        })
        .collect();

    let noise = Normal::new(0.0, config.sensor_noise_std).expect("nonnegative std");
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for s in 0..n {
        let pos = s as f64;
        while j + 1 < marks.len() && marks[j + 1] <= pos {
            j += 1;
        }
        let phase = (pos - marks[j]) / (marks[j + 1] - marks[j]);
        let x = phase * m;
        let i0 = (x.floor() as usize).min(template.len() - 1);
        let frac = x - i0 as f64;
        let i1 = (i0 + 1) % template.len();
        let v = template[i0] + frac * (template[i1] - template[i0]);
        let mut value = amps[j] * v;
        if config.sensor_noise_std > 0.0 {
            value += noise.sample(&mut rng);
        }
        out.push(value);
    }
    Ok(out)
}

/// Motion artifact: `drift_gain · smooth(v) + morph_gain · v · noise` inside each
/// episode, where `v` is the velocity proxy and `noise` is unit-variance
/// band-limited noise. Zero everywhere outside episodes; overlapping episodes add.
pub fn gen_motion(n: usize, episodes: &[MotionEpisode], fs: f64, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let width = ((VELOCITY_SMOOTHING * fs).round() as usize).max(1);
    for (e, ep) in episodes.iter().enumerate() {
        let idx: Vec<usize> = (0..n).filter(|&k| ep.contains(k as f64 / fs)).collect();
        if idx.is_empty() {
            continue;
        }
        let v: Vec<f64> = idx.iter().map(|&k| ep.velocity(k as f64 / fs)).collect();
        let smooth = trailing_mean(&v, width);

        let mut rng = stream(trace_seed(seed, e as u64), STREAM_MOTION);
        let white: Vec<f64> = (0..idx.len() + width)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let scale = (width as f64).sqrt();
        for (i, &k) in idx.iter().enumerate() {
            let band = white[i..i + width].iter().sum::<f64>() / scale;
            out[k] += ep.drift_gain * smooth[i] + ep.morph_gain * v[i] * band;
        }
    }
    out
}

fn trailing_mean(v: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for i in 0..v.len() {
        acc += v[i];
        if i >= width {
            acc -= v[i - width];
        }
        out.push(acc / (i + 1).min(width) as f64);
    }
    out
}

/// A simulated trace together with its generating components.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub trace: SignalTrace,
    pub x_normal: Vec<f64>,
    pub x_motion: Vec<f64>,
    pub rpeak_times: Vec<f64>,
}

pub fn synthesize_trace(config: &SimConfig) -> Result<SimTrace> {
    config.validate()?;
    let n = config.n_samples();
    let (ecg, rpeak_times) = gen_ecg(config, config.seed);
    let normal = gen_cvs_normal(&rpeak_times, config)?;
    let motion = gen_motion(n, &config.motion_episodes, config.fs, config.seed);

    let (x_normal, x_motion, cvs) = match &config.lumped {
        None => {
            let cvs = normal.iter().zip(&motion).map(|(a, b)| a + b).collect();
            (normal, motion, cvs)
        }
        Some(l) => {
            let mut xn = Vec::with_capacity(n);
            let mut xm = Vec::with_capacity(n);
            let mut x = Vec::with_capacity(n);
            for (&s, &v) in normal.iter().zip(&motion) {
                x.push(l.project(&l.conductance(s, v)));
                xn.push(l.project(&l.conductance(s, 0.0)));
                xm.push(l.project(&l.conductance(0.0, v)));
            }
            (xn, xm, x)
        }
    };
    let labels = (0..n)
        .map(|k| {
            let t = k as f64 / config.fs;
            u8::from(!config.motion_episodes.iter().any(|ep| ep.contains(t)))
        })
        .collect();
    let trace = SignalTrace::new(
        config.trace_id.clone(),
        config.fs,
        0.0,
        cvs,
        ecg,
        Some(labels),
    )?;
    Ok(SimTrace {
        trace,
        x_normal,
        x_motion,
        rpeak_times,
    })
}

/// Generates every configured trace. Order follows `configs`; each trace uses
/// only its own seed, so the thread count cannot change the output.
pub fn synthesize_corpus(configs: &[SimConfig]) -> Result<Vec<SignalTrace>> {
    configs
        .par_iter()
        .map(|c| synthesize_trace(c).map(|s| s.trace))
        .collect()
}

/// Parameters of the standard benchmark corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub n_traces: usize,
    pub duration: f64,
    pub fs: f64,
    /// Fraction of time covered by motion episodes in every trace.
    pub motion_time_fraction: f64,
    pub mean_episode: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            n_traces: 20,
            duration: 300.0,
            fs: DEFAULT_FS,
            // Episode edges add partial cycles, lifting the motion-cycle share to ~20%.
            motion_time_fraction: 0.18,
            mean_episode: 8.0,
            seed: 7,
        }
    }
}

impl BenchmarkSpec {
    /// One configuration per trace, ids `sim000`, `sim001`, ...
    pub fn configs(&self) -> Vec<SimConfig> {
        (0..self.n_traces)
            .map(|i| {
                let seed = trace_seed(self.seed, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let episodes = plan_episodes(
                    self.duration,
                    self.motion_time_fraction,
                    self.mean_episode,
                    &mut rng,
                );
                SimConfig {
                    trace_id: format!("sim{i:03}"),
                    fs: self.fs,
                    duration: self.duration,
                    hr_mean: rng.gen_range(55.0..85.0),
                    hr_std: rng.gen_range(1.0..4.0),
                    template_jitter: 0.05,
                    sensor_noise_std: 0.02,
                    ecg_noise_std: 0.02,
                    motion_episodes: episodes,
                    seed,
                    ..SimConfig::default()
                }
            })
            .collect()
    }
}

/// Lays out episodes covering exactly `fraction` of `[0, duration)`, with
/// random lengths, gaps, profiles and amplitudes.
fn plan_episodes(duration: f64, fraction: f64, mean_len: f64, rng: &mut ChaCha8Rng) -> Vec<MotionEpisode> {
    if fraction <= 0.0 {
        return Vec::new();
    }
    let total = fraction * duration;
    let count = ((total / mean_len).round() as usize).max(1);
    let lens: Vec<f64> = (0..count).map(|_| rng.gen_range(0.5..1.5)).collect();
    let gaps: Vec<f64> = (0..=count).map(|_| rng.gen_range(0.5..1.5)).collect();
    let len_scale = total / lens.iter().sum::<f64>();
    let gap_scale = (duration - total) / gaps.iter().sum::<f64>();

    let mut t = 0.0;
    let mut out = Vec::with_capacity(count);
    for (len, gap) in lens.iter().zip(&gaps) {
        t += gap * gap_scale;
        let start = t;
        t += len * len_scale;
        let profile = match rng.gen_range(0..3) {
            0 => VelocityProfile::Step,
            1 => VelocityProfile::Ramp,
            _ => VelocityProfile::Burst,
        };
        out.push(MotionEpisode {
            start,
            end: t.min(duration),
            profile,
            amplitude: rng.gen_range(0.6..1.5),
            drift_gain: 1.0,
            morph_gain: 0.5,
        });
    }
    out
}

/// Corpus description file: either a benchmark preset, explicit traces, or both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub benchmark: Option<BenchmarkSpec>,
    #[serde(rename = "trace")]
    pub traces: Vec<SimConfig>,
}

impl CorpusSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn configs(&self) -> Vec<SimConfig> {
        let mut out = self.benchmark.as_ref().map(|b| b.configs()).unwrap_or_default();
        out.extend(self.traces.iter().cloned());
        out
    }
}
