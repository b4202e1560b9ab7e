//! Signal records, CSV persistence, normalization and subject-level splits.
//!
//! On disk a trace is a CSV file with header `t,cvs,ecg[,label]`. Times are
//! implicit in memory (`t_k = t0 + k / fs`); the sampling rate is recovered
//! from the median time step when loading.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sampling rate for simulated and unlabeled data.
pub const DEFAULT_FS: f64 = 100.0;

/// Maximum tolerated deviation of any time step from the median step.
const MAX_JITTER: f64 = 0.01;

/// Floor applied to the pooled standard deviation.
const STD_FLOOR: f64 = 1e-12;

/// A uniformly sampled CVS record with a synchronized ECG channel.
///
/// Labels follow the quality map convention: `1` is normal, `0` is
/// motion-influenced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTrace {
    pub trace_id: String,
    pub fs: f64,
    pub t0: f64,
    pub cvs: Vec<f64>,
    pub ecg: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl SignalTrace {
    pub fn new(
        trace_id: impl Into<String>,
        fs: f64,
        t0: f64,
        cvs: Vec<f64>,
        ecg: Vec<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let trace = Self {
            trace_id: trace_id.into(),
            fs,
            t0,
            cvs,
            ecg,
            labels,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::InvalidTrace(format!("fs must be positive, got {}", self.fs)));
        }
        if self.cvs.is_empty() {
            return Err(Error::InvalidTrace("trace has no samples".into()));
        }
        if self.ecg.len() != self.cvs.len() {
            return Err(Error::InvalidTrace(format!(
                "ecg length {} differs from cvs length {}",
                self.ecg.len(),
                self.cvs.len()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.cvs.len() {
                return Err(Error::InvalidTrace(format!(
                    "label length {} differs from cvs length {}",
                    labels.len(),
                    self.cvs.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(Error::InvalidTrace(format!("label {bad} is not 0 or 1")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cvs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cvs.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.fs
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    /// Copy with labels removed, as used for unlabeled inference data.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }
}

/// Reads a trace from CSV. The trace id is the file stem.
pub fn load_trace(path: impl AsRef<Path>) -> Result<SignalTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let trace_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trace(&text, trace_id, path)
}

/// Parses the CSV body of a trace.
pub fn parse_trace(text: &str, trace_id: String, origin: &Path) -> Result<SignalTrace> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let columns: Vec<&str> = headers.iter().collect();
    let has_labels = match columns.as_slice() {
        ["t", "cvs", "ecg"] => false,
        ["t", "cvs", "ecg", "label"] => true,
        _ => {
            return Err(parse_err(
                1,
                format!("expected header `t,cvs,ecg[,label]`, got `{}`", columns.join(",")),
            ))
        }
    };

    let mut times = Vec::new();
    let mut cvs = Vec::new();
    let mut ecg = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            let value: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("column {} is not a number: `{raw}`", columns[i])))?;
            if !value.is_finite() {
                return Err(parse_err(line, format!("column {} is not finite", columns[i])));
            }
            Ok(value)
        };
        times.push(field(0)?);
        cvs.push(field(1)?);
        ecg.push(field(2)?);
        if has_labels {
            match record.get(3).unwrap_or("") {
                "0" => labels.push(0),
                "1" => labels.push(1),
                other => return Err(parse_err(line, format!("label must be 0 or 1, got `{other}`"))),
            }
        }
    }
    if times.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }

    let fs = infer_fs(&times)?;
    SignalTrace::new(
        trace_id,
        fs,
        times[0],
        cvs,
        ecg,
        has_labels.then_some(labels),
    )
}

fn infer_fs(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Ok(DEFAULT_FS);
    }
    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(k) = steps.iter().position(|&s| s <= 0.0) {
        return Err(Error::Sampling(format!(
            "time is not strictly increasing at row {}",
            k + 2
        )));
    }
    let raw_steps = steps.clone();
    steps.sort_by(f64::total_cmp);
    let n = steps.len();
    let median = if n % 2 == 1 {
        steps[n / 2]
    } else {
        0.5 * (steps[n / 2 - 1] + steps[n / 2])
    };
    for (k, &s) in raw_steps.iter().enumerate() {
        if (s - median).abs() > MAX_JITTER * median {
            return Err(Error::Sampling(format!(
                "step {s} at row {} deviates from median step {median} by more than 1%",
                k + 2
            )));
        }
    }
    // Decimal time stamps make 1/step slightly inexact; snap to a micro-hertz grid.
    let fs = 1.0 / median;
    let snapped = (fs * 1e6).round() / 1e6;
    Ok(if (snapped - fs).abs() <= 1e-9 * fs { snapped } else { fs })
}

/// Writes a trace as CSV through a temporary file and rename.
pub fn save_trace(trace: &SignalTrace, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(trace.len() * 48);
    out.push_str(if trace.labels.is_some() {
        "t,cvs,ecg,label\n"
    } else {
        "t,cvs,ecg\n"
    });
    for k in 0..trace.len() {
        use std::fmt::Write as _;
        let _ = write!(out, "{},{},{}", trace.time(k), trace.cvs[k], trace.ecg[k]);
        if let Some(labels) = &trace.labels {
            let _ = write!(out, ",{}", labels[k]);
        }
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Pooled CVS statistics of a training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { mean: 0.0, std: 1.0 };

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, x: f64) -> f64 {
        x * self.std + self.mean
    }
}

/// Mean and population standard deviation of every CVS sample in `traces`.
pub fn fit_norm(traces: &[SignalTrace]) -> Result<NormStats> {
    let n: usize = traces.iter().map(|t| t.cvs.len()).sum();
    if n == 0 {
        return Err(Error::Empty("normalization needs at least one sample"));
    }
    let mean = traces.iter().flat_map(|t| &t.cvs).sum::<f64>() / n as f64;
    let var = traces
        .iter()
        .flat_map(|t| &t.cvs)
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / n as f64;
    Ok(NormStats {
        mean,
        std: var.sqrt().max(STD_FLOOR),
    })
}

pub fn apply_norm(trace: &SignalTrace, stats: &NormStats) -> SignalTrace {
    SignalTrace {
        cvs: trace.cvs.iter().map(|&x| stats.apply(x)).collect(),
        ..trace.clone()
    }
}

pub fn invert_norm(trace: &SignalTrace, stats: &NormStats) -> SignalTrace {
    SignalTrace {
        cvs: trace.cvs.iter().map(|&x| stats.invert(x)).collect(),
        ..trace.clone()
    }
}

/// Subject-level partition of trace ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Shuffles the (sorted) ids with `seed` and cuts them into train/val/test.
    ///
    /// Every non-empty fraction receives at least one trace when enough ids exist.
    pub fn new(ids: &[String], val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_frac)
            || !(0.0..1.0).contains(&test_frac)
            || val_frac + test_frac >= 1.0
        {
            return Err(Error::Config(format!(
                "split fractions val={val_frac} test={test_frac} leave no training data"
            )));
        }
        let mut ids: Vec<String> = ids.to_vec();
        ids.sort();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::Empty("no traces to split"));
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let n = ids.len();
        let count = |frac: f64| -> usize {
            if frac == 0.0 {
                0
            } else {
                ((frac * n as f64).round() as usize).max(1)
            }
        };
        let n_test = count(test_frac).min(n.saturating_sub(1));
        let n_val = count(val_frac).min(n - n_test - 1);
        let test = ids.split_off(n - n_test);
        let val = ids.split_off(n - n_test - n_val);
        Ok(Self {
            train: ids,
            val,
            test,
            seed,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(cvs: Vec<f64>) -> SignalTrace {
        let n = cvs.len();
        SignalTrace::new("t", 100.0, 0.0, cvs, vec![0.0; n], None).unwrap()
    }

    fn parse(text: &str) -> Result<SignalTrace> {
        parse_trace(text, "x".into(), Path::new("x.csv"))
    }

    #[test]
    fn infers_sampling_rate() {
        let t = parse("t,cvs,ecg\n0,1,2\n0.01,1,2\n0.02,1,2\n").unwrap();
        assert_eq!(t.fs, 100.0);
        assert_eq!(t.labels, None);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn reads_labels() {
        let t = parse("t,cvs,ecg,label\n0,1,2,1\n0.01,1,2,0\n0.02,1,2,1\n").unwrap();
        assert_eq!(t.labels, Some(vec![1, 0, 1]));
    }

    #[test]
    fn rejects_jitter() {
        let err = parse("t,cvs,ecg\n0,1,2\n0.01,1,2\n0.05,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Sampling(_)), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("t,cvs,ecg\n0,1,2\n0.01,abc,2\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_bad_header_and_labels() {
        assert!(matches!(parse("a,b,c\n0,1,2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse("t,cvs,ecg,label\n0,1,2,2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn norm_examples() {
        let s = fit_norm(&[trace(vec![1.0, 1.0, 1.0])]).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 1e-12));
        let s = fit_norm(&[trace(vec![0.0, 2.0])]).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        let s = fit_norm(&[trace(vec![0.0]), trace(vec![2.0])]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!(matches!(fit_norm(&[]), Err(Error::Empty(_))));

        let t = trace(vec![1.0, 3.0]);
        let n = apply_norm(&t, &NormStats { mean: 1.0, std: 2.0 });
        assert_eq!(n.cvs, vec![0.0, 1.0]);
        assert_eq!(apply_norm(&t, &NormStats::IDENTITY), t);
    }

    #[test]
    fn split_is_disjoint_and_reproducible() {
        let ids: Vec<String> = (0..20).map(|i| format!("s{i:02}")).collect();
        let a = DatasetSplit::new(&ids, 0.15, 0.15, 3).unwrap();
        let b = DatasetSplit::new(&ids, 0.15, 0.15, 3).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (14, 3, 3));
        let mut all: Vec<_> = a.train.iter().chain(&a.val).chain(&a.test).cloned().collect();
        all.sort();
        assert_eq!(all, ids);
    }
}
