//! Append-only annotation journal: one JSON record per line, fsynced per write.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Machine,
    Original,
    Guided,
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "machine" => Ok(Source::Machine),
            "original" => Ok(Source::Original),
            "guided" => Ok(Source::Guided),
            other => Err(format!("unknown annotation source `{other}`")),
        }
    }
}

/// Cycles `[start_cycle, end_cycle)` carry `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_cycle: usize,
    pub end_cycle: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub trace_id: String,
    pub spans: Vec<Span>,
    pub source: Source,
    pub author: String,
    /// Milliseconds since the Unix epoch; assigned on receipt when absent.
    #[serde(default)]
    pub timestamp_ms: u64,
}

impl AnnotationRecord {
    /// Checks labels, ordering and overlap against a trace of `n_cycles`.
    pub fn validate(&self, n_cycles: usize) -> Result<(), String> {
        let mut spans = self.spans.clone();
        spans.sort_by_key(|s| (s.start_cycle, s.end_cycle));
        for s in &spans {
            if s.label > 1 {
                return Err(format!("label {} is not 0 or 1", s.label));
            }
            if s.start_cycle >= s.end_cycle {
                return Err(format!("empty span [{}, {})", s.start_cycle, s.end_cycle));
            }
            if s.end_cycle > n_cycles {
                return Err(format!("span ends at cycle {} but the trace has {n_cycles}", s.end_cycle));
            }
        }
        if let Some(w) = spans.windows(2).find(|w| w[1].start_cycle < w[0].end_cycle) {
            return Err(format!(
                "spans [{}, {}) and [{}, {}) overlap",
                w[0].start_cycle, w[0].end_cycle, w[1].start_cycle, w[1].end_cycle
            ));
        }
        Ok(())
    }

    /// Per-cycle labels; cycles outside every span are normal (1).
    pub fn cycle_labels(&self, n_cycles: usize) -> Vec<u8> {
        let mut labels = vec![1u8; n_cycles];
        for s in &self.spans {
            for v in &mut labels[s.start_cycle.min(n_cycles)..s.end_cycle.min(n_cycles)] {
                *v = s.label;
            }
        }
        labels
    }
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    records: Vec<AnnotationRecord>,
}

impl Journal {
    /// Opens (creating if needed) and compacts the journal at `path`.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(r) => records.push(r),
                    // A torn final line from a crash mid-write is dropped.
                    Err(_) if i + 1 == count_lines(&path)? => {}
                    Err(e) => {
                        return Err(std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("{}: line {}: {e}", path.display(), i + 1),
                        ))
                    }
                }
            }
        }
        let records = latest_per_key(records);
        rewrite(&path, &records)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Self { path, file, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends and fsyncs one record.
    pub fn append(&mut self, record: AnnotationRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.records.push(record);
        Ok(())
    }

    /// Every record in journal order.
    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    /// Latest record per (source, author) for one trace, in journal order.
    pub fn current(&self, trace_id: &str) -> Vec<AnnotationRecord> {
        latest_per_key(self.records.iter().filter(|r| r.trace_id == trace_id).cloned().collect())
    }

    /// Latest record of `source` for one trace, any author.
    pub fn latest(&self, trace_id: &str, source: Source) -> Option<&AnnotationRecord> {
        self.records
            .iter()
            .rev()
            .find(|r| r.trace_id == trace_id && r.source == source)
    }
}

fn count_lines(path: &Path) -> std::io::Result<usize> {
    Ok(BufReader::new(File::open(path)?).lines().count())
}

fn latest_per_key(records: Vec<AnnotationRecord>) -> Vec<AnnotationRecord> {
    let mut last: HashMap<(String, Source, String), usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        last.insert((r.trace_id.clone(), r.source, r.author.clone()), i);
    }
    records
        .into_iter()
        .enumerate()
        .filter(|(i, r)| last[&(r.trace_id.clone(), r.source, r.author.clone())] == *i)
        .map(|(_, r)| r)
        .collect()
}

fn rewrite(path: &Path, records: &[AnnotationRecord]) -> std::io::Result<()> {
    let mut bytes = Vec::new();
    for r in records {
        bytes.extend(serde_json::to_vec(r)?);
        bytes.push(b'\n');
    }
    let tmp = path.with_extension("ndjson.tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
