//! Synthetic benchmark: simulate a labeled corpus, split it by trace, train
//! without labels and score the held-out traces.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::{evaluate, train_corpus, CutoffRule, EvaluationReport};
use crate::signal::{DatasetSplit, SignalTrace};
use crate::synth::{synthesize_corpus, BenchmarkSpec};
use crate::train::{Checkpoint, TrainConfig};

pub const VAL_FRACTION: f64 = 0.15;
pub const TEST_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCorpus {
    pub traces: Vec<SignalTrace>,
    pub split: DatasetSplit,
}

impl BenchmarkCorpus {
    pub fn simulate(spec: &BenchmarkSpec) -> Result<Self> {
        let traces = synthesize_corpus(&spec.configs())?;
        let ids: Vec<String> = traces.iter().map(|t| t.trace_id.clone()).collect();
        let split = DatasetSplit::new(&ids, VAL_FRACTION, TEST_FRACTION, spec.seed)?;
        Ok(Self { traces, split })
    }

    pub fn subset(&self, ids: &[String]) -> Vec<SignalTrace> {
        self.traces
            .iter()
            .filter(|t| ids.contains(&t.trace_id))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub train: TrainConfig,
    /// Step between assessed anchors on validation and test traces.
    pub eval_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub checkpoint: Checkpoint,
    pub val: EvaluationReport,
    pub test: EvaluationReport,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

pub fn run_benchmark(
    corpus: &BenchmarkCorpus,
    run: &BenchmarkRun,
    on_epoch: impl FnMut(usize, f64),
) -> Result<BenchmarkOutcome> {
    let start = Instant::now();
    let train = corpus.subset(&corpus.split.train);
    let checkpoint = train_corpus(&train, &run.train, on_epoch)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (val, _) = evaluate(
        &checkpoint,
        &corpus.subset(&corpus.split.val),
        run.eval_stride,
        CutoffRule::TwoSigma,
        None,
    )?;
    let (test, _) = evaluate(
        &checkpoint,
        &corpus.subset(&corpus.split.test),
        run.eval_stride,
        CutoffRule::TwoSigma,
        None,
    )?;
    Ok(BenchmarkOutcome {
        checkpoint,
        val,
        test,
        train_seconds,
        eval_seconds: start.elapsed().as_secs_f64(),
    })
}
