//! `cvsqa`: simulate corpora, train the sequence VAE, score traces and serve
//! the labeling API.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure (non-finite loss, failed gradient check).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cvsqa_core::assess::{fit_two_sigma, youden_max, JFormula, Norm};
use cvsqa_core::error::Error;
use cvsqa_core::model::gradcheck::reference_suite;
use cvsqa_core::model::LstmVariant;
use cvsqa_core::pipeline::{
    assess_trace, evaluate, export_pseudolabels, load_corpus, pooled_scores, roc_csv, save_corpus, score_trace,
    sequences_for, track_csv, train_corpus, CutoffRule,
};
use cvsqa_core::preprocess::WindowSet;
use cvsqa_core::signal::{fit_norm, load_trace, write_atomic, DatasetSplit, SignalTrace};
use cvsqa_core::synth::{synthesize_corpus, BenchmarkSpec, CorpusSpec};
use cvsqa_core::train::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, TrainFilter};
use cvsqa_server::{AppState, ServiceConfig};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "cvsqa", version, about = "Unsupervised motion-artifact detection for cardiac volume signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a labeled corpus of CVS/ECG traces and a train/val/test split.
    Simulate(SimulateArgs),
    /// Report R peaks, cycles and window counts per trace.
    Preprocess(PreprocessArgs),
    /// Train a model without labels and write a checkpoint with its two-sigma cut-off.
    Train(TrainArgs),
    /// Write the per-sample prediction track of one trace.
    Assess(AssessArgs),
    /// Metrics report and ROC curve on labeled traces.
    Evaluate(EvaluateArgs),
    /// Cut-offs of every policy on labeled traces.
    TuneCutoff(TuneArgs),
    /// Compare analytic and finite-difference gradients on reference models.
    Gradcheck(GradcheckArgs),
    /// Write pseudo-labeled traces and a list of borderline anchors.
    Export(ExportArgs),
    /// Serve the labeling HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Output directory for `<trace_id>.csv` files and `split.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n_traces: usize,
    /// Seconds per trace.
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 100.0)]
    fs: f64,
    /// Fraction of each trace covered by motion episodes.
    #[arg(long, default_value_t = 0.18)]
    motion_fraction: f64,
    /// Mean motion episode length in seconds.
    #[arg(long, default_value_t = 8.0)]
    mean_episode: f64,
    /// TOML corpus description; replaces the benchmark flags above.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    test_frac: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Point,
    Cycle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    /// Gates read the previous cell state; the candidate has no recurrence.
    CellGated,
    /// Conventional LSTM with hidden-state recurrence.
    Standard,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterArg {
    All,
    PositiveOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    TwoSigma,
    YoudenMax,
    Manual,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SubsetArg {
    Train,
    Val,
    Test,
}

/// Window lengths: `--r/--p` in samples for point mode, `--R/--P` in cycles
/// for cycle mode.
#[derive(Debug, Args)]
struct WindowArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Cycle)]
    mode: ModeArg,
    /// Point mode: input samples per window.
    #[arg(long = "r", default_value_t = 200)]
    r_points: usize,
    /// Point mode: forecast samples per window (0 disables the forecast decoder).
    #[arg(long = "p", default_value_t = 200)]
    p_points: usize,
    /// Cycle mode: input cycles per window.
    #[arg(long = "R", default_value_t = 2)]
    r_cycles: usize,
    /// Cycle mode: forecast cycles per window (0 disables the forecast decoder).
    #[arg(long = "P", default_value_t = 2)]
    p_cycles: usize,
}

impl WindowArgs {
    fn config(&self) -> TrainConfig {
        match self.mode {
            ModeArg::Point => TrainConfig::point(self.r_points, self.p_points),
            ModeArg::Cycle => TrainConfig::cycle(self.r_cycles, self.p_cycles),
        }
    }
}

/// Trace selection: every CSV in `--data`, or one subset of a split file.
#[derive(Debug, Args)]
struct DataArgs {
    /// Directory of trace CSVs.
    #[arg(long)]
    data: PathBuf,
    /// Split file written by `simulate`; restricts the traces to `--subset`.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Split subset [default: train for train and preprocess, val for
    /// tune-cutoff, test for evaluate and export].
    #[arg(long, value_enum)]
    subset: Option<SubsetArg>,
}

impl DataArgs {
    fn load(&self, default_subset: SubsetArg) -> Result<Vec<SignalTrace>, CliError> {
        let traces = load_corpus(&self.data)?;
        let Some(path) = &self.split else {
            if self.subset.is_some() {
                return Err(CliError::Usage("--subset needs --split".into()));
            }
            return Ok(traces);
        };
        let split: DatasetSplit = serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let ids = match self.subset.unwrap_or(default_subset) {
            SubsetArg::Train => split.train,
            SubsetArg::Val => split.val,
            SubsetArg::Test => split.test,
        };
        let chosen: Vec<SignalTrace> = traces.into_iter().filter(|t| ids.contains(&t.trace_id)).collect();
        if chosen.len() != ids.len() {
            return Err(CliError::Data(format!(
                "split lists {} traces but {} were found in {}",
                ids.len(),
                chosen.len(),
                self.data.display()
            )));
        }
        Ok(chosen)
    }
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    window: WindowArgs,
    /// Step between consecutive windows.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// JSON summary path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    window: WindowArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Windows per batch [default: 1024 point, 128 cycle].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak one-cycle learning rate [default: 0.01 point, 0.001 cycle].
    #[arg(long)]
    lr: Option<f64>,
    /// AdamW decoupled weight decay.
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step between training windows.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Residual norm.
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
    /// `positive-only` drops windows that touch labeled motion (needs labels).
    #[arg(long, value_enum, default_value_t = FilterArg::All)]
    train_filter: FilterArg,
    #[arg(long, value_enum, default_value_t = VariantArg::CellGated)]
    variant: VariantArg,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    latent: usize,
    /// Stacked LSTM layers in every encoder and decoder.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Print the mean loss of every epoch to stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct AssessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trace CSV.
    #[arg(long)]
    trace: PathBuf,
    /// Track CSV (`t,cvs,prediction`; empty prediction before the first anchor).
    #[arg(long)]
    out: PathBuf,
    /// Cut-off [default: the checkpoint's two-sigma cut-off].
    #[arg(long)]
    tau: Option<f64>,
    /// Step between assessed anchors.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Also write anchors and residuals as JSON.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Traces to score (`--subset` defaults to test).
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = RuleArg::TwoSigma)]
    rule: RuleArg,
    /// Cut-off for `--rule manual`.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// JSON report path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// ROC curve CSV (`tau,fpr,tpr`).
    #[arg(long)]
    roc: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled traces (`--subset` defaults to val).
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Cut-off [default: the checkpoint's two-sigma cut-off].
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "CVSQA_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of trace CSVs; also holds the annotation journal and exports.
    #[arg(long)]
    data_dir: PathBuf,
    /// Step between scored anchors.
    #[arg(long, default_value_t = 1)]
    eval_stride: usize,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            e if e.is_numeric() => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

/// Non-finite values become the string `"inf"` so reports stay valid JSON.
fn tau_json(tau: f64) -> serde_json::Value {
    if tau.is_finite() {
        json!(tau)
    } else {
        json!("inf")
    }
}

fn checkpoint_tau(ckpt: &Checkpoint) -> CliResult<f64> {
    match ckpt.tau {
        Some(t) => Ok(t),
        None => Ok(fit_two_sigma(&ckpt.train_residuals)?),
    }
}

fn check_tau(tau: f64) -> CliResult<f64> {
    if tau.is_nan() || tau < 0.0 {
        return Err(CliError::Usage(format!("--tau must be non-negative, got {tau}")));
    }
    Ok(tau)
}

fn simulate(a: SimulateArgs) -> CliResult {
    let configs = match &a.config {
        Some(path) => CorpusSpec::from_toml(&read(path)?)?.configs(),
        None => BenchmarkSpec {
            n_traces: a.n_traces,
            duration: a.duration,
            fs: a.fs,
            motion_time_fraction: a.motion_fraction,
            mean_episode: a.mean_episode,
            seed: a.seed,
        }
        .configs(),
    };
    let traces = synthesize_corpus(&configs)?;
    save_corpus(&traces, &a.out)?;
    let ids: Vec<String> = traces.iter().map(|t| t.trace_id.clone()).collect();
    let split = DatasetSplit::new(&ids, a.val_frac, a.test_frac, a.seed)?;
    write_atomic(&a.out.join("split.json"), split.to_json()?.as_bytes())?;
    eprintln!("wrote {} traces to {}", traces.len(), a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> CliResult {
    let traces = a.data.load(SubsetArg::Train)?;
    let model = a.window.config().model;
    let norm = fit_norm(&traces)?;
    let mut rows = Vec::new();
    let mut total = 0;
    for t in &traces {
        let (seq, cycles) = sequences_for(t, &model, &norm)?;
        let n_windows = WindowSet::new(vec![seq], model.r, model.p, a.stride).len();
        total += n_windows;
        rows.push(json!({
            "trace_id": t.trace_id,
            "n_samples": t.len(),
            "n_cycles": cycles.as_ref().map(|c| c.len()),
            "n_windows": n_windows,
        }));
    }
    write_json(
        a.out.as_deref(),
        &json!({
            "mode": model.mode,
            "r": model.r,
            "p": model.p,
            "stride": a.stride,
            "norm": norm,
            "n_windows": total,
            "traces": rows,
        }),
    )
}

fn train(a: TrainArgs) -> CliResult {
    let traces = a.data.load(SubsetArg::Train)?;
    let mut cfg = a.window.config();
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr_max = a.lr.unwrap_or(cfg.lr_max);
    cfg.weight_decay = a.weight_decay;
    cfg.seed = a.seed;
    cfg.stride = a.stride;
    cfg.norm = match a.norm {
        NormArg::L1 => Norm::L1,
        NormArg::L2 => Norm::L2,
    };
    cfg.train_filter = match a.train_filter {
        FilterArg::All => TrainFilter::All,
        FilterArg::PositiveOnly => TrainFilter::PositiveOnly,
    };
    cfg.model.variant = match a.variant {
        VariantArg::CellGated => LstmVariant::CellGated,
        VariantArg::Standard => LstmVariant::Standard,
    };
    cfg.model.hidden = a.hidden;
    cfg.model.latent = a.latent;
    cfg.model.layers = a.layers;
    cfg.validate()?;
    let verbose = a.verbose;
    let ckpt = train_corpus(&traces, &cfg, |epoch, loss| {
        if verbose {
            eprintln!("epoch {epoch} loss {loss:.6}");
        }
    })?;
    save_checkpoint(&ckpt, &a.out)?;
    write_json(
        None,
        &json!({
            "checkpoint": a.out,
            "n_traces": traces.len(),
            "tau": ckpt.tau.map(tau_json),
            "final_loss": ckpt.loss_history.last(),
        }),
    )
}

fn assess(a: AssessArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let trace = load_trace(&a.trace)?;
    let tau = match a.tau {
        Some(t) => check_tau(t)?,
        None => checkpoint_tau(&ckpt)?,
    };
    let result = assess_trace(&ckpt, &trace, tau, a.stride)?;
    if let Some(w) = &result.scores.warning {
        eprintln!("warning: {}: {w}", trace.trace_id);
    }
    write_atomic(&a.out, track_csv(&trace, &result.sample_track).as_bytes())?;
    if let Some(path) = &a.scores {
        write_json(Some(path), &to_json(&result.scores))?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let traces = a.data.load(SubsetArg::Test)?;
    let (rule, tau) = match (a.rule, a.tau) {
        (RuleArg::Manual, Some(t)) => (CutoffRule::Manual, Some(check_tau(t)?)),
        (RuleArg::Manual, None) => return Err(CliError::Usage("--rule manual needs --tau".into())),
        (_, Some(_)) => return Err(CliError::Usage("--tau only applies to --rule manual".into())),
        (RuleArg::TwoSigma, None) => (CutoffRule::TwoSigma, None),
        (RuleArg::YoudenMax, None) => (CutoffRule::YoudenMax, None),
    };
    let (report, roc) = evaluate(&ckpt, &traces, a.stride, rule, tau)?;
    if let (Some(path), Some(roc)) = (&a.roc, &roc) {
        write_atomic(path, roc_csv(roc).as_bytes())?;
    } else if a.roc.is_some() {
        eprintln!("warning: single-class labels; no ROC curve written");
    }
    let mut value = to_json(&report);
    value["tau"] = tau_json(report.tau);
    write_json(a.out.as_deref(), &value)
}

fn tune(a: TuneArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let traces = a.data.load(SubsetArg::Val)?;
    let scores = traces
        .iter()
        .map(|t| score_trace(&ckpt, t, a.stride))
        .collect::<Result<Vec<_>, _>>()?;
    let (res, labels) = pooled_scores(&scores)?;
    let conventional = youden_max(&res, &labels, JFormula::Conventional).ok();
    let printed = youden_max(&res, &labels, JFormula::Predictive).ok();
    write_json(
        a.out.as_deref(),
        &json!({
            "two_sigma": checkpoint_tau(&ckpt)?,
            "youden_max": conventional,
            "youden_max_predictive": printed,
            "n_windows": res.len(),
        }),
    )
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let reports = reference_suite(a.seed)?;
    let mut failed = 0;
    for r in &reports {
        let ok = r.max_rel_error < a.tolerance;
        failed += usize::from(!ok);
        println!(
            "{} {}: {} params, max rel error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
            if ok { "PASS" } else { "FAIL" },
            r.label,
            r.n_params,
            r.max_rel_error,
            r.worst_param,
            r.analytic,
            r.numeric
        );
    }
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} gradient checks exceed {}", a.tolerance)));
    }
    Ok(())
}

fn export(a: ExportArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let traces = a.data.load(SubsetArg::Test)?;
    let tau = match a.tau {
        Some(t) => check_tau(t)?,
        None => checkpoint_tau(&ckpt)?,
    };
    let scores = traces
        .iter()
        .map(|t| score_trace(&ckpt, t, a.stride))
        .collect::<Result<Vec<_>, _>>()?;
    let items: Vec<_> = traces.iter().zip(&scores).collect();
    let export = export_pseudolabels(&items, tau, &a.out)?;
    eprintln!(
        "wrote {} traces and {} review anchors to {}",
        export.files.len(),
        export.anchors.len(),
        a.out.display()
    );
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let state = AppState::open(ServiceConfig {
        data_dir: a.data_dir,
        checkpoint: a.checkpoint,
        eval_stride: a.eval_stride,
    })?;
    let addr = std::net::SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    runtime.block_on(cvsqa_server::serve(state, addr))?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Assess(a) => assess(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::TuneCutoff(a) => tune(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
