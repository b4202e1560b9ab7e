//! Mini-batch training of the sequence VAE.

mod checkpoint;
mod optim;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};
pub use optim::{adamw_step, one_cycle_lr, AdamWState, OneCycle};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::{fit_two_sigma, residuals, Norm};
use crate::error::{Error, Result};
use crate::model::{forward_backward, LossParts, Mode, ModelConfig, SeqVaeParams, Workspace};
use crate::preprocess::WindowSet;
use crate::signal::NormStats;
use crate::synth::trace_seed;

/// Examples per gradient work unit. Partial gradients are summed in unit
/// order, so results do not depend on the number of threads.
pub const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainFilter {
    /// Every window; labels are never read.
    #[default]
    All,
    /// Only windows whose input contains no motion-labeled step.
    PositiveOnly,
}

impl std::str::FromStr for TrainFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TrainFilter::All),
            "positive_only" | "positive-only" => Ok(TrainFilter::PositiveOnly),
            other => Err(Error::Config(format!("unknown train filter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Residual norm used for the fitted cut-off and later assessment.
    pub norm: Norm,
    pub train_filter: TrainFilter,
    /// Step between consecutive training windows.
    pub stride: usize,
    pub schedule: OneCycle,
}

impl TrainConfig {
    /// Batch 1024, learning rate 0.01, weight decay 0.01, 100 epochs.
    pub fn point(r: usize, p: usize) -> Self {
        Self {
            model: ModelConfig::point(r, p),
            batch_size: 1024,
            lr_max: 0.01,
            weight_decay: 0.01,
            epochs: 100,
            seed: 0,
            norm: Norm::L2,
            train_filter: TrainFilter::All,
            stride: 1,
            schedule: OneCycle::default(),
        }
    }

    /// Batch 128, learning rate 0.001, weight decay 0.01, 100 epochs.
    pub fn cycle(r: usize, p: usize) -> Self {
        Self {
            model: ModelConfig::cycle(r, p),
            batch_size: 128,
            lr_max: 0.001,
            ..Self::point(r, p)
        }
    }

    pub fn for_mode(mode: Mode, r: usize, p: usize) -> Self {
        match mode {
            Mode::Point => Self::point(r, p),
            Mode::Cycle => Self::cycle(r, p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.stride == 0 {
            return Err(Error::Config("batch size and stride must be positive".into()));
        }
        if !(self.lr_max.is_finite() && self.lr_max > 0.0) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be positive and weight decay nonnegative".into()));
        }
        Ok(())
    }

    fn seed_for(&self, purpose: u64) -> u64 {
        trace_seed(self.seed, purpose)
    }
}

/// One training example: a window and its latent noise.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub input: &'a [f64],
    pub future: &'a [f64],
    pub eps: &'a [f64],
    /// Reported in errors.
    pub index: usize,
}

/// Mean loss and its gradient over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub loss: LossParts,
    pub grad: Vec<f64>,
}

fn add_parts(a: &mut LossParts, b: &LossParts) {
    a.total += b.total;
    a.recon += b.recon;
    a.pred += b.pred;
    a.kl += b.kl;
}

/// Exact gradient of the mean loss over `batch`.
pub fn batch_gradient(params: &SeqVaeParams, batch: &[Example<'_>]) -> Result<BatchGrad> {
    if batch.is_empty() {
        return Err(Error::Empty("batch has no examples"));
    }
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Result<(LossParts, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ws = Workspace::new();
            let mut grad = vec![0.0; params.len()];
            let mut sum = LossParts::default();
            for ex in chunk {
                let parts = forward_backward(params, ex.input, ex.future, ex.eps, &mut grad, scale, &mut ws)?;
                if !parts.total.is_finite() {
                    return Err(Error::NonFinite { example: ex.index });
                }
                add_parts(&mut sum, &parts);
            }
            Ok((sum, grad))
        })
        .collect();
    let mut loss = LossParts::default();
    let mut grad = vec![0.0; params.len()];
    for part in partials {
        let (l, g) = part?;
        add_parts(&mut loss, &l);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { example: batch[0].index });
    }
    loss.total *= scale;
    loss.recon *= scale;
    loss.pred *= scale;
    loss.kl *= scale;
    Ok(BatchGrad { loss, grad })
}

/// Standard-normal latent noise for window `index` in `epoch`.
pub fn latent_noise(seed: u64, epoch: usize, index: usize, latent: usize) -> Vec<f64> {
    let key = trace_seed(seed, epoch as u64).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(trace_seed(key, index as u64));
    (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Parameters and optimizer state advanced by scheduled AdamW steps.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: SeqVaeParams,
    pub optimizer: AdamWState,
    pub total_steps: usize,
    pub steps_taken: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, total_steps: usize) -> Result<Self> {
        config.validate()?;
        let params = SeqVaeParams::init(config.model, config.seed_for(1))?;
        let optimizer = AdamWState::new(params.len());
        Ok(Self {
            config,
            params,
            optimizer,
            total_steps,
            steps_taken: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.schedule.lr(self.steps_taken, self.total_steps, self.config.lr_max)
    }

    /// One optimizer step on `batch`; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[Example<'_>]) -> Result<LossParts> {
        let BatchGrad { loss, grad } = batch_gradient(&self.params, batch)?;
        let lr = self.learning_rate();
        adamw_step(&mut self.optimizer, self.params.values_mut(), &grad, lr, self.config.weight_decay);
        self.steps_taken += 1;
        if !self.params.all_finite() {
            return Err(Error::NonFinite { example: batch[0].index });
        }
        Ok(loss)
    }
}

/// Trains on `windows` (already normalized with `norm_stats`) and fits the
/// two-sigma cut-off on the training residuals.
pub fn train(windows: &WindowSet, norm_stats: NormStats, config: &TrainConfig) -> Result<Checkpoint> {
    train_with(windows, norm_stats, config, |_, _| {})
}

/// [`train`] with a callback receiving each epoch's index and mean loss.
pub fn train_with(
    windows: &WindowSet,
    norm_stats: NormStats,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Checkpoint> {
    config.validate()?;
    let cfg = &config.model;
    if windows.dim != cfg.data_dim || windows.r != cfg.r || windows.p != cfg.p {
        return Err(Error::Shape(format!(
            "windows are {}x({}+{}), model expects {}x({}+{})",
            windows.dim, windows.r, windows.p, cfg.data_dim, cfg.r, cfg.p
        )));
    }
    let filtered;
    let windows = match config.train_filter {
        TrainFilter::All => windows,
        TrainFilter::PositiveOnly => {
            let mut w = windows.clone();
            w.retain_positive();
            filtered = w;
            &filtered
        }
    };
    if windows.is_empty() {
        return Err(Error::Empty("no training windows"));
    }
    let n = windows.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let mut trainer = Trainer::new(*config, config.epochs * batches_per_epoch)?;
    let shuffle_seed = config.seed_for(2);
    let noise_seed = config.seed_for(3);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let noise: Vec<Vec<f64>> = batch_idx
                .iter()
                .map(|&i| latent_noise(noise_seed, epoch, i, cfg.latent))
                .collect();
            let batch: Vec<Example<'_>> = batch_idx
                .iter()
                .zip(&noise)
                .map(|(&i, eps)| {
                    let w = windows.windows[i];
                    Example {
                        input: windows.input(w),
                        future: windows.future(w),
                        eps,
                        index: i,
                    }
                })
                .collect();
            let loss = trainer.step(&batch)?;
            epoch_loss += loss.total * batch.len() as f64;
        }
        let mean = epoch_loss / n as f64;
        loss_history.push(mean);
        on_epoch(epoch, mean);
    }
    let params = trainer.params;
    let train_residuals = residuals(&params, windows, config.norm)?;
    let tau = fit_two_sigma(&train_residuals)?;
    Ok(Checkpoint {
        train: *config,
        params,
        norm: norm_stats,
        tau: Some(tau),
        loss_history,
        train_residuals,
    })
}
