//! Recurrent variational auto-encoder over CVS sequences.
//!
//! A stacked LSTM encoder summarizes a window into its final hidden and cell
//! states `h = [H¹..H^L, C¹..C^L]`. Two affine heads map `h` to the mean and
//! log-variance of a diagonal Gaussian; a sample `Z` is projected back to
//! hidden-state shape and, together with the encoder cell states, seeds the
//! reconstruction decoder. That decoder runs on zero inputs and estimates the
//! window in reverse order. A second decoder, seeded with `h` directly,
//! forecasts the steps that follow the window. Each decoder's top hidden state
//! is mapped to data space by its own affine output projection.
//!
//! All learnable values live in one flat vector described by a [`Layout`], so
//! that optimizers, gradient checks and checkpoints can treat the model as a
//! list of named tensors.

pub mod gradcheck;
mod lstm;
mod tape;

pub use lstm::{lstm_cell_step, LstmLayer, LstmLayerParams, LstmState, LstmVariant};
pub use tape::{forward_backward, Workspace};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::CYCLE_DIM;
use lstm::{matvec_add, step_forward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Windows of raw CVS samples.
    Point,
    /// Windows of embedded heartbeat cycles.
    Cycle,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Point => "point",
            Mode::Cycle => "cycle",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(Mode::Point),
            "cycle" => Ok(Mode::Cycle),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Architecture of a [`SeqVaeParams`] set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    /// Size of one sequence step: 1 for points, the embedding size for cycles.
    pub data_dim: usize,
    /// Input steps per window.
    pub r: usize,
    /// Future steps forecast by the prediction decoder; 0 disables it.
    pub p: usize,
    pub hidden: usize,
    pub latent: usize,
    pub layers: usize,
    pub variant: LstmVariant,
}

impl ModelConfig {
    pub fn point(r: usize, p: usize) -> Self {
        Self {
            mode: Mode::Point,
            data_dim: 1,
            r,
            p,
            hidden: 32,
            latent: 32,
            layers: 2,
            variant: LstmVariant::CellGated,
        }
    }

    pub fn cycle(r: usize, p: usize) -> Self {
        Self {
            mode: Mode::Cycle,
            data_dim: CYCLE_DIM,
            ..Self::point(r, p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.r == 0 {
            return bad("input length must be at least 1");
        }
        if self.hidden == 0 || self.latent == 0 || self.layers == 0 || self.data_dim == 0 {
            return bad("hidden, latent, layers and data_dim must be positive");
        }
        if self.mode == Mode::Point && self.data_dim != 1 {
            return bad("point mode requires data_dim = 1");
        }
        Ok(())
    }

    /// Length of the flattened encoder summary `h`.
    pub fn summary_dim(&self) -> usize {
        2 * self.layers * self.hidden
    }
}

/// Position of one LSTM layer inside the flat parameter vector: `[w | u | b]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlots {
    pub start: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub variant: LstmVariant,
}

impl LayerSlots {
    pub fn w_len(&self) -> usize {
        4 * self.hidden * self.input_dim
    }

    pub fn u_len(&self) -> usize {
        self.variant.recurrent_blocks() * self.hidden * self.hidden
    }

    pub fn b_len(&self) -> usize {
        4 * self.hidden
    }

    pub fn end(&self) -> usize {
        self.start + self.w_len() + self.u_len() + self.b_len()
    }

    fn w(&self) -> Range<usize> {
        self.start..self.start + self.w_len()
    }

    fn u(&self) -> Range<usize> {
        let s = self.start + self.w_len();
        s..s + self.u_len()
    }

    fn b(&self) -> Range<usize> {
        let s = self.start + self.w_len() + self.u_len();
        s..s + self.b_len()
    }

    pub fn view<'a>(&self, values: &'a [f64]) -> LstmLayer<'a> {
        LstmLayer {
            w: &values[self.w()],
            u: &values[self.u()],
            b: &values[self.b()],
            input_dim: self.input_dim,
            hidden: self.hidden,
            variant: self.variant,
        }
    }
}

/// Position of an affine map `y = W x + b` with `W` of shape `rows × cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineSlots {
    pub start: usize,
    pub rows: usize,
    pub cols: usize,
}

impl AffineSlots {
    pub fn end(&self) -> usize {
        self.start + self.rows * self.cols + self.rows
    }

    pub(crate) fn w(&self) -> Range<usize> {
        self.start..self.start + self.rows * self.cols
    }

    pub(crate) fn b(&self) -> Range<usize> {
        let s = self.start + self.rows * self.cols;
        s..s + self.rows
    }

    pub fn view<'a>(&self, values: &'a [f64]) -> Affine<'a> {
        Affine {
            w: &values[self.w()],
            b: &values[self.b()],
            rows: self.rows,
            cols: self.cols,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Affine<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

impl Affine<'_> {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.to_vec();
        matvec_add(&mut y, self.w, x);
        y
    }
}

/// Named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub encoder: Vec<LayerSlots>,
    pub decoder_recon: Vec<LayerSlots>,
    pub decoder_pred: Vec<LayerSlots>,
    pub mu: AffineSlots,
    pub logvar: AffineSlots,
    pub z: AffineSlots,
    pub out_recon: AffineSlots,
    pub out_pred: Option<AffineSlots>,
    pub total: usize,
    pub tensors: Vec<TensorInfo>,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut at = 0usize;
        let h = config.hidden;
        let stack = |name: &str, at: &mut usize, tensors: &mut Vec<TensorInfo>| -> Vec<LayerSlots> {
            (0..config.layers)
                .map(|k| {
                    let slots = LayerSlots {
                        start: *at,
                        input_dim: if k == 0 { config.data_dim } else { h },
                        hidden: h,
                        variant: config.variant,
                    };
                    let rb = config.variant.recurrent_blocks();
                    let mut off = *at;
                    for (part, shape) in [
                        ("w", vec![4 * h, slots.input_dim]),
                        ("u", vec![rb * h, h]),
                        ("b", vec![4 * h]),
                    ] {
                        let info = TensorInfo {
                            name: format!("{name}.{k}.{part}"),
                            shape,
                            offset: off,
                        };
                        off += info.len();
                        tensors.push(info);
                    }
                    *at = slots.end();
                    slots
                })
                .collect()
        };
        let encoder = stack("encoder", &mut at, &mut tensors);
        let decoder_recon = stack("decoder_recon", &mut at, &mut tensors);
        let decoder_pred = if config.p > 0 {
            stack("decoder_pred", &mut at, &mut tensors)
        } else {
            Vec::new()
        };
        let mut affine = |name: &str, rows: usize, cols: usize, at: &mut usize| -> AffineSlots {
            let slots = AffineSlots { start: *at, rows, cols };
            tensors.push(TensorInfo {
                name: format!("{name}.w"),
                shape: vec![rows, cols],
                offset: slots.start,
            });
            tensors.push(TensorInfo {
                name: format!("{name}.b"),
                shape: vec![rows],
                offset: slots.start + rows * cols,
            });
            *at = slots.end();
            slots
        };
        let summary = config.summary_dim();
        let mu = affine("heads.mu", config.latent, summary, &mut at);
        let logvar = affine("heads.logvar", config.latent, summary, &mut at);
        let z = affine("heads.z", config.layers * h, config.latent, &mut at);
        let out_recon = affine("out_recon", config.data_dim, h, &mut at);
        let out_pred = (config.p > 0).then(|| affine("out_pred", config.data_dim, h, &mut at));
        Self {
            encoder,
            decoder_recon,
            decoder_pred,
            mu,
            logvar,
            z,
            out_recon,
            out_pred,
            total: at,
            tensors,
        }
    }
}

/// All learnable weights of the network plus its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqVaeParams {
    pub config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

/// Borrowed latent heads: `mu`, `logvar` (from `h`) and `z` (latent to hidden states).
#[derive(Debug, Clone, Copy)]
pub struct LatentHeads<'a> {
    pub mu: Affine<'a>,
    pub logvar: Affine<'a>,
    pub z: Affine<'a>,
}

impl SeqVaeParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let values = vec![0.0; layout.total];
        Ok(Self { config, layout, values })
    }

    /// Weight matrices uniform in `±1/sqrt(hidden)`, biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in params.layout.tensors.clone() {
            if t.shape.len() == 2 {
                for v in &mut params.values[t.offset..t.offset + t.len()] {
                    *v = rng.gen_range(-bound..=bound);
                }
            }
        }
        Ok(params)
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        if values.len() != params.values.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                params.values.len(),
                values.len()
            )));
        }
        params.values = values;
        Ok(params)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        Some(&self.values[t.offset..t.offset + t.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?.clone();
        Some(&mut self.values[t.offset..t.offset + t.len()])
    }

    pub fn heads(&self) -> LatentHeads<'_> {
        LatentHeads {
            mu: self.layout.mu.view(&self.values),
            logvar: self.layout.logvar.view(&self.values),
            z: self.layout.z.view(&self.values),
        }
    }

    pub(crate) fn stack<'a>(&'a self, slots: &'a [LayerSlots]) -> Vec<LstmLayer<'a>> {
        slots.iter().map(|s| s.view(&self.values)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Final per-layer states of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl EncoderState {
    /// `[H¹, .., H^L, C¹, .., C^L]`
    pub fn flat(&self) -> Vec<f64> {
        self.h.iter().chain(&self.c).flatten().copied().collect()
    }

    /// `(hidden, 2L)`: one column per state vector.
    pub fn shape(&self) -> (usize, usize) {
        (self.h.first().map_or(0, Vec::len), self.h.len() + self.c.len())
    }
}

/// Runs a stack over `steps` inputs (`None` = zero inputs) from the given
/// initial states, returning the top-layer hidden state of every step and the
/// final states.
fn run_stack(
    layers: &[LstmLayer<'_>],
    inputs: Option<&[f64]>,
    steps: usize,
    h0: Vec<Vec<f64>>,
    c0: Vec<Vec<f64>>,
) -> (Vec<Vec<f64>>, EncoderState) {
    let hdim = layers[0].hidden;
    let mut h = h0;
    let mut c = c0;
    let mut gates = vec![0.0; 4 * hdim];
    let mut top = Vec::with_capacity(steps);
    let mut nh = vec![0.0; hdim];
    let mut nc = vec![0.0; hdim];
    for t in 0..steps {
        for (l, layer) in layers.iter().enumerate() {
            let below;
            let x = if l == 0 {
                inputs.map(|x| &x[t * layer.input_dim..(t + 1) * layer.input_dim])
            } else {
                below = h[l - 1].clone();
                Some(&below[..])
            };
            step_forward(layer, x, &h[l], &c[l], &mut gates, &mut nc, &mut nh);
            h[l].copy_from_slice(&nh);
            c[l].copy_from_slice(&nc);
        }
        top.push(h[layers.len() - 1].clone());
    }
    (top, EncoderState { h, c })
}

/// Encodes a window of `r` steps (flattened, `r × data_dim`).
pub fn encode(params: &SeqVaeParams, input: &[f64]) -> Result<EncoderState> {
    let cfg = &params.config;
    if input.is_empty() {
        return Err(Error::Empty("cannot encode an empty sequence"));
    }
    if input.len() % cfg.data_dim != 0 {
        return Err(Error::Shape(format!(
            "input length {} is not a multiple of data_dim {}",
            input.len(),
            cfg.data_dim
        )));
    }
    let steps = input.len() / cfg.data_dim;
    let zeros = vec![vec![0.0; cfg.hidden]; cfg.layers];
    let layers = params.stack(&params.layout.encoder);
    Ok(run_stack(&layers, Some(input), steps, zeros.clone(), zeros).1)
}

/// Gaussian latent draw via the reparameterization `Z = μ + exp(logvar/2) ⊙ ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn sample_latent(heads: &LatentHeads<'_>, h: &[f64], eps: &[f64]) -> Result<LatentSample> {
    if h.len() != heads.mu.cols {
        return Err(Error::Shape(format!("summary has {} values, expected {}", h.len(), heads.mu.cols)));
    }
    if eps.len() != heads.mu.rows {
        return Err(Error::Shape(format!("eps has {} values, expected {}", eps.len(), heads.mu.rows)));
    }
    let mu = heads.mu.apply(h);
    let logvar = heads.logvar.apply(h);
    let z = mu
        .iter()
        .zip(&logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Ok(LatentSample {
        mu,
        logvar,
        eps: eps.to_vec(),
        z,
    })
}

fn project_steps(out: &Affine<'_>, top: &[Vec<f64>]) -> Vec<f64> {
    top.iter().flat_map(|h| out.apply(h)).collect()
}

/// Reconstruction decoder: hidden states from `FC_Z(z)`, cell states from the
/// encoder, zero inputs for `r` steps. Estimates the window in reverse order.
pub fn decode_recon(params: &SeqVaeParams, z: &[f64], c_enc: &[Vec<f64>]) -> Vec<f64> {
    let cfg = &params.config;
    let hz = params.layout.z.view(&params.values).apply(z);
    let h0: Vec<Vec<f64>> = hz.chunks(cfg.hidden).map(<[f64]>::to_vec).collect();
    let layers = params.stack(&params.layout.decoder_recon);
    let (top, _) = run_stack(&layers, None, cfg.r, h0, c_enc.to_vec());
    project_steps(&params.layout.out_recon.view(&params.values), &top)
}

/// Prediction decoder seeded with the encoder states; empty when `p = 0`.
pub fn decode_pred(params: &SeqVaeParams, enc: &EncoderState) -> Vec<f64> {
    let cfg = &params.config;
    let Some(out) = &params.layout.out_pred else {
        return Vec::new();
    };
    let layers = params.stack(&params.layout.decoder_pred);
    let (top, _) = run_stack(&layers, None, cfg.p, enc.h.clone(), enc.c.clone());
    project_steps(&out.view(&params.values), &top)
}

/// `KL(N(μ, diag(exp(logvar))) ‖ N(0, I))`
pub fn kl_term(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub pred: f64,
    pub kl: f64,
}

fn check_window(cfg: &ModelConfig, input: &[f64], future: &[f64]) -> Result<()> {
    if input.len() != cfg.r * cfg.data_dim || future.len() != cfg.p * cfg.data_dim {
        return Err(Error::Shape(format!(
            "window has {}+{} values, model expects {}x{} + {}x{}",
            input.len(),
            future.len(),
            cfg.r,
            cfg.data_dim,
            cfg.p,
            cfg.data_dim
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Training objective of one window with latent noise `eps`.
pub fn loss(params: &SeqVaeParams, input: &[f64], future: &[f64], eps: &[f64]) -> Result<LossParts> {
    let cfg = &params.config;
    check_window(cfg, input, future)?;
    let enc = encode(params, input)?;
    let latent = sample_latent(&params.heads(), &enc.flat(), eps)?;
    let recon = decode_recon(params, &latent.z, &enc.c);
    let target = crate::preprocess::reverse_steps(input, cfg.data_dim);
    let recon = sq_dist(&recon, &target);
    let pred = if cfg.p > 0 {
        sq_dist(&decode_pred(params, &enc), future)
    } else {
        0.0
    };
    let kl = kl_term(&latent.mu, &latent.logvar);
    Ok(LossParts {
        total: recon + pred + kl,
        recon,
        pred,
        kl,
    })
}

/// Deterministic reconstruction (`ε = 0`) of a window, in reversed step order.
pub fn reconstruct(params: &SeqVaeParams, input: &[f64]) -> Result<Vec<f64>> {
    let cfg = &params.config;
    if input.len() != cfg.r * cfg.data_dim {
        return Err(Error::Shape(format!(
            "window has {} values, model expects {}",
            input.len(),
            cfg.r * cfg.data_dim
        )));
    }
    let enc = encode(params, input)?;
    let eps = vec![0.0; cfg.latent];
    let latent = sample_latent(&params.heads(), &enc.flat(), &eps)?;
    Ok(decode_recon(params, &latent.z, &enc.c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode, variant: LstmVariant) -> ModelConfig {
        let mut c = match mode {
            Mode::Point => ModelConfig::point(4, 2),
            Mode::Cycle => ModelConfig { data_dim: 6, ..ModelConfig::cycle(2, 1) },
        };
        c.variant = variant;
        c
    }

    #[test]
    fn default_shapes() {
        let params = SeqVaeParams::init(ModelConfig::point(200, 200), 1).unwrap();
        let input: Vec<f64> = (0..200).map(|k| (k as f64 * 0.1).sin()).collect();
        let enc = encode(&params, &input).unwrap();
        assert_eq!(enc.shape(), (32, 4));
        assert_eq!(enc.flat().len(), 128);
        assert_eq!(reconstruct(&params, &input).unwrap().len(), 200);
        assert_eq!(decode_pred(&params, &enc).len(), 200);
    }

    #[test]
    fn shape_contract_all_configs() {
        for mode in [Mode::Point, Mode::Cycle] {
            for variant in [LstmVariant::CellGated, LstmVariant::Standard] {
                let cfg = small(mode, variant);
                let params = SeqVaeParams::init(cfg, 3).unwrap();
                let input = vec![0.3; cfg.r * cfg.data_dim];
                let enc = encode(&params, &input).unwrap();
                assert_eq!(enc.shape(), (cfg.hidden, 2 * cfg.layers));
                let lat = sample_latent(&params.heads(), &enc.flat(), &vec![0.0; cfg.latent]).unwrap();
                assert_eq!(decode_recon(&params, &lat.z, &enc.c).len(), cfg.r * cfg.data_dim);
                assert_eq!(decode_pred(&params, &enc).len(), cfg.p * cfg.data_dim);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let params = SeqVaeParams::zeros(ModelConfig::point(5, 3)).unwrap();
        let input = [1.0, -2.0, 0.5, 3.0, 0.0];
        let enc = encode(&params, &input).unwrap();
        assert!(enc.flat().iter().all(|&v| v == 0.0));
        assert!(reconstruct(&params, &input).unwrap().iter().all(|&v| v == 0.0));
        assert!(decode_pred(&params, &enc).iter().all(|&v| v == 0.0));
        assert!(matches!(encode(&params, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn encoder_state_evolves() {
        let params = SeqVaeParams::init(ModelConfig::point(1, 0), 5).unwrap();
        let a = encode(&params, &[0.7]).unwrap();
        let b = encode(&params, &[0.7, 0.7]).unwrap();
        assert_ne!(a.flat(), b.flat());
    }

    #[test]
    fn latent_sampling() {
        let params = SeqVaeParams::init(ModelConfig::point(3, 0), 2).unwrap();
        let h: Vec<f64> = (0..128).map(|k| (k as f64).cos() * 0.1).collect();
        let zero = sample_latent(&params.heads(), &h, &[0.0; 32]).unwrap();
        assert_eq!(zero.z, zero.mu);

        let mut p = params.clone();
        p.tensor_mut("heads.logvar.w").unwrap().fill(0.0);
        let e: Vec<f64> = (0..32).map(|k| k as f64 - 16.0).collect();
        let s = sample_latent(&p.heads(), &h, &e).unwrap();
        for i in 0..32 {
            assert_eq!(s.z[i], s.mu[i] + e[i]);
        }
        assert_eq!(sample_latent(&p.heads(), &h, &e).unwrap(), s);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_term(&[0.0; 4], &[0.0; 4]), 0.0);
        assert!((kl_term(&[1.0], &[0.0]) - 0.5).abs() < 1e-12);
        assert!((kl_term(&[0.0], &[1.0]) - (std::f64::consts::E - 2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_without_prediction() {
        let params = SeqVaeParams::zeros(ModelConfig::point(4, 0)).unwrap();
        let l = loss(&params, &[0.0; 4], &[], &[0.0; 32]).unwrap();
        assert_eq!(l, LossParts::default());
        let l = loss(&params, &[1.0, 0.0, 0.0, 2.0], &[], &[0.0; 32]).unwrap();
        assert_eq!((l.recon, l.pred, l.kl, l.total), (5.0, 0.0, 0.0, 5.0));
        assert!(loss(&params, &[0.0; 3], &[], &[0.0; 32]).is_err());
    }

    #[test]
    fn layout_is_contiguous() {
        for cfg in [ModelConfig::point(200, 200), ModelConfig::cycle(2, 0)] {
            let layout = Layout::new(&cfg);
            let mut at = 0;
            for t in &layout.tensors {
                assert_eq!(t.offset, at, "{}", t.name);
                at += t.len();
            }
            assert_eq!(at, layout.total);
        }
    }
}
