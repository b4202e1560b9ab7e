//! Forward pass with recorded activations and exact reverse-mode gradients.

use super::lstm::{axpy, matvec_add, matvec_t_add, outer_add, step_backward, step_forward, LstmGrad};
use super::{LayerSlots, LossParts, SeqVaeParams};
use crate::error::{Error, Result};

/// Activations of a stacked LSTM over one sequence.
#[derive(Debug, Default, Clone)]
struct StackTape {
    layers: usize,
    hidden: usize,
    steps: usize,
    h0: Vec<f64>,
    c0: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

impl StackTape {
    fn reset(&mut self, layers: usize, hidden: usize, steps: usize) {
        self.layers = layers;
        self.hidden = hidden;
        self.steps = steps;
        self.h0.resize(layers * hidden, 0.0);
        self.c0.resize(layers * hidden, 0.0);
        self.gates.resize(layers * steps * 4 * hidden, 0.0);
        self.c.resize(layers * steps * hidden, 0.0);
        self.h.resize(layers * steps * hidden, 0.0);
    }

    fn at(&self, l: usize, t: usize) -> usize {
        (l * self.steps + t) * self.hidden
    }

    fn h_at(&self, l: usize, t: usize) -> &[f64] {
        let i = self.at(l, t);
        &self.h[i..i + self.hidden]
    }

    fn c_at(&self, l: usize, t: usize) -> &[f64] {
        let i = self.at(l, t);
        &self.c[i..i + self.hidden]
    }

    fn prev_h(&self, l: usize, t: usize) -> &[f64] {
        if t == 0 {
            &self.h0[l * self.hidden..(l + 1) * self.hidden]
        } else {
            self.h_at(l, t - 1)
        }
    }

    fn prev_c(&self, l: usize, t: usize) -> &[f64] {
        if t == 0 {
            &self.c0[l * self.hidden..(l + 1) * self.hidden]
        } else {
            self.c_at(l, t - 1)
        }
    }

    fn final_h(&self, l: usize) -> &[f64] {
        self.h_at(l, self.steps - 1)
    }

    fn final_c(&self, l: usize) -> &[f64] {
        self.c_at(l, self.steps - 1)
    }
}

/// Reusable buffers for [`forward_backward`].
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    enc: StackTape,
    dec: StackTape,
    pred: StackTape,
    summary: Vec<f64>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
    z: Vec<f64>,
    hz: Vec<f64>,
    y: Vec<f64>,
    d_top: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

fn forward_stack(slots: &[LayerSlots], values: &[f64], inputs: Option<&[f64]>, tape: &mut StackTape) {
    let hd = tape.hidden;
    let mut nh = vec![0.0; hd];
    let mut nc = vec![0.0; hd];
    let mut gates = vec![0.0; 4 * hd];
    let mut below = vec![0.0; hd];
    for t in 0..tape.steps {
        for (l, s) in slots.iter().enumerate() {
            let layer = s.view(values);
            let x = if l == 0 {
                inputs.map(|x| &x[t * s.input_dim..(t + 1) * s.input_dim])
            } else {
                below.copy_from_slice(tape.h_at(l - 1, t));
                Some(&below[..])
            };
            step_forward(&layer, x, tape.prev_h(l, t), tape.prev_c(l, t), &mut gates, &mut nc, &mut nh);
            let i = tape.at(l, t);
            tape.gates[4 * i..4 * (i + hd)].copy_from_slice(&gates);
            tape.c[i..i + hd].copy_from_slice(&nc);
            tape.h[i..i + hd].copy_from_slice(&nh);
        }
    }
}

/// Splits the gradient buffer into per-layer sinks for one stack.
fn stack_grads<'a>(grad: &'a mut [f64], slots: &[LayerSlots]) -> Vec<LstmGrad<'a>> {
    let mut out = Vec::with_capacity(slots.len());
    let mut rest = grad;
    let mut consumed = 0;
    for s in slots {
        let (_, tail) = rest.split_at_mut(s.start - consumed);
        let (w, tail) = tail.split_at_mut(s.w_len());
        let (u, tail) = tail.split_at_mut(s.u_len());
        let (b, tail) = tail.split_at_mut(s.b_len());
        out.push(LstmGrad { w, u, b });
        rest = tail;
        consumed = s.end();
    }
    out
}

/// Backpropagates through a recorded stack.
///
/// `d_top` holds per-step gradients on the top layer's hidden state (or is
/// empty), `dh`/`dc` the gradients on the final states (`L × hidden`). On
/// return `dh`/`dc` hold the gradients on the initial states.
#[allow(clippy::too_many_arguments)]
fn backward_stack(
    slots: &[LayerSlots],
    values: &[f64],
    grad: &mut [f64],
    inputs: Option<&[f64]>,
    tape: &StackTape,
    d_top: &[f64],
    dh: &mut [f64],
    dc: &mut [f64],
) {
    let hd = tape.hidden;
    let top = tape.layers - 1;
    let mut grads = stack_grads(grad, slots);
    let mut da = vec![0.0; 4 * hd];
    let mut dx_below = vec![0.0; hd];
    for t in (0..tape.steps).rev() {
        for l in (0..tape.layers).rev() {
            let s = &slots[l];
            let layer = s.view(values);
            let dh_l = &mut dh[l * hd..(l + 1) * hd];
            if l == top {
                if !d_top.is_empty() {
                    axpy(dh_l, 1.0, &d_top[t * hd..(t + 1) * hd]);
                }
            } else {
                axpy(dh_l, 1.0, &dx_below);
            }
            let x = if l == 0 {
                inputs.map(|x| &x[t * s.input_dim..(t + 1) * s.input_dim])
            } else {
                Some(tape.h_at(l - 1, t))
            };
            let i = tape.at(l, t);
            dx_below.iter_mut().for_each(|v| *v = 0.0);
            let dx = (l > 0).then_some(&mut dx_below[..]);
            step_backward(
                &layer,
                &mut grads[l],
                x,
                tape.prev_h(l, t),
                tape.prev_c(l, t),
                &tape.gates[4 * i..4 * (i + hd)],
                &tape.c[i..i + hd],
                dh_l,
                &mut dc[l * hd..(l + 1) * hd],
                dx,
                &mut da,
            );
        }
    }
}

/// Loss of one window, accumulating `scale · ∂loss/∂θ` into `grad`.
///
/// `eps` is the fixed latent noise; it is treated as a constant.
pub fn forward_backward(
    params: &SeqVaeParams,
    input: &[f64],
    future: &[f64],
    eps: &[f64],
    grad: &mut [f64],
    scale: f64,
    ws: &mut Workspace,
) -> Result<LossParts> {
    let cfg = params.config;
    let layout = params.layout();
    let values = params.values();
    let (hd, nl, dim) = (cfg.hidden, cfg.layers, cfg.data_dim);
    if input.len() != cfg.r * dim || future.len() != cfg.p * dim || eps.len() != cfg.latent {
        return Err(Error::Shape("window does not match model configuration".into()));
    }
    if grad.len() != params.len() {
        return Err(Error::Shape("gradient buffer does not match parameters".into()));
    }

    // Encoder.
    ws.enc.reset(nl, hd, cfg.r);
    ws.enc.h0.fill(0.0);
    ws.enc.c0.fill(0.0);
    forward_stack(&layout.encoder, values, Some(input), &mut ws.enc);
    ws.summary.clear();
    for l in 0..nl {
        ws.summary.extend_from_slice(ws.enc.final_h(l));
    }
    for l in 0..nl {
        ws.summary.extend_from_slice(ws.enc.final_c(l));
    }

    // Latent heads.
    let mu_head = layout.mu.view(values);
    let lv_head = layout.logvar.view(values);
    ws.mu = mu_head.apply(&ws.summary);
    ws.logvar = lv_head.apply(&ws.summary);
    ws.z.clear();
    ws.z.extend(
        ws.mu
            .iter()
            .zip(&ws.logvar)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e),
    );
    ws.hz = layout.z.view(values).apply(&ws.z);

    // Reconstruction decoder.
    ws.dec.reset(nl, hd, cfg.r);
    ws.dec.h0.copy_from_slice(&ws.hz);
    for l in 0..nl {
        ws.dec.c0[l * hd..(l + 1) * hd].copy_from_slice(ws.enc.final_c(l));
    }
    forward_stack(&layout.decoder_recon, values, None, &mut ws.dec);

    let mut recon = 0.0;
    ws.d_top.clear();
    ws.d_top.resize(cfg.r * hd, 0.0);
    {
        let out = &layout.out_recon;
        let w = &values[out.w()];
        let b = &values[out.b()];
        for t in 0..cfg.r {
            ws.y.clear();
            ws.y.extend_from_slice(b);
            matvec_add(&mut ws.y, w, ws.dec.h_at(nl - 1, t));
            // Step t reconstructs input step r-1-t.
            let target = &input[(cfg.r - 1 - t) * dim..(cfg.r - t) * dim];
            for (yi, ti) in ws.y.iter_mut().zip(target) {
                let d = *yi - ti;
                recon += d * d;
                *yi = 2.0 * d * scale;
            }
            let h_top = ws.dec.h_at(nl - 1, t);
            outer_add(&mut grad[out.w()], &ws.y, h_top);
            axpy(&mut grad[out.b()], 1.0, &ws.y);
            matvec_t_add(&mut ws.d_top[t * hd..(t + 1) * hd], w, &ws.y);
        }
    }

    // Prediction decoder.
    let mut pred = 0.0;
    if layout.out_pred.is_some() {
        ws.pred.reset(nl, hd, cfg.p);
        for l in 0..nl {
            ws.pred.h0[l * hd..(l + 1) * hd].copy_from_slice(ws.enc.final_h(l));
            ws.pred.c0[l * hd..(l + 1) * hd].copy_from_slice(ws.enc.final_c(l));
        }
        forward_stack(&layout.decoder_pred, values, None, &mut ws.pred);
    }

    let kl = super::kl_term(&ws.mu, &ws.logvar);

    // Backward: reconstruction decoder.
    let mut dh_dec = vec![0.0; nl * hd];
    let mut dc_dec = vec![0.0; nl * hd];
    backward_stack(
        &layout.decoder_recon,
        values,
        grad,
        None,
        &ws.dec,
        &ws.d_top,
        &mut dh_dec,
        &mut dc_dec,
    );

    // FC_Z and the reparameterization.
    let zs = &layout.z;
    outer_add(&mut grad[zs.w()], &dh_dec, &ws.z);
    axpy(&mut grad[zs.b()], 1.0, &dh_dec);
    let mut dz = vec![0.0; cfg.latent];
    matvec_t_add(&mut dz, &values[zs.w()], &dh_dec);
    let mut dmu = vec![0.0; cfg.latent];
    let mut dlv = vec![0.0; cfg.latent];
    for i in 0..cfg.latent {
        let std = (0.5 * ws.logvar[i]).exp();
        dmu[i] = dz[i] + scale * ws.mu[i];
        dlv[i] = dz[i] * eps[i] * 0.5 * std + scale * 0.5 * (ws.logvar[i].exp() - 1.0);
    }
    let mut dsum = vec![0.0; cfg.summary_dim()];
    for (slots, d) in [(&layout.mu, &dmu), (&layout.logvar, &dlv)] {
        outer_add(&mut grad[slots.w()], d, &ws.summary);
        axpy(&mut grad[slots.b()], 1.0, d);
        matvec_t_add(&mut dsum, &values[slots.w()], d);
    }

    // Encoder final-state gradients: heads + reconstruction cell seeds.
    let mut dh_enc = dsum[..nl * hd].to_vec();
    let mut dc_enc = dsum[nl * hd..].to_vec();
    axpy(&mut dc_enc, 1.0, &dc_dec);

    // Prediction decoder.
    if let Some(out) = &layout.out_pred {
        ws.d_top.clear();
        ws.d_top.resize(cfg.p * hd, 0.0);
        let w = &values[out.w()];
        let b = &values[out.b()];
        for t in 0..cfg.p {
            ws.y.clear();
            ws.y.extend_from_slice(b);
            matvec_add(&mut ws.y, w, ws.pred.h_at(nl - 1, t));
            let target = &future[t * dim..(t + 1) * dim];
            for (yi, ti) in ws.y.iter_mut().zip(target) {
                let d = *yi - ti;
                pred += d * d;
                *yi = 2.0 * d * scale;
            }
            outer_add(&mut grad[out.w()], &ws.y, ws.pred.h_at(nl - 1, t));
            axpy(&mut grad[out.b()], 1.0, &ws.y);
            matvec_t_add(&mut ws.d_top[t * hd..(t + 1) * hd], w, &ws.y);
        }
        let mut dh_p = vec![0.0; nl * hd];
        let mut dc_p = vec![0.0; nl * hd];
        backward_stack(
            &layout.decoder_pred,
            values,
            grad,
            None,
            &ws.pred,
            &ws.d_top,
            &mut dh_p,
            &mut dc_p,
        );
        axpy(&mut dh_enc, 1.0, &dh_p);
        axpy(&mut dc_enc, 1.0, &dc_p);
    }

    // Encoder.
    ws.scratch.clear();
    backward_stack(
        &layout.encoder,
        values,
        grad,
        Some(input),
        &ws.enc,
        &ws.scratch,
        &mut dh_enc,
        &mut dc_enc,
    );

    let parts = LossParts {
        total: recon + pred + kl,
        recon,
        pred,
        kl,
    };
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{loss, LstmVariant, ModelConfig};

    fn configs() -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for variant in [LstmVariant::CellGated, LstmVariant::Standard] {
            out.push(ModelConfig {
                hidden: 3,
                latent: 3,
                variant,
                ..ModelConfig::point(4, 2)
            });
            out.push(ModelConfig {
                hidden: 3,
                latent: 2,
                data_dim: 6,
                variant,
                ..ModelConfig::cycle(2, 1)
            });
            out.push(ModelConfig {
                hidden: 2,
                latent: 2,
                layers: 3,
                variant,
                ..ModelConfig::point(3, 0)
            });
        }
        out
    }

    fn window(cfg: &ModelConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let f = |n: usize, k: f64| (0..n).map(|i| ((i as f64 + k) * 0.73).sin()).collect::<Vec<_>>();
        (f(cfg.r * cfg.data_dim, 0.0), f(cfg.p * cfg.data_dim, 5.0), f(cfg.latent, 9.0))
    }

    #[test]
    fn loss_matches_inference_path() {
        for cfg in configs() {
            let params = SeqVaeParams::init(cfg, 11).unwrap();
            let (x, y, e) = window(&cfg);
            let mut g = vec![0.0; params.len()];
            let a = forward_backward(&params, &x, &y, &e, &mut g, 1.0, &mut Workspace::new()).unwrap();
            let b = loss(&params, &x, &y, &e).unwrap();
            assert!((a.total - b.total).abs() < 1e-12, "{a:?} {b:?}");
            assert!((a.recon - b.recon).abs() < 1e-12);
            assert!((a.pred - b.pred).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_is_linear() {
        let cfg = configs()[0];
        let params = SeqVaeParams::init(cfg, 2).unwrap();
        let (x, y, e) = window(&cfg);
        let mut g1 = vec![0.0; params.len()];
        let mut g2 = vec![0.0; params.len()];
        let mut ws = Workspace::new();
        forward_backward(&params, &x, &y, &e, &mut g1, 1.0, &mut ws).unwrap();
        forward_backward(&params, &x, &y, &e, &mut g2, 0.25, &mut ws).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((0.25 * a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }
}
