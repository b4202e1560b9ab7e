//! LSTM cell kernels.
//!
//! Gate rows are stored in the order forget, input, output, candidate. In the
//! [`LstmVariant::CellGated`] form the three gates read the previous *cell* state
//! and the candidate has no recurrent term:
//!
//! ```text
//! F = σ(W_F x + U_F C' + b_F)     I, O likewise
//! C = F ⊙ C' + I ⊙ tanh(W_C x + b_C)
//! H = O ⊙ tanh(C)
//! ```
//!
//! [`LstmVariant::Standard`] feeds the previous hidden state to all four
//! pre-activations instead.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LstmVariant {
    #[default]
    CellGated,
    Standard,
}

impl LstmVariant {
    /// Number of gate blocks with a recurrent weight matrix.
    pub fn recurrent_blocks(self) -> usize {
        match self {
            LstmVariant::CellGated => 3,
            LstmVariant::Standard => 4,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four independent accumulators (fixed summation order).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[i] += Σ_j m[i, j] v[j]` for a row-major `m` with `v.len()` columns.
#[inline]
pub(crate) fn matvec_add(out: &mut [f64], m: &[f64], v: &[f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += dot(row, v);
    }
}

/// `out[j] += Σ_i m[i, j] g[i]`
#[inline]
pub(crate) fn matvec_t_add(out: &mut [f64], m: &[f64], g: &[f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(m.chunks_exact(cols)) {
        if *gi != 0.0 {
            axpy(out, *gi, row);
        }
    }
}

/// `m[i, j] += g[i] v[j]`
#[inline]
pub(crate) fn outer_add(m: &mut [f64], g: &[f64], v: &[f64]) {
    let cols = v.len();
    for (gi, row) in g.iter().zip(m.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            axpy(row, *gi, v);
        }
    }
}

/// Borrowed weights of one LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer<'a> {
    /// `4h × input_dim`
    pub w: &'a [f64],
    /// `k·h × h`, `k` = [`LstmVariant::recurrent_blocks`]
    pub u: &'a [f64],
    /// `4h`
    pub b: &'a [f64],
    pub input_dim: usize,
    pub hidden: usize,
    pub variant: LstmVariant,
}

/// Owned weights of one LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub input_dim: usize,
    pub hidden: usize,
    pub variant: LstmVariant,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize, variant: LstmVariant) -> Self {
        Self {
            w: vec![0.0; 4 * hidden * input_dim],
            u: vec![0.0; variant.recurrent_blocks() * hidden * hidden],
            b: vec![0.0; 4 * hidden],
            input_dim,
            hidden,
            variant,
        }
    }

    pub fn view(&self) -> LstmLayer<'_> {
        LstmLayer {
            w: &self.w,
            u: &self.u,
            b: &self.b,
            input_dim: self.input_dim,
            hidden: self.hidden,
            variant: self.variant,
        }
    }
}

/// Hidden and cell state of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// One forward step.
pub fn lstm_cell_step(layer: &LstmLayer<'_>, x: &[f64], prev: &LstmState) -> LstmState {
    let h = layer.hidden;
    let mut gates = vec![0.0; 4 * h];
    let mut next = LstmState::zeros(h);
    step_forward(layer, Some(x), &prev.h, &prev.c, &mut gates, &mut next.c, &mut next.h);
    next
}

/// Forward step writing activated gates `[F, I, O, G]`, the new cell and hidden
/// state. A `None` input is the zero vector.
#[inline]
pub(crate) fn step_forward(
    layer: &LstmLayer<'_>,
    x: Option<&[f64]>,
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c: &mut [f64],
    h: &mut [f64],
) {
    let n = layer.hidden;
    gates.copy_from_slice(layer.b);
    if let Some(x) = x {
        matvec_add(gates, layer.w, x);
    }
    let k = layer.variant.recurrent_blocks();
    let rec = match layer.variant {
        LstmVariant::CellGated => c_prev,
        LstmVariant::Standard => h_prev,
    };
    matvec_add(&mut gates[..k * n], layer.u, rec);
    for i in 0..n {
        let f = sigmoid(gates[i]);
        let ig = sigmoid(gates[n + i]);
        let o = sigmoid(gates[2 * n + i]);
        let g = gates[3 * n + i].tanh();
        gates[i] = f;
        gates[n + i] = ig;
        gates[2 * n + i] = o;
        gates[3 * n + i] = g;
        c[i] = f * c_prev[i] + ig * g;
        h[i] = o * c[i].tanh();
    }
}

/// Gradient sinks of one layer, laid out like [`LstmLayer`].
pub(crate) struct LstmGrad<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

/// Backward step. On entry `dh`/`dc` hold the gradient w.r.t. this step's
/// outputs; on exit they hold the gradient w.r.t. `h_prev`/`c_prev`.
/// `dx`, when given, receives the gradient w.r.t. the input (accumulated).
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn step_backward(
    layer: &LstmLayer<'_>,
    grad: &mut LstmGrad<'_>,
    x: Option<&[f64]>,
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &[f64],
    c: &[f64],
    dh: &mut [f64],
    dc: &mut [f64],
    dx: Option<&mut [f64]>,
    da: &mut [f64],
) {
    let n = layer.hidden;
    for i in 0..n {
        let f = gates[i];
        let ig = gates[n + i];
        let o = gates[2 * n + i];
        let g = gates[3 * n + i];
        let tc = c[i].tanh();
        let d_o = dh[i] * tc;
        let dct = dc[i] + dh[i] * o * (1.0 - tc * tc);
        da[i] = dct * c_prev[i] * f * (1.0 - f);
        da[n + i] = dct * g * ig * (1.0 - ig);
        da[2 * n + i] = d_o * o * (1.0 - o);
        da[3 * n + i] = dct * ig * (1.0 - g * g);
        dc[i] = dct * f;
        dh[i] = 0.0;
    }
    axpy(grad.b, 1.0, da);
    if let Some(x) = x {
        outer_add(grad.w, da, x);
        if let Some(dx) = dx {
            matvec_t_add(dx, layer.w, da);
        }
    }
    let k = layer.variant.recurrent_blocks();
    match layer.variant {
        LstmVariant::CellGated => {
            outer_add(grad.u, &da[..k * n], c_prev);
            matvec_t_add(dc, layer.u, &da[..k * n]);
        }
        LstmVariant::Standard => {
            outer_add(grad.u, &da[..k * n], h_prev);
            matvec_t_add(dh, layer.u, &da[..k * n]);
        }
    }
}
