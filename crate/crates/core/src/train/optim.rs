use serde::{Deserialize, Serialize};

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + ε)`
///
/// # Panics
/// If the shapes of `params`, `grads` and the moments differ.
pub fn adamw_step(state: &mut AdamWState, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * weight_decay * params[i] + lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

/// One-cycle learning-rate policy: cosine warm-up from `lr_max / div_factor`
/// to `lr_max` over the first `pct_start` of the steps, then cosine
/// annealing to `lr_max / final_div_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }
}

fn cos_interp(from: f64, to: f64, frac: f64) -> f64 {
    to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

impl OneCycle {
    pub fn lr(&self, step: usize, total_steps: usize, lr_max: f64) -> f64 {
        let start = lr_max / self.div_factor;
        let end = lr_max / self.final_div_factor;
        if total_steps == 0 {
            return start;
        }
        let step = step.min(total_steps) as f64;
        let warm = self.pct_start * total_steps as f64;
        if step <= warm {
            if warm == 0.0 {
                return lr_max;
            }
            cos_interp(start, lr_max, step / warm)
        } else {
            cos_interp(lr_max, end, (step - warm) / (total_steps as f64 - warm))
        }
    }
}

/// [`OneCycle::lr`] with the default shape.
pub fn one_cycle_lr(step: usize, total_steps: usize, lr_max: f64) -> f64 {
    OneCycle::default().lr(step, total_steps, lr_max)
}
