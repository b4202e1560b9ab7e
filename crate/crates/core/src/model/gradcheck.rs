//! Central finite-difference verification of [`forward_backward`].

use serde::{Deserialize, Serialize};

use super::{forward_backward, loss, LstmVariant, Mode, ModelConfig, SeqVaeParams, Workspace};
use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences of a loss of
/// order one carry roundoff near `f64::EPSILON / FD_STEP ≈ 2e-11` plus
/// truncation `O(FD_STEP²)`; below this floor the comparison is absolute.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub label: String,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares every analytic partial derivative of the loss with a central
/// difference.
pub fn check_gradients(
    label: &str,
    params: &SeqVaeParams,
    input: &[f64],
    future: &[f64],
    eps: &[f64],
) -> Result<GradCheckReport> {
    let mut grad = vec![0.0; params.len()];
    forward_backward(params, input, future, eps, &mut grad, 1.0, &mut Workspace::new())?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        label: label.to_string(),
        n_params: params.len(),
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut worst = 0;
    for (i, &g) in grad.iter().enumerate() {
        let v = params.values()[i];
        probe.values_mut()[i] = v + FD_STEP;
        let up = loss(&probe, input, future, eps)?.total;
        probe.values_mut()[i] = v - FD_STEP;
        let dn = loss(&probe, input, future, eps)?.total;
        probe.values_mut()[i] = v;
        let num = (up - dn) / (2.0 * FD_STEP);
        let rel = relative_error(g, num);
        if rel > report.max_rel_error || i == 0 {
            report.max_rel_error = rel;
            report.analytic = g;
            report.numeric = num;
            worst = i;
        }
    }
    report.worst_param = param_name(params, worst);
    Ok(report)
}

fn param_name(params: &SeqVaeParams, index: usize) -> String {
    params
        .layout()
        .tensors
        .iter()
        .find(|t| index >= t.offset && index < t.offset + t.len())
        .map_or_else(|| index.to_string(), |t| format!("{}[{}]", t.name, index - t.offset))
}

/// The two reference models: a point model (hidden 3, r 4, p 2) and a cycle
/// model (hidden 3, R 2, P 1, dim 6).
pub fn reference_configs(variant: LstmVariant) -> [ModelConfig; 2] {
    [
        ModelConfig {
            hidden: 3,
            latent: 3,
            variant,
            ..ModelConfig::point(4, 2)
        },
        ModelConfig {
            mode: Mode::Cycle,
            data_dim: 6,
            hidden: 3,
            latent: 3,
            variant,
            ..ModelConfig::cycle(2, 1)
        },
    ]
}

/// Deterministic non-trivial window and latent noise for a configuration.
pub fn probe_window(cfg: &ModelConfig, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let input = draw(cfg.r * cfg.data_dim);
    let future = draw(cfg.p * cfg.data_dim);
    let eps = draw(cfg.latent);
    (input, future, eps)
}

/// Runs the check on both reference models for both LSTM variants.
pub fn reference_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for variant in [LstmVariant::CellGated, LstmVariant::Standard] {
        for cfg in reference_configs(variant) {
            let mut params = SeqVaeParams::init(cfg, seed)?;
            // Nonzero biases so every bias gradient is exercised away from the origin.
            let mut rng_state = seed;
            for v in params.values_mut() {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v += 0.1 * (((rng_state >> 11) as f64 / (1u64 << 53) as f64) - 0.5);
            }
            let (x, y, e) = probe_window(&cfg, seed.wrapping_add(1));
            let variant_name = match variant {
                LstmVariant::CellGated => "cell-gated",
                LstmVariant::Standard => "standard",
            };
            out.push(check_gradients(&format!("{}/{}", cfg.mode, variant_name), &params, &x, &y, &e)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_suite_passes() {
        for r in reference_suite(3).unwrap() {
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-7) - 1e-2).abs() < 1e-12);
    }
}
