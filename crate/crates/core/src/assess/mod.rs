//! Residual scoring and the normal/motion decision.

mod metrics;

pub use metrics::{
    assess, fit_two_sigma, metrics_conventional, metrics_predictive, roc_auc, two_sigma_rank, youden_j, youden_max,
    ConfusionCounts, ConventionalMetrics, JFormula, PredictiveMetrics, Roc, RocPoint, YoudenResult,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{reconstruct, SeqVaeParams};
use crate::preprocess::WindowSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl Norm {
    pub fn of(self, diff: impl Iterator<Item = f64>) -> f64 {
        match self {
            Norm::L1 => diff.map(f64::abs).sum(),
            Norm::L2 => diff.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Norm::L1),
            "l2" | "L2" => Ok(Norm::L2),
            other => Err(Error::Config(format!("unknown norm `{other}`"))),
        }
    }
}

/// Norm of the difference between the reversed input and its reconstruction.
pub fn residual_from(input: &[f64], recon: &[f64], dim: usize, norm: Norm) -> Result<f64> {
    if input.len() != recon.len() || dim == 0 || input.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "input of {} values against reconstruction of {}",
            input.len(),
            recon.len()
        )));
    }
    let steps = input.len() / dim;
    let diff = (0..input.len()).map(|i| {
        let (t, j) = (i / dim, i % dim);
        input[(steps - 1 - t) * dim + j] - recon[i]
    });
    Ok(norm.of(diff))
}

/// Residual score of one window (`ε = 0`).
pub fn residual(params: &SeqVaeParams, input: &[f64], norm: Norm) -> Result<f64> {
    let recon = reconstruct(params, input)?;
    residual_from(input, &recon, params.config.data_dim, norm)
}

/// Residuals of every window in order.
pub fn residuals(params: &SeqVaeParams, windows: &WindowSet, norm: Norm) -> Result<Vec<f64>> {
    if windows.dim != params.config.data_dim || windows.r != params.config.r {
        return Err(Error::Shape("window set does not match model".into()));
    }
    windows
        .windows
        .par_iter()
        .map(|&w| residual(params, windows.input(w), norm))
        .collect()
}
