//! The CMR estimator: moments, spectral step, local fits, refinement, and
//! the baselines built from them.

mod local;
mod moments;
mod refine;
mod spectral;

pub use local::{fit_all_local, fit_local, frr_baseline, local_features, ridge_regression, RidgeFit};
pub use moments::{estimate_a, estimate_gamma};
pub use refine::{loss_and_gradient, objective, refine_gd, FitResult, Gradient, RefineConfig, StopReason};
pub use spectral::{spectral_cmr, spectral_cmr_nw, spectral_from_moments, SpectralEstimate, SpectralOptions};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{subspace_distance, Matrix};
use crate::model::TaskDataset;

/// Recovery quality of an estimate against the true `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub dist: f64,
    /// Squared cosine between `w` and `ŵ` for `R = 1`; `1 − dist²` (squared
    /// cosine of the largest principal angle) otherwise.
    pub sq_corr: f64,
}

impl RecoveryScore {
    pub fn compute(truth: &Matrix, estimate: &Matrix) -> Result<Self> {
        let dist = subspace_distance(truth, estimate)?;
        let sq_corr = if truth.ncols() == 1 {
            let c = truth.dot(estimate);
            (c * c / (truth.norm_squared() * estimate.norm_squared())).clamp(0.0, 1.0)
        } else {
            1.0 - dist * dist
        };
        Ok(Self { dist, sq_corr })
    }

    /// `sq_corr > threshold`, which for `R > 1` reads `dist < √(1 − threshold)`.
    pub fn is_success(&self, threshold: f64) -> bool {
        self.sq_corr > threshold
    }
}

/// Spectral step, closed-form local fits, then gradient refinement.
pub fn fit_cmr(
    dataset: &TaskDataset,
    r: usize,
    opts: &SpectralOptions,
    cfg: &RefineConfig,
) -> Result<(SpectralEstimate, FitResult)> {
    let est = spectral_cmr(dataset, r, opts)?;
    let v0 = fit_all_local(&est.w_hat, dataset, cfg.ridge)?;
    let fit = refine_gd(&est.w_hat, &v0, dataset, cfg)?;
    Ok((est, fit))
}

/// CMR run on task `task` alone (`I = 1`), i.e. without transfer.
pub fn cmr1(
    dataset: &TaskDataset,
    task: usize,
    r: usize,
    opts: &SpectralOptions,
    cfg: &RefineConfig,
) -> Result<FitResult> {
    let single = dataset.single_task(task);
    fit_cmr(&single, r, opts, cfg).map(|(_, fit)| fit)
}
