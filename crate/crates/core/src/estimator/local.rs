//! Closed-form ridge fits: per-task `V_i` given `W`, and the full
//! per-task ridge baseline.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{TaskDataset, TaskView};

/// Linear predictor `x ↦ weights·x + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: Vector,
    pub intercept: f64,
}

impl RidgeFit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.intercept
    }
}

/// Minimises `‖y − F w − c‖² + ridge·‖w‖²` (the intercept `c` is fitted
/// only when `intercept` is set and is never penalised).
///
/// `ridge = 0` returns the minimum-norm least-squares solution. For
/// `ridge > 0` the primal normal equations are used when `d ≤ n` and the
/// dual (kernel) form `Fᵀ(F Fᵀ + ridge·I)⁻¹ y` otherwise.
pub fn ridge_regression(features: &Matrix, y: &[f64], ridge: f64, intercept: bool) -> Result<RidgeFit> {
    let (n, d) = features.shape();
    if y.len() != n {
        return Err(shape_err!("{} rows of features but {} targets", n, y.len()));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::OutOfDomain(alloc::format!("ridge must be finite and ≥ 0, got {ridge}")));
    }
    let mut f = features.clone();
    let mut target = Vector::from_column_slice(y);
    let (x_mean, y_mean) = if intercept {
        let means = f.row_mean();
        for mut row in f.row_iter_mut() {
            row -= &means;
        }
        let ym = target.mean();
        target.add_scalar_mut(-ym);
        (Some(means), ym)
    } else {
        (None, 0.0)
    };

    let weights = if ridge == 0.0 {
        let svd = f.svd(true, true);
        let eps = svd.singular_values.max() * (n.max(d) as f64) * f64::EPSILON;
        svd.solve(&target, eps).map_err(|e| Error::Degenerate(e.into()))?
    } else if d <= n {
        let mut gram = f.transpose() * &f;
        for k in 0..d {
            gram[(k, k)] += ridge;
        }
        let rhs = f.transpose() * &target;
        gram.cholesky().ok_or_else(|| Error::Degenerate("ridge system is not positive definite".into()))?.solve(&rhs)
    } else {
        let mut kernel = &f * f.transpose();
        for k in 0..n {
            kernel[(k, k)] += ridge;
        }
        let dual = kernel
            .cholesky()
            .ok_or_else(|| Error::Degenerate("ridge system is not positive definite".into()))?
            .solve(&target);
        f.transpose() * dual
    };

    let intercept = match x_mean {
        Some(m) => y_mean - (m * &weights)[(0, 0)],
        None => 0.0,
    };
    Ok(RidgeFit { weights, intercept })
}

/// Feature row `vec(X_tᵀ W)`, so that `tr(Wᵀ X_t V) = ⟨vec(X_tᵀW), vec(V)⟩`.
pub fn local_features(w: &Matrix, task: &TaskView<'_>) -> Matrix {
    let (p, r) = (task.positions(), w.ncols());
    let mut f = Matrix::zeros(task.samples(), p * r);
    for t in 0..task.samples() {
        let xtw = task.x(t).transpose() * w;
        for (k, v) in xtw.iter().enumerate() {
            f[(t, k)] = *v;
        }
    }
    f
}

/// `argmin_V Σ_t (y_t − tr(Wᵀ X_t V))² + ridge·‖V‖_F²`.
pub fn fit_local(w: &Matrix, task: &TaskView<'_>, ridge: f64) -> Result<Matrix> {
    if w.nrows() != task.bands() || w.ncols() == 0 {
        return Err(shape_err!("W is {}x{} but task designs have {} bands", w.nrows(), w.ncols(), task.bands()));
    }
    if task.samples() == 0 {
        return Err(Error::EmptyDataset);
    }
    let f = local_features(w, task);
    let fit = ridge_regression(&f, task.responses(), ridge, false)?;
    Ok(Matrix::from_column_slice(task.positions(), w.ncols(), fit.weights.as_slice()))
}

/// [`fit_local`] for every task of a dataset.
pub fn fit_all_local(w: &Matrix, dataset: &TaskDataset, ridge: f64) -> Result<Vec<Matrix>> {
    (0..dataset.tasks()).map(|i| fit_local(w, &dataset.task(i), ridge)).collect()
}

/// Independent ridge regression per task on flat feature rows.
pub fn frr_baseline(features: &[Matrix], labels: &[Vec<f64>], ridge: f64, intercept: bool) -> Result<Vec<RidgeFit>> {
    if features.len() != labels.len() {
        return Err(shape_err!("{} feature blocks for {} label vectors", features.len(), labels.len()));
    }
    features.iter().zip(labels).map(|(f, y)| ridge_regression(f, y, ridge, intercept)).collect()
}
