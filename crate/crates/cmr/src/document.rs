//! JSON document for a ground-truth model and its covariances.
//!
//! Matrices are arrays of rows:
//!
//! ```json
//! {
//!   "bands": 3, "positions": 2, "rank": 1, "tasks": 1, "seed": 7,
//!   "w": [[0.6], [0.8], [0.0]],
//!   "v": [[[1.0], [0.0]]],
//!   "gamma": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
//!   "deltas": [[[1, 0], [0, 1]]],
//!   "trace_normalize": true
//! }
//! ```

use cmr_core::linalg::{Matrix, SymMatrix};
use cmr_core::model::{CmrModel, TaskCovariances};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DocumentError {
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] cmr_core::Error),
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub bands: usize,
    pub positions: usize,
    pub rank: usize,
    pub tasks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `B × R`
    pub w: Vec<Vec<f64>>,
    /// `I` matrices of `P × R`
    pub v: Vec<Vec<Vec<f64>>>,
    /// `B × B`
    pub gamma: Vec<Vec<f64>>,
    /// `I` matrices of `P × P`
    pub deltas: Vec<Vec<Vec<f64>>>,
    /// Rescale every `Δ_i` to trace `P` on load.
    #[serde(default = "yes")]
    pub trace_normalize: bool,
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<Matrix, DocumentError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(DocumentError::Shape(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelDocument {
    /// The covariances are stored as given, so loading never rescales them again.
    pub fn new(model: &CmrModel, cov: &TaskCovariances, seed: Option<u64>) -> Self {
        Self {
            bands: model.bands(),
            positions: model.positions(),
            rank: model.rank(),
            tasks: model.tasks(),
            seed,
            w: to_rows(model.w()),
            v: model.v().iter().map(to_rows).collect(),
            gamma: to_rows(cov.gamma().as_matrix()),
            deltas: cov.deltas().iter().map(|d| to_rows(d.as_matrix())).collect(),
            trace_normalize: false,
        }
    }

    pub fn into_parts(&self) -> Result<(CmrModel, TaskCovariances), DocumentError> {
        let (b, p, r, n) = (self.bands, self.positions, self.rank, self.tasks);
        if self.v.len() != n || self.deltas.len() != n {
            return Err(DocumentError::Shape(format!("expected {n} entries in both v and deltas")));
        }
        let w = from_rows(&self.w, b, r, "w")?;
        let v = self
            .v
            .iter()
            .enumerate()
            .map(|(i, m)| from_rows(m, p, r, &format!("v[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let gamma = SymMatrix::new(from_rows(&self.gamma, b, b, "gamma")?)?;
        let deltas = self
            .deltas
            .iter()
            .enumerate()
            .map(|(i, m)| Ok(SymMatrix::new(from_rows(m, p, p, &format!("deltas[{i}]"))?)?))
            .collect::<Result<Vec<_>, DocumentError>>()?;
        let model = CmrModel::new(w, v)?;
        let cov = TaskCovariances::new(gamma, deltas, self.trace_normalize)?;
        Ok((model, cov))
    }
}
