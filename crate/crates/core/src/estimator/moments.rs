//! Moment estimators `Γ̂` and `Â`.

use alloc::vec;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymMatrix};
use crate::model::TaskDataset;

/// `Σ_c c cᵀ` over the columns of a column-major `rows × n` buffer.
///
/// Only the upper triangle is accumulated; the summation order is fixed so
/// results are reproducible bit for bit.
pub(crate) fn column_gram(buffer: &[f64], rows: usize) -> Matrix {
    let mut acc = vec![0.0; rows * rows];
    for col in buffer.chunks_exact(rows) {
        for (j, &cj) in col.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            let dst = &mut acc[j * rows..j * rows + j + 1];
            for (d, &ci) in dst.iter_mut().zip(&col[..=j]) {
                *d += ci * cj;
            }
        }
    }
    let mut m = Matrix::from_vec(rows, rows, acc);
    for j in 0..rows {
        for i in (j + 1)..rows {
            m[(i, j)] = m[(j, i)];
        }
    }
    m
}

/// `Γ̂ = (1/ITP) Σ_it X_it X_itᵀ`.
pub fn estimate_gamma(dataset: &TaskDataset) -> Result<SymMatrix> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = (dataset.tasks() * dataset.samples() * dataset.positions()) as f64;
    let gram = column_gram(dataset.design_buffer(), dataset.bands());
    SymMatrix::new(gram / n)
}

/// `Â = (1/IT²) Σ_i Σ_{t,t'} y_it y_it' X_it X_it'ᵀ`, evaluated in the
/// factored form `(1/I) Σ_i Z_i Z_iᵀ` with `Z_i = (1/T) Σ_t y_it X_it`.
pub fn estimate_a(dataset: &TaskDataset) -> Result<SymMatrix> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (b, p) = (dataset.bands(), dataset.positions());
    let bp = b * p;
    let samples = dataset.samples();
    let inv_t = 1.0 / samples as f64;
    let mut z = vec![0.0; dataset.tasks() * bp];
    for (i, zi) in z.chunks_exact_mut(bp).enumerate() {
        let task = dataset.task(i);
        for t in 0..samples {
            let y = task.y(t);
            if y == 0.0 {
                continue;
            }
            for (zv, xv) in zi.iter_mut().zip(task.x(t).iter()) {
                *zv += y * xv;
            }
        }
        for zv in zi.iter_mut() {
            *zv *= inv_t;
        }
    }
    let gram = column_gram(&z, b);
    SymMatrix::new(gram / dataset.tasks() as f64)
}
