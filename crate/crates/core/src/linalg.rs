//! Dense symmetric / PSD matrix primitives.
//!
//! Everything here is a pure function over [`nalgebra::DMatrix`]. Eigenvector
//! signs and rotations inside repeated eigenspaces are arbitrary, so callers
//! compare subspaces with [`subspace_distance`] rather than entrywise.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default eigenvalue floor for whitening, relative to the largest eigenvalue.
pub const DEFAULT_RELATIVE_EIG_FLOOR: f64 = 1e-10;

/// Relative tolerance below which a negative eigenvalue still counts as PSD.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Column-rank threshold used by [`subspace_distance`].
pub const RANK_TOLERANCE: f64 = 1e-10;

/// A square matrix that is exactly symmetric.
///
/// The constructor replaces the input by `(M + Mᵀ)/2`, so downstream
/// eigensolvers never see roundoff asymmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(shape_err!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()));
        }
        Ok(Self::symmetrize(m))
    }

    fn symmetrize(mut m: Matrix) -> Self {
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    /// Builds `V·diag(values)·Vᵀ`.
    pub fn from_eigen(vectors: &Matrix, values: &[f64]) -> Result<Self> {
        if vectors.ncols() != values.len() {
            return Err(shape_err!("{} eigenvalues for {} eigenvectors", values.len(), vectors.ncols()));
        }
        let mut scaled = vectors.clone();
        for (k, &lambda) in values.iter().enumerate() {
            scaled.column_mut(k).scale_mut(lambda);
        }
        SymMatrix::new(&scaled * vectors.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SymMatrix(&self.0 * factor)
    }

    pub fn is_identity(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| self.0[(i, j)] == if i == j { 1.0 } else { 0.0 }))
    }

    /// Conjugation `S·self·S` by another symmetric matrix.
    pub fn conjugate(&self, s: &SymMatrix) -> Result<SymMatrix> {
        if s.dim() != self.dim() {
            return Err(shape_err!("conjugating {0}x{0} by {1}x{1}", self.dim(), s.dim()));
        }
        SymMatrix::new(&s.0 * &self.0 * &s.0)
    }

    fn check_finite(&self) -> Result<()> {
        if self.0.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite)
        }
    }
}

/// Eigenvalues in non-increasing order with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub values: Vector,
    pub vectors: Matrix,
}

impl EigPair {
    /// The eigenvectors of the `r` largest eigenvalues (`eigv_R`).
    pub fn leading(&self, r: usize) -> Matrix {
        self.vectors.columns(0, r).into_owned()
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Full symmetric eigendecomposition, sorted descending.
pub fn eig_sym(m: &SymMatrix) -> Result<EigPair> {
    m.check_finite()?;
    let n = m.dim();
    if n == 0 {
        return Ok(EigPair { values: Vector::zeros(0), vectors: Matrix::zeros(0, 0) });
    }
    let eig = m.0.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in solver order, which is deterministic
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigPair { values, vectors })
}

/// `max(|λ|)` of a symmetric matrix, i.e. its operator 2-norm.
pub fn sym_norm(m: &SymMatrix) -> Result<f64> {
    let eig = eig_sym(m)?;
    Ok(eig.max().abs().max(eig.min().abs()))
}

/// Operator 2-norm (largest singular value) of a general matrix.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Eigenvalue floor `DEFAULT_RELATIVE_EIG_FLOOR · λ_max(m)`.
pub fn relative_eig_floor(m: &SymMatrix) -> Result<f64> {
    let eig = eig_sym(m)?;
    Ok(DEFAULT_RELATIVE_EIG_FLOOR * eig.max().max(0.0))
}

fn check_psd(eig: &EigPair) -> Result<()> {
    let scale = eig.max().abs().max(eig.min().abs());
    if eig.min() < -PSD_TOLERANCE * scale {
        return Err(Error::NotPsd { min_eigenvalue: eig.min() });
    }
    Ok(())
}

/// Unique PSD square root, via the eigendecomposition.
///
/// Tiny negative eigenvalues (within [`PSD_TOLERANCE`] relative) are clamped
/// to zero; anything more negative is rejected.
pub fn sqrt_psd(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = eig_sym(m)?;
    check_psd(&eig)?;
    let roots: Vec<f64> = eig.values.iter().map(|&l| libm::sqrt(l.max(0.0))).collect();
    SymMatrix::from_eigen(&eig.vectors, &roots)
}

/// `m^{-1/2}` for a positive definite `m`.
///
/// Fails with [`Error::NotInvertible`] when `λ_min(m) < eig_floor`.
pub fn inv_sqrt_psd(m: &SymMatrix, eig_floor: f64) -> Result<SymMatrix> {
    if !(eig_floor > 0.0) {
        return Err(Error::OutOfDomain(alloc::format!("eig_floor must be > 0, got {eig_floor}")));
    }
    let eig = eig_sym(m)?;
    if eig.min() < eig_floor {
        return Err(Error::NotInvertible { min_eigenvalue: eig.min(), floor: eig_floor });
    }
    let inv_roots: Vec<f64> = eig.values.iter().map(|&l| 1.0 / libm::sqrt(l)).collect();
    SymMatrix::from_eigen(&eig.vectors, &inv_roots)
}

/// Orthonormal basis of the column span, from the thin SVD.
///
/// Rejects inputs whose smallest singular value is below
/// `RANK_TOLERANCE` times the largest.
pub fn orthonormal_basis(u: &Matrix) -> Result<Matrix> {
    if u.ncols() == 0 || u.nrows() < u.ncols() {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    if !u.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let svd = u.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(ratio >= RANK_TOLERANCE) {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(svd.u.expect("left singular vectors requested"))
}

/// `‖U U† − V V†‖₂`: the sine of the largest principal angle between the
/// column spans of `u` and `v`.
pub fn subspace_distance(u: &Matrix, v: &Matrix) -> Result<f64> {
    if u.nrows() != v.nrows() {
        return Err(shape_err!("subspace rows differ: {} vs {}", u.nrows(), v.nrows()));
    }
    let qu = orthonormal_basis(u)?;
    let qv = orthonormal_basis(v)?;
    let diff = &qu * qu.transpose() - &qv * qv.transpose();
    Ok(spectral_norm(&diff).clamp(0.0, 1.0))
}

/// Frobenius inner product `⟨a, b⟩ = tr(aᵀ b)`.
pub fn frobenius_dot(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
