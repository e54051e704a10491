//! The common mechanism regression model and its closed-form moments.
//!
//! A task `i` observes matrices `X_it ∈ R^{B×P}` and responses
//! `y_it = tr(Wᵀ X_it V_i)`, where `W ∈ R^{B×R}` is shared by all tasks and
//! `V_i ∈ R^{P×R}` is task specific. Designs follow a zero-mean
//! matrix-variate normal law with `E[X_bp X_b'p'] = Γ_bb' Δ_i,pp'`, i.e. the
//! row-major vectorisation of `X_it` has covariance `Γ ⊗ Δ_i`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrixView;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{eig_sym, spectral_norm, sqrt_psd, Matrix, SymMatrix};
use crate::rng::{fill_standard_normal, standard_normal_matrix, SeededRng};

/// Ground truth: the common mechanism `W` (B×R) and per-task regressors
/// `V_i` (P×R).
#[derive(Debug, Clone, PartialEq)]
pub struct CmrModel {
    w: Matrix,
    v: Vec<Matrix>,
}

impl CmrModel {
    pub fn new(w: Matrix, v: Vec<Matrix>) -> Result<Self> {
        let r = w.ncols();
        if r == 0 || w.nrows() == 0 {
            return Err(shape_err!("W must be non-empty, got {}x{}", w.nrows(), r));
        }
        if r > w.nrows() {
            return Err(shape_err!("rank {} exceeds B = {}", r, w.nrows()));
        }
        let Some(first) = v.first() else {
            return Err(shape_err!("model needs at least one task"));
        };
        let p = first.nrows();
        if p == 0 {
            return Err(shape_err!("V_i must have at least one row"));
        }
        for (i, vi) in v.iter().enumerate() {
            if vi.nrows() != p || vi.ncols() != r {
                return Err(shape_err!("V_{} is {}x{}, expected {}x{}", i, vi.nrows(), vi.ncols(), p, r));
            }
        }
        Ok(Self { w, v })
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn v(&self) -> &[Matrix] {
        &self.v
    }

    pub fn bands(&self) -> usize {
        self.w.nrows()
    }

    pub fn positions(&self) -> usize {
        self.v[0].nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn tasks(&self) -> usize {
        self.v.len()
    }
}

/// Shared B-covariance `Γ` and per-task P-covariances `Δ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCovariances {
    gamma: SymMatrix,
    deltas: Vec<SymMatrix>,
    trace_normalized: bool,
}

impl TaskCovariances {
    /// Validates PSD-ness and shapes. With `trace_normalize` every `Δ_i` is
    /// rescaled to `tr(Δ_i) = P`, which makes `E[X Xᵀ] = P·Γ` and keeps the
    /// `1/(ITP)` covariance estimator unbiased for `Γ`.
    pub fn new(gamma: SymMatrix, deltas: Vec<SymMatrix>, trace_normalize: bool) -> Result<Self> {
        let Some(first) = deltas.first() else {
            return Err(shape_err!("at least one task covariance is required"));
        };
        let p = first.dim();
        check_psd_input(&gamma)?;
        let mut out = Vec::with_capacity(deltas.len());
        for (i, d) in deltas.into_iter().enumerate() {
            if d.dim() != p {
                return Err(shape_err!("Δ_{} is {}x{}, expected {}x{}", i, d.dim(), d.dim(), p, p));
            }
            check_psd_input(&d)?;
            if trace_normalize {
                let tr = d.trace();
                if !(tr > 0.0) {
                    return Err(Error::Degenerate(alloc::format!("Δ_{i} has zero trace")));
                }
                out.push(d.scaled(p as f64 / tr));
            } else {
                out.push(d);
            }
        }
        Ok(Self { gamma, deltas: out, trace_normalized: trace_normalize })
    }

    /// `Γ = I_B`, `Δ_i = I_P` for every task.
    pub fn identity(bands: usize, positions: usize, tasks: usize) -> Self {
        Self {
            gamma: SymMatrix::identity(bands),
            deltas: vec![SymMatrix::identity(positions); tasks],
            trace_normalized: true,
        }
    }

    /// Random well-conditioned covariances (see [`random_spd`]); `Δ_i` are
    /// trace-normalised.
    pub fn random(
        bands: usize,
        positions: usize,
        tasks: usize,
        gamma_condition: f64,
        delta_condition: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let gamma = random_spd(bands, gamma_condition, rng)?;
        let deltas = (0..tasks).map(|_| random_spd(positions, delta_condition, rng)).collect::<Result<Vec<_>>>()?;
        Self::new(gamma, deltas, true)
    }

    pub fn gamma(&self) -> &SymMatrix {
        &self.gamma
    }

    pub fn deltas(&self) -> &[SymMatrix] {
        &self.deltas
    }

    pub fn trace_normalized(&self) -> bool {
        self.trace_normalized
    }

    pub fn bands(&self) -> usize {
        self.gamma.dim()
    }

    pub fn positions(&self) -> usize {
        self.deltas[0].dim()
    }

    pub fn tasks(&self) -> usize {
        self.deltas.len()
    }

    fn check_model(&self, model: &CmrModel) -> Result<()> {
        if self.bands() != model.bands() || self.positions() != model.positions() || self.tasks() != model.tasks() {
            return Err(shape_err!(
                "covariances are (B={}, P={}, I={}) but model is (B={}, P={}, I={})",
                self.bands(),
                self.positions(),
                self.tasks(),
                model.bands(),
                model.positions(),
                model.tasks()
            ));
        }
        Ok(())
    }
}

fn check_psd_input(m: &SymMatrix) -> Result<()> {
    let eig = eig_sym(m)?;
    let scale = eig.max().abs().max(eig.min().abs());
    if eig.min() < -crate::linalg::PSD_TOLERANCE * scale {
        return Err(Error::NotPsd { min_eigenvalue: eig.min() });
    }
    Ok(())
}

/// Random symmetric positive definite matrix with condition number exactly
/// `condition` and trace `n`: Haar-ish rotation (QR of a Gaussian matrix)
/// of log-uniform eigenvalues.
pub fn random_spd(n: usize, condition: f64, rng: &mut SeededRng) -> Result<SymMatrix> {
    if n == 0 || !(condition >= 1.0) || !condition.is_finite() {
        return Err(Error::OutOfDomain(alloc::format!(
            "random_spd needs n ≥ 1 and condition ≥ 1, got n={n}, condition={condition}"
        )));
    }
    let q = standard_normal_matrix(n, n, rng).qr().q();
    let mut values: Vec<f64> = (0..n)
        .map(|k| match k {
            0 => 1.0,
            k if k == n - 1 => condition,
            _ => libm::pow(condition, rng.random::<f64>()),
        })
        .collect();
    let total: f64 = values.iter().sum();
    for x in &mut values {
        *x *= n as f64 / total;
    }
    SymMatrix::from_eigen(&q, &values)
}

/// Designs and responses for `I` tasks with `T` samples each.
///
/// All design matrices live in one column-major buffer: sample `(i, t)` is
/// the `B×P` block starting at `((i·T + t)·B·P)`. The whole buffer therefore
/// reads as a `B × (I·T·P)` matrix, which the moment estimators exploit.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    bands: usize,
    positions: usize,
    tasks: usize,
    samples: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TaskDataset {
    pub fn zeros(bands: usize, positions: usize, tasks: usize, samples: usize) -> Self {
        Self {
            bands,
            positions,
            tasks,
            samples,
            x: vec![0.0; bands * positions * tasks * samples],
            y: vec![0.0; tasks * samples],
        }
    }

    /// Builds a dataset from per-sample matrices listed task-major.
    pub fn from_parts(tasks: usize, samples: usize, xs: &[Matrix], y: Vec<f64>) -> Result<Self> {
        if xs.len() != tasks * samples || y.len() != tasks * samples {
            return Err(shape_err!(
                "expected {} samples, got {} designs and {} responses",
                tasks * samples,
                xs.len(),
                y.len()
            ));
        }
        let Some(first) = xs.first() else {
            return Err(Error::EmptyDataset);
        };
        let (b, p) = first.shape();
        let mut ds = Self::zeros(b, p, tasks, samples);
        for (k, m) in xs.iter().enumerate() {
            if m.shape() != (b, p) {
                return Err(shape_err!("design {} is {:?}, expected {:?}", k, m.shape(), (b, p)));
            }
            ds.x[k * b * p..(k + 1) * b * p].copy_from_slice(m.as_slice());
        }
        ds.set_responses(y)?;
        Ok(ds)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.tasks == 0 || self.samples == 0 || self.bands == 0 || self.positions == 0
    }

    fn offset(&self, i: usize, t: usize) -> usize {
        (i * self.samples + t) * self.bands * self.positions
    }

    pub fn x(&self, i: usize, t: usize) -> DMatrixView<'_, f64> {
        let bp = self.bands * self.positions;
        let off = self.offset(i, t);
        DMatrixView::from_slice(&self.x[off..off + bp], self.bands, self.positions)
    }

    pub fn x_mut(&mut self, i: usize, t: usize) -> &mut [f64] {
        let bp = self.bands * self.positions;
        let off = self.offset(i, t);
        &mut self.x[off..off + bp]
    }

    /// The raw design buffer, a column-major `B × (I·T·P)` matrix.
    pub fn design_buffer(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.samples + t]
    }

    /// Responses, task-major.
    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn set_responses(&mut self, y: Vec<f64>) -> Result<()> {
        if y.len() != self.tasks * self.samples {
            return Err(shape_err!("expected {} responses, got {}", self.tasks * self.samples, y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.y = y;
        Ok(())
    }

    pub fn task(&self, i: usize) -> TaskView<'_> {
        let bp = self.bands * self.positions;
        let start = i * self.samples;
        TaskView {
            bands: self.bands,
            positions: self.positions,
            x: &self.x[start * bp..(start + self.samples) * bp],
            y: &self.y[start..start + self.samples],
        }
    }

    /// Copy of task `i` as a one-task dataset.
    pub fn single_task(&self, i: usize) -> TaskDataset {
        let view = self.task(i);
        TaskDataset {
            bands: self.bands,
            positions: self.positions,
            tasks: 1,
            samples: self.samples,
            x: view.x.to_vec(),
            y: view.y.to_vec(),
        }
    }

    /// Applies `f` to every design matrix in place.
    pub fn map_designs(&mut self, mut f: impl FnMut(DMatrixView<'_, f64>) -> Matrix) -> Result<()> {
        let (b, p) = (self.bands, self.positions);
        for k in 0..self.tasks * self.samples {
            let block = &mut self.x[k * b * p..(k + 1) * b * p];
            let out = f(DMatrixView::from_slice(block, b, p));
            if out.shape() != (b, p) {
                return Err(shape_err!("mapped design has shape {:?}, expected {:?}", out.shape(), (b, p)));
            }
            block.copy_from_slice(out.as_slice());
        }
        Ok(())
    }
}

/// Borrowed view of a single task.
#[derive(Debug, Clone, Copy)]
pub struct TaskView<'a> {
    bands: usize,
    positions: usize,
    x: &'a [f64],
    y: &'a [f64],
}

impl<'a> TaskView<'a> {
    pub fn new(bands: usize, positions: usize, x: &'a [f64], y: &'a [f64]) -> Result<Self> {
        if x.len() != bands * positions * y.len() {
            return Err(shape_err!("{} design entries for {} samples of {}x{}", x.len(), y.len(), bands, positions));
        }
        Ok(Self { bands, positions, x, y })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn samples(&self) -> usize {
        self.y.len()
    }

    pub fn x(&self, t: usize) -> DMatrixView<'a, f64> {
        let bp = self.bands * self.positions;
        DMatrixView::from_slice(&self.x[t * bp..(t + 1) * bp], self.bands, self.positions)
    }

    pub fn y(&self, t: usize) -> f64 {
        self.y[t]
    }

    pub fn responses(&self) -> &'a [f64] {
        self.y
    }
}

/// Draws `Γ^{1/2} K Δ^{1/2}` with `K` standard normal. Identity roots are
/// skipped so the i.i.d. case costs only the normal draws.
#[derive(Debug, Clone)]
pub struct MatrixNormalSampler {
    bands: usize,
    positions: usize,
    gamma_root: Option<Matrix>,
    delta_root: Option<Matrix>,
}

impl MatrixNormalSampler {
    pub fn new(gamma: &SymMatrix, delta: &SymMatrix) -> Result<Self> {
        let root = |m: &SymMatrix| -> Result<Option<Matrix>> {
            if m.is_identity() {
                Ok(None)
            } else {
                Ok(Some(sqrt_psd(m)?.into_matrix()))
            }
        };
        Ok(Self { bands: gamma.dim(), positions: delta.dim(), gamma_root: root(gamma)?, delta_root: root(delta)? })
    }

    /// Writes one draw, column-major, into `out`.
    pub fn sample_into(&self, rng: &mut SeededRng, out: &mut [f64]) {
        fill_standard_normal(rng, out);
        if self.gamma_root.is_none() && self.delta_root.is_none() {
            return;
        }
        let mut k = Matrix::from_column_slice(self.bands, self.positions, out);
        if let Some(g) = &self.gamma_root {
            k = g * k;
        }
        if let Some(d) = &self.delta_root {
            k *= d;
        }
        out.copy_from_slice(k.as_slice());
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Matrix {
        let mut m = Matrix::zeros(self.bands, self.positions);
        self.sample_into(rng, m.as_mut_slice());
        m
    }
}

/// One draw from the zero-mean matrix-variate normal with B-covariance
/// `gamma` and P-covariance `delta`.
pub fn sample_matrix_normal(gamma: &SymMatrix, delta: &SymMatrix, rng: &mut SeededRng) -> Result<Matrix> {
    Ok(MatrixNormalSampler::new(gamma, delta)?.sample(rng))
}

/// Dimensions of a synthetic instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDims {
    pub bands: usize,
    pub positions: usize,
    pub rank: usize,
    pub tasks: usize,
    pub samples: usize,
}

impl SyntheticDims {
    pub fn validate(&self) -> Result<()> {
        let SyntheticDims { bands, positions, rank, tasks, samples } = *self;
        if bands == 0 || positions == 0 || tasks == 0 || samples == 0 {
            return Err(shape_err!("all dimensions must be positive: {:?}", self));
        }
        if rank == 0 || rank > bands.min(positions) {
            return Err(shape_err!("rank {} must lie in 1..=min(B, P) = {}", rank, bands.min(positions)));
        }
        Ok(())
    }
}

/// Random ground truth: `W` with orthonormal columns (QR of a Gaussian
/// matrix), each `V_i` Gaussian rescaled to unit spectral norm.
pub fn random_model(dims: &SyntheticDims, rng: &mut SeededRng) -> Result<CmrModel> {
    dims.validate()?;
    let w = standard_normal_matrix(dims.bands, dims.rank, rng).qr().q();
    let v = (0..dims.tasks)
        .map(|_| {
            let vi = standard_normal_matrix(dims.positions, dims.rank, rng);
            let norm = spectral_norm(&vi);
            vi / norm
        })
        .collect();
    CmrModel::new(w, v)
}

/// Draws `T` designs per task and computes noiseless responses.
pub fn sample_dataset(
    model: &CmrModel,
    cov: &TaskCovariances,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<TaskDataset> {
    cov.check_model(model)?;
    if samples == 0 {
        return Err(shape_err!("samples per task must be positive"));
    }
    let (b, p, tasks) = (model.bands(), model.positions(), model.tasks());
    let mut ds = TaskDataset::zeros(b, p, tasks, samples);
    for i in 0..tasks {
        let sampler = MatrixNormalSampler::new(cov.gamma(), &cov.deltas()[i])?;
        for t in 0..samples {
            sampler.sample_into(rng, ds.x_mut(i, t));
        }
    }
    let y = responses(model, &ds)?;
    ds.set_responses(y)?;
    Ok(ds)
}

/// Random model plus a dataset drawn from it. Draw order: `W`, every `V_i`,
/// then the designs task by task.
pub fn generate_synthetic(
    dims: &SyntheticDims,
    cov: &TaskCovariances,
    rng: &mut SeededRng,
) -> Result<(CmrModel, TaskDataset)> {
    dims.validate()?;
    if cov.bands() != dims.bands || cov.positions() != dims.positions || cov.tasks() != dims.tasks {
        return Err(shape_err!("covariance shapes do not match {:?}", dims));
    }
    let model = random_model(dims, rng)?;
    let ds = sample_dataset(&model, cov, dims.samples, rng)?;
    Ok((model, ds))
}

/// `y_it = tr(Wᵀ X_it V_i) = ⟨X_it, W V_iᵀ⟩` for every sample.
pub fn responses(model: &CmrModel, dataset: &TaskDataset) -> Result<Vec<f64>> {
    if dataset.bands() != model.bands() || dataset.positions() != model.positions() || dataset.tasks() != model.tasks()
    {
        return Err(shape_err!(
            "dataset is (B={}, P={}, I={}) but model is (B={}, P={}, I={})",
            dataset.bands(),
            dataset.positions(),
            dataset.tasks(),
            model.bands(),
            model.positions(),
            model.tasks()
        ));
    }
    let mut y = Vec::with_capacity(dataset.tasks() * dataset.samples());
    for (i, vi) in model.v().iter().enumerate() {
        let m = model.w() * vi.transpose();
        let task = dataset.task(i);
        for t in 0..task.samples() {
            y.push(task.x(t).dot(&m));
        }
    }
    Ok(y)
}

/// Closed-form expectation of the moment matrix `Â`:
/// `A = (1 + 1/T)·Γ W Q Wᵀ Γ + β·Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedA {
    pub a: SymMatrix,
    /// `(1/I) Σ V_iᵀ Δ_i² V_i`
    pub q: SymMatrix,
    /// `(1/T)·tr(WᵀΓW · (1/I) Σ V_iᵀ Δ_i V_i tr(Δ_i))`
    pub beta: f64,
}

fn task_second_moment(model: &CmrModel, cov: &TaskCovariances) -> Result<SymMatrix> {
    let r = model.rank();
    let mut q = Matrix::zeros(r, r);
    for (vi, di) in model.v().iter().zip(cov.deltas()) {
        let dv = di.as_matrix() * vi;
        q += dv.transpose() * dv;
    }
    SymMatrix::new(q / model.tasks() as f64)
}

/// `Γ W Q Wᵀ Γ`, whose R-th largest eigenvalue sets the signal strength.
fn signal_matrix(model: &CmrModel, cov: &TaskCovariances, q: &SymMatrix) -> Result<SymMatrix> {
    let gw = cov.gamma().as_matrix() * model.w();
    SymMatrix::new(&gw * q.as_matrix() * gw.transpose())
}

/// Smallest eigenvalue of `Γ W Q Wᵀ Γ` over its R-dimensional range.
fn signal_floor(model: &CmrModel, cov: &TaskCovariances, q: &SymMatrix) -> Result<f64> {
    let eig = eig_sym(&signal_matrix(model, cov, q)?)?;
    let lambda = eig.values[model.rank() - 1];
    if !(lambda > 0.0) {
        return Err(Error::Degenerate(alloc::format!("λ_R(ΓWQWᵀΓ) = {lambda:e} is not positive")));
    }
    Ok(lambda)
}

pub fn expected_a(model: &CmrModel, cov: &TaskCovariances, samples: usize) -> Result<ExpectedA> {
    cov.check_model(model)?;
    if samples == 0 {
        return Err(shape_err!("samples per task must be positive"));
    }
    let t = samples as f64;
    let r = model.rank();
    let q = task_second_moment(model, cov)?;
    let mut mix = Matrix::zeros(r, r);
    for (vi, di) in model.v().iter().zip(cov.deltas()) {
        mix += vi.transpose() * di.as_matrix() * vi * di.trace();
    }
    mix /= model.tasks() as f64;
    let gamma = cov.gamma().as_matrix();
    let wgw = model.w().transpose() * gamma * model.w();
    let beta = (wgw * mix).trace() / t;
    let signal = signal_matrix(model, cov, &q)?;
    let a = SymMatrix::new(signal.as_matrix() * (1.0 + 1.0 / t) + gamma * beta)?;
    Ok(ExpectedA { a, q, beta })
}

fn gamma_extremes(cov: &TaskCovariances) -> Result<(f64, f64)> {
    let eig = eig_sym(cov.gamma())?;
    if !(eig.min() > 0.0) {
        return Err(Error::Degenerate(alloc::format!("Γ is singular (λ_min = {:e})", eig.min())));
    }
    Ok((eig.max(), eig.min()))
}

/// Perturbation bound on `dist(Ŵ, W)` given `‖Γ̂ − Γ‖₂ ≤ λ_min(Γ)·ε₁` and
/// `‖Â − A‖₂ ≤ ε₂`:
///
/// `f = ε₁/(1−ε₁) + 2√R·((κ_Γ+ε₁)/(1−ε₁))^{3/2}·(ε₂ + β λ_min(Γ) ε₁)/λ_R(ΓWQWᵀΓ)`
pub fn davis_kahan_bound(
    eps1: f64,
    eps2: f64,
    model: &CmrModel,
    cov: &TaskCovariances,
    expected: &ExpectedA,
) -> Result<f64> {
    if !(0.0..1.0).contains(&eps1) {
        return Err(Error::OutOfDomain(alloc::format!("ε₁ must lie in [0, 1), got {eps1}")));
    }
    if !(eps2 >= 0.0) || !eps2.is_finite() {
        return Err(Error::OutOfDomain(alloc::format!("ε₂ must be finite and ≥ 0, got {eps2}")));
    }
    cov.check_model(model)?;
    let (gmax, gmin) = gamma_extremes(cov)?;
    let kappa = gmax / gmin;
    let lambda = signal_floor(model, cov, &expected.q)?;
    let r = model.rank() as f64;
    let ratio = (kappa + eps1) / (1.0 - eps1);
    let first = eps1 / (1.0 - eps1);
    let second = 2.0 * libm::sqrt(r) * libm::pow(ratio, 1.5) * (eps2 + expected.beta * gmin * eps1) / lambda;
    Ok(first + second)
}

/// Task-divergence coefficients and the per-task scales `L_i` behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCoefficients {
    pub eta: f64,
    pub alpha: f64,
    pub mu: f64,
    pub nu: f64,
    pub psi: f64,
    pub chi: f64,
    pub kappa_gamma: f64,
    /// `L_i = ‖Γ‖²‖W‖²‖Δ_i‖²‖V_i‖²`
    pub l_per_task: Vec<f64>,
    /// mean of `L_i²`
    pub d: f64,
    /// root-mean of `L_i⁴`
    pub m: f64,
    /// max of `L_i`
    pub l: f64,
    /// `λ_R(ΓWQWᵀΓ)`, the common denominator
    pub signal_floor: f64,
}

pub fn divergence_coefficients(model: &CmrModel, cov: &TaskCovariances) -> Result<DivergenceCoefficients> {
    cov.check_model(model)?;
    let (gmax, gmin) = gamma_extremes(cov)?;
    let q = task_second_moment(model, cov)?;
    let lambda = signal_floor(model, cov, &q)?;
    let w_norm = spectral_norm(model.w());
    let p = model.positions() as f64;
    let n = model.tasks() as f64;

    let delta_norms: Vec<f64> = cov.deltas().iter().map(crate::linalg::sym_norm).collect::<Result<_>>()?;
    let l_per_task: Vec<f64> = model
        .v()
        .iter()
        .zip(&delta_norms)
        .map(|(vi, dn)| {
            let vn = spectral_norm(vi);
            gmax * gmax * w_norm * w_norm * dn * dn * vn * vn
        })
        .collect();

    let mean = |f: &dyn Fn(f64) -> f64, xs: &[f64]| xs.iter().map(|&x| f(x)).sum::<f64>() / n;
    let l_mean = mean(&|x| x, &l_per_task);
    let d = mean(&|x| x * x, &l_per_task);
    let m = libm::sqrt(mean(&|x| x * x * x * x, &l_per_task));
    let l = l_per_task.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_trace_ratio = cov.deltas().iter().map(|d| d.trace()).sum::<f64>() / (n * p);
    let psi = mean(&|x| x * x, &delta_norms) / (mean_trace_ratio * mean_trace_ratio);
    let chi = delta_norms.iter().copied().fold(f64::NEG_INFINITY, f64::max) / mean_trace_ratio;

    Ok(DivergenceCoefficients {
        eta: l_mean / lambda,
        alpha: d / (lambda * lambda),
        mu: m / (lambda * lambda),
        nu: l / lambda,
        psi,
        chi,
        kappa_gamma: gmax / gmin,
        l_per_task,
        d,
        m,
        l,
        signal_floor: lambda,
    })
}
