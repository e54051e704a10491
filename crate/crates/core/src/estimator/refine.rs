//! Joint (block-preconditioned) gradient descent on the bilinear least-squares objective
//!
//! `L(W, {V_i}) = (1/IT) Σ_it (y_it − tr(Wᵀ X_it V_i))² + ridge·(‖W‖_F² + Σ_i ‖V_i‖_F²)`.
//!
//! Every iteration caches `X_it V_i` and `X_itᵀ W`. Along a search
//! direction `(D_W, D_V)` the residual is a quadratic in the step `s`, so
//! the loss is a quartic whose five coefficients come out of a single pass
//! over the data; backtracking then costs O(1) per trial step.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::model::TaskDataset;

/// Sufficient-decrease constant of the Armijo test.
const ARMIJO: f64 = 1e-4;
/// Halvings tried before a step is declared stalled.
const MAX_BACKTRACKS: usize = 80;
/// Accepted steps between exact rebuilds of the cached products.
const REFRESH_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// First trial step; later iterations start from twice the last accepted step.
    pub step_size: f64,
    /// Stop once the Frobenius norm of the full gradient drops to this.
    pub grad_tol: f64,
    pub ridge: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { max_iters: 500, step_size: 1.0, grad_tol: 1e-8, ridge: 0.0 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::OutOfDomain("max_iters must be ≥ 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::OutOfDomain(alloc::format!("step_size must be > 0, got {}", self.step_size)));
        }
        if !(self.grad_tol >= 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::OutOfDomain("grad_tol and ridge must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    /// No step passed the sufficient-decrease test.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub w: Matrix,
    pub v: Vec<Matrix>,
    /// Loss before the first step and after every accepted step.
    pub loss_history: Vec<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub gradient_norm: f64,
}

/// Gradient with respect to `W` and every `V_i`.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub w: Matrix,
    pub v: Vec<Matrix>,
}

impl Gradient {
    pub fn norm_squared(&self) -> f64 {
        self.w.norm_squared() + self.v.iter().map(|g| g.norm_squared()).sum::<f64>()
    }
}

fn check_shapes(w: &Matrix, v: &[Matrix], ds: &TaskDataset) -> Result<()> {
    let r = w.ncols();
    if w.nrows() != ds.bands() || r == 0 {
        return Err(shape_err!("W is {}x{}, dataset has B = {}", w.nrows(), r, ds.bands()));
    }
    if v.len() != ds.tasks() {
        return Err(shape_err!("{} local regressors for {} tasks", v.len(), ds.tasks()));
    }
    if let Some(bad) = v.iter().position(|vi| vi.shape() != (ds.positions(), r)) {
        return Err(shape_err!("V_{} is {:?}, expected {:?}", bad, v[bad].shape(), (ds.positions(), r)));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Per-sample products `X V_i` (B×R) and `Xᵀ W` (P×R), column-major.
struct Products {
    xv: Vec<f64>,
    xtw: Vec<f64>,
}

/// Computes `X_k Dv_i` and `X_kᵀ Dw` for every sample in one pass over the designs.
fn products(ds: &TaskDataset, dw: &Matrix, dv: &[Matrix]) -> Products {
    let mut out = Products { xv: Vec::new(), xtw: Vec::new() };
    products_into(ds, dw, dv, &mut out);
    out
}

/// [`products`] into existing buffers.
fn products_into(ds: &TaskDataset, dw: &Matrix, dv: &[Matrix], out: &mut Products) {
    let (b, p, r) = (ds.bands(), ds.positions(), dw.ncols());
    let n = ds.tasks() * ds.samples();
    out.xv.clear();
    out.xv.resize(n * b * r, 0.0);
    out.xtw.resize(n * p * r, 0.0);
    let designs = ds.design_buffer();
    let dw = dw.as_slice();
    for k in 0..n {
        product_kernel(
            &designs[k * b * p..(k + 1) * b * p],
            b,
            dv[k / ds.samples()].as_slice(),
            dw,
            &mut out.xv[k * b * r..(k + 1) * b * r],
            &mut out.xtw[k * p * r..(k + 1) * p * r],
        );
    }
}

/// `out_v += X v` and `out_w = Xᵀ w` for one column-major `B×P` design,
/// reading each design column once.
fn product_kernel(x: &[f64], b: usize, v: &[f64], w: &[f64], out_v: &mut [f64], out_w: &mut [f64]) {
    let p = x.len() / b;
    let r = v.len() / p;
    for (pp, col) in x.chunks_exact(b).enumerate() {
        for rr in 0..r {
            let c = v[rr * p + pp];
            let ov = &mut out_v[rr * b..(rr + 1) * b];
            let wc = &w[rr * b..(rr + 1) * b];
            let mut acc = [0.0; 4];
            let split = b - b % 4;
            for ((o, x4), w4) in
                ov[..split].chunks_exact_mut(4).zip(col[..split].chunks_exact(4)).zip(wc[..split].chunks_exact(4))
            {
                for l in 0..4 {
                    o[l] += c * x4[l];
                    acc[l] += x4[l] * w4[l];
                }
            }
            for j in split..b {
                ov[j] += c * col[j];
                acc[0] += col[j] * wc[j];
            }
            out_w[rr * p + pp] = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        }
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a4, ar) = a[..n].split_at(n - n % 4);
    let (b4, br) = b[..n].split_at(n - n % 4);
    let mut acc = [0.0; 4];
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct State<'a> {
    ds: &'a TaskDataset,
    ridge: f64,
    w: Matrix,
    v: Vec<Matrix>,
    cache: Products,
    residuals: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(ds: &'a TaskDataset, w: Matrix, v: Vec<Matrix>, ridge: f64) -> Self {
        let cache = products(ds, &w, &v);
        let mut s = State { ds, ridge, w, v, cache, residuals: Vec::new() };
        s.update_residuals();
        s
    }

    fn refresh(&mut self) {
        products_into(self.ds, &self.w, &self.v, &mut self.cache);
        self.update_residuals();
    }

    fn update_residuals(&mut self) {
        let br = self.w.len();
        let w = self.w.as_slice();
        self.residuals.clear();
        self.residuals
            .extend(self.ds.responses().iter().zip(self.cache.xv.chunks_exact(br)).map(|(y, xv)| y - dot(w, xv)));
    }

    fn param_norm_squared(&self) -> f64 {
        self.w.norm_squared() + self.v.iter().map(|m| m.norm_squared()).sum::<f64>()
    }

    fn loss(&self) -> f64 {
        let n = self.residuals.len() as f64;
        self.residuals.iter().map(|r| r * r).sum::<f64>() / n + self.ridge * self.param_norm_squared()
    }

    fn gradient(&self) -> Gradient {
        let (b, p, r) = (self.ds.bands(), self.ds.positions(), self.w.ncols());
        let samples = self.ds.samples();
        let n = self.residuals.len() as f64;
        let scale = -2.0 / n;
        let mut gw = vec![0.0; b * r];
        let mut gv: Vec<Matrix> = Vec::with_capacity(self.v.len());
        for (i, vi) in self.v.iter().enumerate() {
            let mut acc = vec![0.0; p * r];
            for t in 0..samples {
                let k = i * samples + t;
                let res = self.residuals[k];
                for (g, x) in gw.iter_mut().zip(&self.cache.xv[k * b * r..(k + 1) * b * r]) {
                    *g += res * x;
                }
                for (g, x) in acc.iter_mut().zip(&self.cache.xtw[k * p * r..(k + 1) * p * r]) {
                    *g += res * x;
                }
            }
            let gi = Matrix::from_vec(p, r, acc) * scale + vi * (2.0 * self.ridge);
            gv.push(gi);
        }
        let gw = Matrix::from_vec(b, r, gw) * scale + &self.w * (2.0 * self.ridge);
        Gradient { w: gw, v: gv }
    }
}

/// Loss and analytic gradient at `(w, v)`, through the same code path the
/// optimiser uses.
pub fn loss_and_gradient(w: &Matrix, v: &[Matrix], ds: &TaskDataset, ridge: f64) -> Result<(f64, Gradient)> {
    check_shapes(w, v, ds)?;
    let state = State::new(ds, w.clone(), v.to_vec(), ridge);
    Ok((state.loss(), state.gradient()))
}

/// Objective value evaluated directly from `tr(Wᵀ X_it V_i)`.
pub fn objective(w: &Matrix, v: &[Matrix], ds: &TaskDataset, ridge: f64) -> Result<f64> {
    check_shapes(w, v, ds)?;
    let mut sse = 0.0;
    for (i, vi) in v.iter().enumerate() {
        let task = ds.task(i);
        for t in 0..task.samples() {
            let pred = (w.transpose() * task.x(t) * vi).trace();
            let r = task.y(t) - pred;
            sse += r * r;
        }
    }
    let n = (ds.tasks() * ds.samples()) as f64;
    let reg = w.norm_squared() + v.iter().map(|m| m.norm_squared()).sum::<f64>();
    Ok(sse / n + ridge * reg)
}

/// Gradient scaled block-wise by the inverse of the `R×R` curvature of each
/// factor: `D_W = −G_W (V̄ + λI)⁻¹` with `V̄ = (1/I) Σ V_iᵀV_i`, and
/// `D_{V_i} = −G_{V_i} (WᵀW/I + λI)⁻¹`.
fn descent_direction(state: &State<'_>, grad: &Gradient) -> (Matrix, Vec<Matrix>) {
    let tasks = state.v.len() as f64;
    let r = state.w.ncols();
    let mut v_bar = Matrix::zeros(r, r);
    for vi in &state.v {
        v_bar += vi.transpose() * vi;
    }
    v_bar /= tasks;
    let w_gram = state.w.transpose() * &state.w / tasks;
    let dw = -precondition(&grad.w, v_bar, state.ridge);
    let dv = grad.v.iter().map(|g| -precondition(g, w_gram.clone(), state.ridge)).collect();
    (dw, dv)
}

/// `g (m + ridge·I + εI)⁻¹`, falling back to `g` if the system is singular.
fn precondition(g: &Matrix, mut m: Matrix, ridge: f64) -> Matrix {
    let jitter = 1e-12 * m.trace().abs() + f64::MIN_POSITIVE;
    for k in 0..m.nrows() {
        m[(k, k)] += ridge + jitter;
    }
    match m.cholesky() {
        // g M⁻¹ = (M⁻¹ gᵀ)ᵀ for symmetric M
        Some(c) => c.solve(&g.transpose()).transpose(),
        None => g.clone(),
    }
}

/// Quartic model of the loss along a direction, as a change from `s = 0`.
struct LineModel {
    c: [f64; 4],
}

impl LineModel {
    fn delta(&self, s: f64) -> f64 {
        s * (self.c[0] + s * (self.c[1] + s * (self.c[2] + s * self.c[3])))
    }
}

/// Preconditioned gradient descent with Armijo backtracking from
/// `(init_w, init_v)`; see [`descent_direction`].
pub fn refine_gd(init_w: &Matrix, init_v: &[Matrix], ds: &TaskDataset, cfg: &RefineConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_shapes(init_w, init_v, ds)?;
    let (b, p, r) = (ds.bands(), ds.positions(), init_w.ncols());
    let samples = ds.samples();
    let n = (ds.tasks() * samples) as f64;

    let mut state = State::new(ds, init_w.clone(), init_v.to_vec(), cfg.ridge);
    let mut loss = state.loss();
    if !loss.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let mut history = vec![loss];
    let mut step = cfg.step_size;
    let mut since_refresh = 0;
    let mut stop = StopReason::MaxIterations;
    let mut grad = state.gradient();
    let mut grad_sq = grad.norm_squared();
    let mut dir = Products { xv: Vec::new(), xtw: Vec::new() };

    for iteration in 1..=cfg.max_iters {
        if libm::sqrt(grad_sq) <= cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let (dw, dv) = descent_direction(&state, &grad);
        let slope = crate::linalg::frobenius_dot(&grad.w, &dw)
            + grad.v.iter().zip(&dv).map(|(g, d)| crate::linalg::frobenius_dot(g, d)).sum::<f64>();
        let dir_sq = dw.norm_squared() + dv.iter().map(|d| d.norm_squared()).sum::<f64>();
        products_into(ds, &dw, &dv, &mut dir);

        // residual(s) = r − s·c1 − s²·c2
        let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
        for (i, dvi) in dv.iter().enumerate() {
            for t in 0..samples {
                let k = i * samples + t;
                let xv = &state.cache.xv[k * b * r..(k + 1) * b * r];
                let xtw = &state.cache.xtw[k * p * r..(k + 1) * p * r];
                let xdv = &dir.xv[k * b * r..(k + 1) * b * r];
                let c1 = dot(dw.as_slice(), xv) + dot(xtw, dvi.as_slice());
                let c2 = dot(dw.as_slice(), xdv);
                let res = state.residuals[k];
                s1 += res * c1;
                s2 += c1 * c1 - 2.0 * res * c2;
                s3 += c1 * c2;
                s4 += c2 * c2;
            }
        }
        let n1 = crate::linalg::frobenius_dot(&state.w, &dw)
            + state.v.iter().zip(&dv).map(|(a, d)| crate::linalg::frobenius_dot(a, d)).sum::<f64>();
        let line =
            LineModel { c: [-2.0 * s1 / n + 2.0 * cfg.ridge * n1, s2 / n + cfg.ridge * dir_sq, 2.0 * s3 / n, s4 / n] };

        let mut trial = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let d = line.delta(trial);
            if d.is_finite() && d <= ARMIJO * trial * slope {
                accepted = Some(trial);
                break;
            }
            trial *= 0.5;
        }
        let Some(s) = accepted else {
            stop = StopReason::Stalled;
            break;
        };

        let previous = (state.w.clone(), state.v.clone());
        state.w += &dw * s;
        for (vi, d) in state.v.iter_mut().zip(&dv) {
            *vi += d * s;
        }
        since_refresh += 1;
        if since_refresh >= REFRESH_EVERY {
            state.refresh();
            since_refresh = 0;
        } else {
            for (c, d) in state.cache.xv.iter_mut().zip(&dir.xv) {
                *c += s * d;
            }
            // dir.xtw holds Xᵀ D_W
            for (c, d) in state.cache.xtw.iter_mut().zip(&dir.xtw) {
                *c += s * d;
            }
            state.update_residuals();
        }
        let new_loss = state.loss();
        if !new_loss.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        if new_loss > loss {
            // roundoff beat the predicted decrease; keep the last iterate
            state.w = previous.0;
            state.v = previous.1;
            state.refresh();
            stop = StopReason::Stalled;
            break;
        }
        loss = new_loss;
        history.push(loss);
        step = 2.0 * s;
        grad = state.gradient();
        grad_sq = grad.norm_squared();
        if iteration == cfg.max_iters && libm::sqrt(grad_sq) <= cfg.grad_tol {
            stop = StopReason::GradientTolerance;
        }
    }

    Ok(FitResult {
        w: state.w,
        v: state.v,
        loss_history: history,
        converged: stop == StopReason::GradientTolerance,
        stop_reason: stop,
        gradient_norm: libm::sqrt(grad_sq),
    })
}
