//! Monte-Carlo harnesses: phase diagrams over `(I, T)`, sweeps over `B`,
//! and the concentration / perturbation-bound checks.
//!
//! Every trial derives its own seed from the master seed and its grid
//! coordinates (see [`crate::rng::derive_seed`]) and owns its generator.
//! Jobs are handed to an [`Executor`], which must return results in job
//! order; aggregation happens afterwards on the ordered rows, so results
//! never depend on how jobs were scheduled.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    estimate_a, estimate_gamma, fit_cmr, loss_and_gradient, objective, refine_gd, spectral_cmr, RecoveryScore,
    RefineConfig, SpectralOptions,
};
use crate::linalg::{eig_sym, spectral_norm, subspace_distance, sym_norm, Matrix, SymMatrix};
use crate::model::{
    davis_kahan_bound, expected_a, generate_synthetic, random_model, sample_dataset, SyntheticDims, TaskCovariances,
};
use crate::rng::{derive_seed, seeded, standard_normal_matrix, SeededRng};

/// Runs independent jobs, returning their results in job order.
pub trait Executor: Sync {
    fn map<J, R, F>(&self, jobs: Vec<J>, f: F) -> Vec<R>
    where
        J: Send,
        R: Send,
        F: Fn(J) -> R + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<J, R, F>(&self, jobs: Vec<J>, f: F) -> Vec<R>
    where
        J: Send,
        R: Send,
        F: Fn(J) -> R + Sync + Send,
    {
        jobs.into_iter().map(f).collect()
    }
}

/// How a trial draws `Γ` and the `Δ_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    #[default]
    Identity,
    /// Random SPD matrices with the given condition numbers, `Δ_i`
    /// trace-normalised.
    Random { gamma_condition: f64, delta_condition: f64 },
}

impl CovarianceSpec {
    pub fn build(&self, bands: usize, positions: usize, tasks: usize, rng: &mut SeededRng) -> Result<TaskCovariances> {
        match *self {
            CovarianceSpec::Identity => Ok(TaskCovariances::identity(bands, positions, tasks)),
            CovarianceSpec::Random { gamma_condition, delta_condition } => {
                TaskCovariances::random(bands, positions, tasks, gamma_condition, delta_condition, rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Spectral `Ŵ`, closed-form `V_i`, then refinement.
    #[default]
    Spectral,
    /// Gaussian `W` (orthonormalised) and `V_i` (unit spectral norm), then
    /// refinement.
    Random,
}

/// Everything a single synthetic recovery trial needs besides its seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub bands: usize,
    pub positions: usize,
    pub rank: usize,
    pub tasks: usize,
    pub samples: usize,
    pub covariance: CovarianceSpec,
    pub init_mode: InitMode,
    pub success_threshold: f64,
    pub refine: RefineConfig,
    pub spectral: SpectralOptions,
}

/// One row of a phase diagram or sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub bands: usize,
    /// number of tasks `I`
    pub cell_i: usize,
    /// samples per task `T`
    pub cell_t: usize,
    pub trial: usize,
    pub seed: u64,
    pub dist: Option<f64>,
    pub sq_corr: Option<f64>,
    pub success: bool,
    pub error_kind: Option<String>,
}

fn random_start(spec: &TrialSpec, rng: &mut SeededRng) -> (Matrix, Vec<Matrix>) {
    let w = standard_normal_matrix(spec.bands, spec.rank, rng).qr().q();
    let v = (0..spec.tasks)
        .map(|_| {
            let vi = standard_normal_matrix(spec.positions, spec.rank, rng);
            let norm = spectral_norm(&vi);
            vi / norm
        })
        .collect();
    (w, v)
}

fn recover(spec: &TrialSpec, seed: u64) -> Result<RecoveryScore> {
    let mut rng = seeded(seed);
    let cov = spec.covariance.build(spec.bands, spec.positions, spec.tasks, &mut rng)?;
    let dims = SyntheticDims {
        bands: spec.bands,
        positions: spec.positions,
        rank: spec.rank,
        tasks: spec.tasks,
        samples: spec.samples,
    };
    let (model, ds) = generate_synthetic(&dims, &cov, &mut rng)?;
    let fit = match spec.init_mode {
        InitMode::Spectral => fit_cmr(&ds, spec.rank, &spec.spectral, &spec.refine)?.1,
        InitMode::Random => {
            let (w0, v0) = random_start(spec, &mut seeded(derive_seed(seed, &[1])));
            refine_gd(&w0, &v0, &ds, &spec.refine)?
        }
    };
    RecoveryScore::compute(model.w(), &fit.w)
}

/// Generates an instance from `seed`, fits it and scores the recovered `W`.
/// Estimator failures are recorded as unsuccessful trials.
pub fn run_trial(spec: &TrialSpec, trial: usize, seed: u64) -> TrialRecord {
    let mut record = TrialRecord {
        bands: spec.bands,
        cell_i: spec.tasks,
        cell_t: spec.samples,
        trial,
        seed,
        dist: None,
        sq_corr: None,
        success: false,
        error_kind: None,
    };
    match recover(spec, seed) {
        Ok(score) => {
            record.dist = Some(score.dist);
            record.sq_corr = Some(score.sq_corr);
            record.success = score.is_success(spec.success_threshold);
        }
        Err(e) => record.error_kind = Some(e.kind().to_string()),
    }
    record
}

fn default_trials() -> usize {
    50
}

fn default_threshold() -> f64 {
    0.9
}

fn check_common(trials: usize, threshold: f64, values: &[&[usize]]) -> Result<()> {
    if trials == 0 {
        return Err(Error::OutOfDomain("trials_per_cell must be ≥ 1".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::OutOfDomain(alloc::format!("success_threshold must lie in (0, 1), got {threshold}")));
    }
    for v in values {
        if v.is_empty() || v.contains(&0) {
            return Err(Error::OutOfDomain("grid values must be non-empty and ≥ 1".into()));
        }
    }
    Ok(())
}

/// Grid of `(I, T)` cells, each evaluated with `trials_per_cell` trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGridConfig {
    pub b: usize,
    pub p: usize,
    pub r: usize,
    pub i_values: Vec<usize>,
    pub t_values: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials_per_cell: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    #[serde(default)]
    pub covariance: CovarianceSpec,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub spectral: SpectralOptions,
}

impl PhaseGridConfig {
    /// `B = 20`, `P = 10`, `R = 1`, identity covariances, 50 trials per cell.
    pub fn with_grid(i_values: Vec<usize>, t_values: Vec<usize>) -> Self {
        Self {
            b: 20,
            p: 10,
            r: 1,
            i_values,
            t_values,
            trials_per_cell: default_trials(),
            master_seed: 0,
            init_mode: InitMode::Spectral,
            success_threshold: default_threshold(),
            covariance: CovarianceSpec::Identity,
            refine: RefineConfig::default(),
            spectral: SpectralOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_common(
            self.trials_per_cell,
            self.success_threshold,
            &[&self.i_values, &self.t_values, &[self.b, self.p, self.r]],
        )?;
        self.refine.validate()
    }

    pub fn trial_spec(&self, tasks: usize, samples: usize) -> TrialSpec {
        TrialSpec {
            bands: self.b,
            positions: self.p,
            rank: self.r,
            tasks,
            samples,
            covariance: self.covariance,
            init_mode: self.init_mode,
            success_threshold: self.success_threshold,
            refine: self.refine,
            spectral: self.spectral,
        }
    }

    /// Seed of trial `trial` in cell `(row, col)`.
    pub fn trial_seed(&self, row: usize, col: usize, trial: usize) -> u64 {
        derive_seed(self.master_seed, &[row as u64, col as u64, trial as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagramResult {
    pub config: PhaseGridConfig,
    /// `success_rate[row][col]` for `i_values[row]`, `t_values[col]`.
    pub success_rate: Vec<Vec<f64>>,
    /// Ordered by `(row, col, trial)`.
    pub records: Vec<TrialRecord>,
}

fn success_fraction(records: &[TrialRecord]) -> f64 {
    records.iter().filter(|r| r.success).count() as f64 / records.len() as f64
}

pub fn run_phase_diagram<E: Executor>(cfg: &PhaseGridConfig, exec: &E) -> Result<PhaseDiagramResult> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for (row, &tasks) in cfg.i_values.iter().enumerate() {
        for (col, &samples) in cfg.t_values.iter().enumerate() {
            for trial in 0..cfg.trials_per_cell {
                jobs.push((cfg.trial_spec(tasks, samples), trial, cfg.trial_seed(row, col, trial)));
            }
        }
    }
    let records = exec.map(jobs, |(spec, trial, seed)| run_trial(&spec, trial, seed));
    let per_row = cfg.t_values.len() * cfg.trials_per_cell;
    let success_rate =
        records.chunks(per_row).map(|row| row.chunks(cfg.trials_per_cell).map(success_fraction).collect()).collect();
    Ok(PhaseDiagramResult { config: cfg.clone(), success_rate, records })
}

/// Recovery as a function of `B` at fixed `(I, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSweepConfig {
    pub b_values: Vec<usize>,
    pub p: usize,
    pub r: usize,
    pub tasks: usize,
    pub samples: usize,
    #[serde(default = "default_trials")]
    pub trials_per_cell: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    #[serde(default)]
    pub covariance: CovarianceSpec,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub spectral: SpectralOptions,
}

impl BSweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(
            self.trials_per_cell,
            self.success_threshold,
            &[&self.b_values, &[self.p, self.r, self.tasks, self.samples]],
        )?;
        self.refine.validate()
    }

    /// The sweep as a single-column phase grid for bands `b_values[row]`.
    fn row_grid(&self, row: usize) -> PhaseGridConfig {
        PhaseGridConfig {
            b: self.b_values[row],
            p: self.p,
            r: self.r,
            i_values: vec![self.tasks],
            t_values: vec![self.samples],
            trials_per_cell: self.trials_per_cell,
            master_seed: self.master_seed,
            init_mode: self.init_mode,
            success_threshold: self.success_threshold,
            covariance: self.covariance,
            refine: self.refine,
            spectral: self.spectral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSweepResult {
    pub config: BSweepConfig,
    /// One entry per `b_values` element.
    pub success_rate: Vec<f64>,
    pub median_sq_corr: Vec<f64>,
    pub records: Vec<TrialRecord>,
}

pub fn run_b_sweep<E: Executor>(cfg: &BSweepConfig, exec: &E) -> Result<BSweepResult> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for row in 0..cfg.b_values.len() {
        let grid = cfg.row_grid(row);
        for trial in 0..cfg.trials_per_cell {
            jobs.push((grid.trial_spec(cfg.tasks, cfg.samples), trial, grid.trial_seed(row, 0, trial)));
        }
    }
    let records = exec.map(jobs, |(spec, trial, seed)| run_trial(&spec, trial, seed));
    let rows: Vec<&[TrialRecord]> = records.chunks(cfg.trials_per_cell).collect();
    let success_rate = rows.iter().map(|r| success_fraction(r)).collect();
    let median_sq_corr =
        rows.iter().map(|r| median(&r.iter().map(|x| x.sq_corr.unwrap_or(0.0)).collect::<Vec<_>>())).collect();
    Ok(BSweepResult { config: cfg.clone(), success_rate, median_sq_corr, records })
}

/// Adjacent pairs `(violations, total)` where the rate drops along `I`
/// (down a column) or along `T` (across a row).
pub fn monotonicity_violations(grid: &[Vec<f64>]) -> (usize, usize) {
    let mut bad = 0;
    let mut total = 0;
    for (r, row) in grid.iter().enumerate() {
        for c in 0..row.len() {
            if c + 1 < row.len() {
                total += 1;
                bad += usize::from(row[c + 1] < row[c]);
            }
            if let Some(next) = grid.get(r + 1) {
                total += 1;
                bad += usize::from(next[c] < row[c]);
            }
        }
    }
    (bad, total)
}

/// Sample median (mean of the two middle values for even length).
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linearly interpolated sample quantile; `NaN` for an empty slice.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Errors observed at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationLevel {
    /// `I·T` for the moment matrix, `I·T·P` for the covariance.
    pub sample_size: usize,
    pub tasks: usize,
    pub samples: usize,
    /// One error per repetition, in repetition order.
    pub errors: Vec<f64>,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

impl ConcentrationLevel {
    fn new(sample_size: usize, tasks: usize, samples: usize, errors: Vec<f64>) -> Self {
        Self {
            sample_size,
            tasks,
            samples,
            median: median(&errors),
            q10: quantile(&errors, 0.1),
            q90: quantile(&errors, 0.9),
            errors,
        }
    }
}

/// One trial of the perturbation-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrial {
    pub seed: u64,
    /// `‖Γ̂ − Γ‖₂ / λ_min(Γ)`
    pub eps1: f64,
    /// `‖Â − A‖₂`
    pub eps2: f64,
    pub dist: f64,
    /// `None` when `ε₁ ≥ 1`.
    pub bound: Option<f64>,
}

impl BoundTrial {
    pub fn is_valid(&self) -> bool {
        self.bound.is_some()
    }

    pub fn is_violation(&self) -> bool {
        self.bound.is_some_and(|f| self.dist > f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConcentrationReport {
    pub levels: Vec<ConcentrationLevel>,
    pub bound_trials: Vec<BoundTrial>,
    pub valid: usize,
    pub excluded: usize,
    pub violations: usize,
}

impl ConcentrationReport {
    /// `median(level k) / median(level k + 1)` for consecutive levels.
    pub fn median_ratios(&self) -> Vec<f64> {
        self.levels.windows(2).map(|w| w[0].median / w[1].median).collect()
    }
}

/// Sweep over the number of tasks for the moment-matrix and covariance
/// concentration checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    pub b: usize,
    pub p: usize,
    pub r: usize,
    pub samples: usize,
    pub task_values: Vec<usize>,
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub covariance: CovarianceSpec,
}

impl ConcentrationConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.repetitions, 0.5, &[&self.task_values, &[self.b, self.p, self.r, self.samples]])?;
        if self.r > self.b.min(self.p) {
            return Err(Error::OutOfDomain(alloc::format!("rank {} exceeds min(B, P)", self.r)));
        }
        Ok(())
    }

    fn dims(&self, tasks: usize) -> SyntheticDims {
        SyntheticDims { bands: self.b, positions: self.p, rank: self.r, tasks, samples: self.samples }
    }
}

fn concentration<E, F>(
    cfg: &ConcentrationConfig,
    exec: &E,
    per_trial: F,
    size: impl Fn(usize) -> usize,
) -> Result<ConcentrationReport>
where
    E: Executor,
    F: Fn(&ConcentrationConfig, usize, u64) -> Result<f64> + Sync + Send,
{
    cfg.validate()?;
    let mut jobs = Vec::new();
    for (k, &tasks) in cfg.task_values.iter().enumerate() {
        for rep in 0..cfg.repetitions {
            jobs.push((tasks, derive_seed(cfg.master_seed, &[k as u64, rep as u64])));
        }
    }
    let errors = exec.map(jobs, |(tasks, seed)| per_trial(cfg, tasks, seed));
    let errors = errors.into_iter().collect::<Result<Vec<_>>>()?;
    let levels = cfg
        .task_values
        .iter()
        .zip(errors.chunks(cfg.repetitions))
        .map(|(&tasks, e)| ConcentrationLevel::new(size(tasks), tasks, cfg.samples, e.to_vec()))
        .collect();
    Ok(ConcentrationReport { levels, ..Default::default() })
}

fn a_error(cfg: &ConcentrationConfig, tasks: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let cov = cfg.covariance.build(cfg.b, cfg.p, tasks, &mut rng)?;
    let (model, ds) = generate_synthetic(&cfg.dims(tasks), &cov, &mut rng)?;
    let a_hat = estimate_a(&ds)?;
    let expected = expected_a(&model, &cov, cfg.samples)?;
    sym_norm(&SymMatrix::new(a_hat.as_matrix() - expected.a.as_matrix())?)
}

fn gamma_error(cfg: &ConcentrationConfig, tasks: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let cov = cfg.covariance.build(cfg.b, cfg.p, tasks, &mut rng)?;
    let (_, ds) = generate_synthetic(&cfg.dims(tasks), &cov, &mut rng)?;
    let gamma_hat = estimate_gamma(&ds)?;
    let lmin = eig_sym(cov.gamma())?.min();
    Ok(sym_norm(&SymMatrix::new(gamma_hat.as_matrix() - cov.gamma().as_matrix())?)? / lmin)
}

/// `‖Â − A‖₂` at each number of tasks (`T` fixed), one fresh model per
/// repetition.
pub fn verify_lemma1<E: Executor>(cfg: &ConcentrationConfig, exec: &E) -> Result<ConcentrationReport> {
    concentration(cfg, exec, a_error, |tasks| tasks * cfg.samples)
}

/// `‖Γ̂ − Γ‖₂ / λ_min(Γ)` at each number of tasks.
pub fn verify_lemma2<E: Executor>(cfg: &ConcentrationConfig, exec: &E) -> Result<ConcentrationReport> {
    concentration(cfg, exec, gamma_error, |tasks| tasks * cfg.samples * cfg.p)
}

/// Batch of end-to-end checks of `dist(Ŵ, W) ≤ f(ε₁, ε₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckConfig {
    pub b: usize,
    pub p: usize,
    pub r: usize,
    pub tasks: usize,
    pub samples: usize,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub covariance: CovarianceSpec,
    #[serde(default)]
    pub spectral: SpectralOptions,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        Self {
            b: 10,
            p: 5,
            r: 1,
            tasks: 200,
            samples: 20,
            trials: 100,
            master_seed: 0,
            covariance: CovarianceSpec::Random { gamma_condition: 4.0, delta_condition: 4.0 },
            spectral: SpectralOptions::default(),
        }
    }
}

fn bound_trial(cfg: &BoundCheckConfig, seed: u64) -> Result<BoundTrial> {
    let mut rng = seeded(seed);
    let cov = cfg.covariance.build(cfg.b, cfg.p, cfg.tasks, &mut rng)?;
    let dims = SyntheticDims { bands: cfg.b, positions: cfg.p, rank: cfg.r, tasks: cfg.tasks, samples: cfg.samples };
    let (model, ds) = generate_synthetic(&dims, &cov, &mut rng)?;
    let est = spectral_cmr(&ds, cfg.r, &cfg.spectral)?;
    let expected = expected_a(&model, &cov, cfg.samples)?;
    let lmin = eig_sym(cov.gamma())?.min();
    let eps1 = sym_norm(&SymMatrix::new(est.gamma_hat.as_matrix() - cov.gamma().as_matrix())?)? / lmin;
    let eps2 = sym_norm(&SymMatrix::new(est.a_hat.as_matrix() - expected.a.as_matrix())?)?;
    let dist = subspace_distance(&est.w_hat, model.w())?;
    let bound = if eps1 < 1.0 { Some(davis_kahan_bound(eps1, eps2, &model, &cov, &expected)?) } else { None };
    Ok(BoundTrial { seed, eps1, eps2, dist, bound })
}

pub fn verify_lemma3<E: Executor>(cfg: &BoundCheckConfig, exec: &E) -> Result<ConcentrationReport> {
    if cfg.trials == 0 {
        return Err(Error::OutOfDomain("trials must be ≥ 1".into()));
    }
    let seeds: Vec<u64> = (0..cfg.trials).map(|k| derive_seed(cfg.master_seed, &[k as u64])).collect();
    let trials = exec.map(seeds, |seed| bound_trial(cfg, seed)).into_iter().collect::<Result<Vec<_>>>()?;
    let valid = trials.iter().filter(|t| t.is_valid()).count();
    let violations = trials.iter().filter(|t| t.is_violation()).count();
    Ok(ConcentrationReport {
        levels: Vec::new(),
        excluded: trials.len() - valid,
        valid,
        violations,
        bound_trials: trials,
    })
}

/// Mean of `Â` over many datasets drawn from one fixed model, against the
/// closed-form expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCheckConfig {
    pub b: usize,
    pub p: usize,
    pub r: usize,
    pub tasks: usize,
    pub samples: usize,
    pub datasets: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub covariance: CovarianceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCheck {
    /// `‖mean(Â) − A‖₂ / ‖A‖₂`
    pub relative_error: f64,
    pub expected_norm: f64,
}

impl MeanCheckConfig {
    fn dims(&self) -> SyntheticDims {
        SyntheticDims { bands: self.b, positions: self.p, rank: self.r, tasks: self.tasks, samples: self.samples }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets == 0 {
            return Err(Error::OutOfDomain("datasets must be ≥ 1".into()));
        }
        self.dims().validate()
    }
}

pub fn lemma1_mean_check<E: Executor>(cfg: &MeanCheckConfig, exec: &E) -> Result<MeanCheck> {
    cfg.validate()?;
    let dims = cfg.dims();
    let mut rng = seeded(derive_seed(cfg.master_seed, &[0]));
    let cov = cfg.covariance.build(cfg.b, cfg.p, cfg.tasks, &mut rng)?;
    let model = random_model(&dims, &mut rng)?;
    let expected = expected_a(&model, &cov, cfg.samples)?;
    let seeds: Vec<u64> = (0..cfg.datasets).map(|k| derive_seed(cfg.master_seed, &[1, k as u64])).collect();
    let draws = exec.map(seeds, |seed| {
        let ds = sample_dataset(&model, &cov, cfg.samples, &mut seeded(seed))?;
        estimate_a(&ds)
    });
    let mut mean = Matrix::zeros(cfg.b, cfg.b);
    for a in draws {
        mean += a?.as_matrix();
    }
    mean /= cfg.datasets as f64;
    let expected_norm = sym_norm(&expected.a)?;
    let err = sym_norm(&SymMatrix::new(mean - expected.a.as_matrix())?)?;
    Ok(MeanCheck { relative_error: err / expected_norm, expected_norm })
}

/// Finite-difference check of the refinement gradient on random instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub b: usize,
    pub p: usize,
    pub r: usize,
    pub tasks: usize,
    pub samples: usize,
    pub instances: usize,
    /// Central-difference step.
    pub step: f64,
    pub ridge: f64,
    #[serde(default)]
    pub master_seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { b: 6, p: 4, r: 2, tasks: 3, samples: 5, instances: 20, step: 1e-5, ridge: 0.1, master_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckInstance {
    pub seed: u64,
    pub coordinates: usize,
    /// Largest `|g − fd| / max(|g|, |fd|, 1e-6·‖g‖∞)` over all coordinates.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: Vec<GradcheckInstance>,
    pub max_rel_error: f64,
}

fn gradcheck_instance(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckInstance> {
    let dims = SyntheticDims { bands: cfg.b, positions: cfg.p, rank: cfg.r, tasks: cfg.tasks, samples: cfg.samples };
    let mut rng = seeded(seed);
    let cov = TaskCovariances::identity(cfg.b, cfg.p, cfg.tasks);
    let (_, ds) = generate_synthetic(&dims, &cov, &mut rng)?;
    let w = standard_normal_matrix(cfg.b, cfg.r, &mut rng);
    let v: Vec<Matrix> = (0..cfg.tasks).map(|_| standard_normal_matrix(cfg.p, cfg.r, &mut rng)).collect();
    let (_, grad) = loss_and_gradient(&w, &v, &ds, cfg.ridge)?;

    let h = cfg.step;
    let mut pairs = Vec::with_capacity(w.len() + v.iter().map(|m| m.len()).sum::<usize>());
    for k in 0..w.len() {
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus[k] += h;
        minus[k] -= h;
        let fd = (objective(&plus, &v, &ds, cfg.ridge)? - objective(&minus, &v, &ds, cfg.ridge)?) / (2.0 * h);
        pairs.push((grad.w[k], fd));
    }
    for i in 0..v.len() {
        for k in 0..v[i].len() {
            let (mut plus, mut minus) = (v.clone(), v.clone());
            plus[i][k] += h;
            minus[i][k] -= h;
            let fd = (objective(&w, &plus, &ds, cfg.ridge)? - objective(&w, &minus, &ds, cfg.ridge)?) / (2.0 * h);
            pairs.push((grad.v[i][k], fd));
        }
    }
    let floor = 1e-6 * pairs.iter().fold(0.0f64, |m, (g, _)| m.max(g.abs()));
    let worst = pairs
        .iter()
        .map(|(g, fd)| (g - fd).abs() / g.abs().max(fd.abs()).max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let coordinates = pairs.len();
    Ok(GradcheckInstance { seed, coordinates, max_rel_error: worst })
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || !(self.step > 0.0) {
            return Err(Error::OutOfDomain("gradcheck needs ≥ 1 instance and a positive step".into()));
        }
        SyntheticDims { bands: self.b, positions: self.p, rank: self.r, tasks: self.tasks, samples: self.samples }
            .validate()
    }
}

pub fn gradcheck<E: Executor>(cfg: &GradcheckConfig, exec: &E) -> Result<GradcheckReport> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.instances).map(|k| derive_seed(cfg.master_seed, &[k as u64])).collect();
    let instances = exec.map(seeds, |seed| gradcheck_instance(cfg, seed)).into_iter().collect::<Result<Vec<_>>>()?;
    let max_rel_error = instances.iter().map(|i| i.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { instances, max_rel_error })
}
