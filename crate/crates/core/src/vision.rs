//! Image pipeline: block reshaping into bands, a random ReLU band uplift,
//! one-vs-one digit tasks and the classification comparison between CMR and
//! its baselines.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::estimator::{
    frr_baseline, local_features, refine_gd, ridge_regression, spectral_cmr, spectral_cmr_nw, RefineConfig, RidgeFit,
    SpectralEstimate, SpectralOptions,
};
use crate::experiment::Executor;
use crate::linalg::Matrix;
use crate::model::{TaskDataset, TaskView};
use crate::rng::{derive_seed, fill_standard_normal, seeded};

/// An image split into `block × block` tiles: column `p` of `bands` holds
/// tile `p` (row-major over the tile grid) and row `dy·block + dx` holds the
/// pixel at offset `(dy, dx)` inside every tile.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedImage {
    pub bands: Matrix,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl BandedImage {
    pub fn band_count(&self) -> usize {
        self.bands.nrows()
    }

    pub fn positions(&self) -> usize {
        self.bands.ncols()
    }

    /// Side length of a square tile grid.
    pub fn spatial_side(&self) -> Option<usize> {
        (self.grid_rows == self.grid_cols).then_some(self.grid_rows)
    }
}

pub fn block_reshape(image: &Matrix, block: usize) -> Result<BandedImage> {
    let (h, w) = image.shape();
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::NotDivisible { block, rows: h, cols: w });
    }
    let (gr, gc) = (h / block, w / block);
    let mut bands = Matrix::zeros(block * block, gr * gc);
    for ty in 0..gr {
        for tx in 0..gc {
            let p = ty * gc + tx;
            for dy in 0..block {
                for dx in 0..block {
                    bands[(dy * block + dx, p)] = image[(ty * block + dy, tx * block + dx)];
                }
            }
        }
    }
    Ok(BandedImage { bands, grid_rows: gr, grid_cols: gc })
}

/// Inverse of [`block_reshape`].
pub fn block_unshape(img: &BandedImage, block: usize) -> Result<Matrix> {
    if block == 0 || img.band_count() != block * block || img.positions() != img.grid_rows * img.grid_cols {
        return Err(shape_err!(
            "{} bands over {} positions do not form {}x{} tiles on a {}x{} grid",
            img.band_count(),
            img.positions(),
            block,
            block,
            img.grid_rows,
            img.grid_cols
        ));
    }
    let mut out = Matrix::zeros(img.grid_rows * block, img.grid_cols * block);
    for ty in 0..img.grid_rows {
        for tx in 0..img.grid_cols {
            let p = ty * img.grid_cols + tx;
            for dy in 0..block {
                for dx in 0..block {
                    out[(ty * block + dy, tx * block + dx)] = img.bands[(dy * block + dx, p)];
                }
            }
        }
    }
    Ok(out)
}

/// Random features applied to every spatial position:
/// `x ↦ max(0, projection·x + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpliftMap {
    pub projection: Matrix,
    pub bias: Vec<f64>,
    pub seed: u64,
}

impl UpliftMap {
    /// Projection entries `N(0, 1/b_raw)`, bias entries `N(0, 1)`.
    pub fn random(b_out: usize, b_raw: usize, seed: u64) -> Result<Self> {
        if b_out == 0 || b_raw == 0 {
            return Err(shape_err!("uplift needs positive band counts, got {} -> {}", b_raw, b_out));
        }
        let mut rng = seeded(seed);
        let mut projection = Matrix::zeros(b_out, b_raw);
        fill_standard_normal(&mut rng, projection.as_mut_slice());
        projection /= libm::sqrt(b_raw as f64);
        let mut bias = vec![0.0; b_out];
        fill_standard_normal(&mut rng, &mut bias);
        Ok(Self { projection, bias, seed })
    }

    pub fn from_parts(projection: Matrix, bias: Vec<f64>, seed: u64) -> Result<Self> {
        if bias.len() != projection.nrows() {
            return Err(shape_err!("bias has {} entries for {} output bands", bias.len(), projection.nrows()));
        }
        Ok(Self { projection, bias, seed })
    }

    pub fn output_bands(&self) -> usize {
        self.projection.nrows()
    }

    pub fn apply(&self, img: &BandedImage) -> Result<BandedImage> {
        if img.band_count() != self.projection.ncols() {
            return Err(shape_err!("uplift expects {} bands, image has {}", self.projection.ncols(), img.band_count()));
        }
        let mut bands = &self.projection * &img.bands;
        for mut col in bands.column_iter_mut() {
            for (x, b) in col.iter_mut().zip(&self.bias) {
                *x = (*x + b).max(0.0);
            }
        }
        Ok(BandedImage { bands, grid_rows: img.grid_rows, grid_cols: img.grid_cols })
    }
}

/// Grayscale images (`height × width`, row-major, values in `[0, 1]`) with
/// integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width * labels.len() {
            return Err(shape_err!(
                "{} pixel values for {} images of {}x{}",
                pixels.len(),
                labels.len(),
                height,
                width
            ));
        }
        Ok(Self { height, width, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image `k` as a `height × width` matrix.
    pub fn image(&self, k: usize) -> Matrix {
        let n = self.height * self.width;
        Matrix::from_row_slice(self.height, self.width, &self.pixels[k * n..(k + 1) * n])
    }
}

/// One binary problem: `digit_a` is labelled `+1`, `digit_b` is `−1`.
/// Index lists are sorted and refer to an [`ImageSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTask {
    pub digit_a: u8,
    pub digit_b: u8,
    pub train: Vec<usize>,
    pub train_labels: Vec<f64>,
    pub test: Vec<usize>,
    pub test_labels: Vec<f64>,
}

impl PairTask {
    /// Draws `t_train / 2` training images per digit and up to
    /// `test_per_class` test images per digit from the rest (all of them
    /// when `None`). The draw for a digit depends only on
    /// `(split_seed, digit)`, so swapping the two digits selects the same
    /// images with opposite labels.
    pub fn sample(
        labels: &[u8],
        digit_a: u8,
        digit_b: u8,
        t_train: usize,
        test_per_class: Option<usize>,
        split_seed: u64,
    ) -> Result<Self> {
        if digit_a == digit_b {
            return Err(Error::OutOfDomain(alloc::format!("pair needs two distinct digits, got {digit_a} twice")));
        }
        if t_train < 2 || !t_train.is_multiple_of(2) {
            return Err(Error::OutOfDomain(alloc::format!("t_train must be even and ≥ 2, got {t_train}")));
        }
        let per_class = t_train / 2;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for digit in [digit_a, digit_b] {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == digit).collect();
            let wanted_test = test_per_class.unwrap_or(idx.len().saturating_sub(per_class)).max(1);
            if idx.len() < per_class + wanted_test {
                return Err(Error::InsufficientSamples(alloc::format!(
                    "digit {digit} has {} images, need {} for training and {} for testing",
                    idx.len(),
                    per_class,
                    wanted_test
                )));
            }
            idx.shuffle(&mut seeded(derive_seed(split_seed, &[u64::from(digit)])));
            train.extend_from_slice(&idx[..per_class]);
            test.extend_from_slice(&idx[per_class..per_class + wanted_test]);
        }
        train.sort_unstable();
        test.sort_unstable();
        let sign = |k: &usize| if labels[*k] == digit_a { 1.0 } else { -1.0 };
        Ok(Self {
            digit_a,
            digit_b,
            train_labels: train.iter().map(sign).collect(),
            test_labels: test.iter().map(sign).collect(),
            train,
            test,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Shared `Ŵ` from all tasks, per-task ridge on `vec(XᵀŴ)`.
    Cmr,
    /// The same, with `Ŵ` estimated from each task alone.
    Cmr1,
    /// Per-task ridge on the raw uplifted features.
    Frr,
    /// Shared `Ŵ` without whitening.
    CmrNw,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cmr => "cmr",
            Method::Cmr1 => "cmr1",
            Method::Frr => "frr",
            Method::CmrNw => "cmr-nw",
        }
    }
}

/// Settings of the pairwise classification study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Tile side of the block reshape.
    pub block: usize,
    /// Bands after the uplift.
    pub uplift_bands: usize,
    pub uplift_seed: u64,
    /// Digit pairs `(a, b)`; `a` is the positive class.
    pub pairs: Vec<(u8, u8)>,
    pub t_train: usize,
    /// `None` uses every remaining image of the two digits.
    pub test_per_class: Option<usize>,
    pub repetitions: usize,
    /// Repetition `k` splits with seed `derive_seed(split_seed, [k])`.
    pub split_seed: u64,
    pub methods: Vec<Method>,
    /// `R` for the CMR variants.
    pub rank: usize,
    pub cmr_ridge: f64,
    pub cmr1_ridge: f64,
    pub frr_ridge: f64,
    /// Optional refinement of the shared `(Ŵ, V_i)` before the final
    /// per-task fit.
    pub refine: Option<RefineConfig>,
    pub spectral: SpectralOptions,
}

/// The ten pairs at positions `⌊45k/10⌋`, k = 0..9, of the lexicographic
/// list `(0,1), (0,2), …, (8,9)`.
pub fn desk_pairs() -> Vec<(u8, u8)> {
    let all = all_pairs();
    (0..10).map(|k| all[k * all.len() / 10]).collect()
}

/// All 45 pairs `a < b` in lexicographic order.
pub fn all_pairs() -> Vec<(u8, u8)> {
    let mut v = Vec::with_capacity(45);
    for a in 0..10u8 {
        for b in (a + 1)..10 {
            v.push((a, b));
        }
    }
    v
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            block: 4,
            uplift_bands: 100,
            uplift_seed: 0,
            pairs: desk_pairs(),
            t_train: 50,
            test_per_class: None,
            repetitions: 5,
            split_seed: 0,
            methods: vec![Method::Cmr, Method::Cmr1, Method::Frr, Method::CmrNw],
            rank: 4,
            cmr_ridge: 100.0,
            cmr1_ridge: 300.0,
            frr_ridge: 100.0,
            refine: None,
            spectral: SpectralOptions { gamma_shrinkage: 1e-3, ..SpectralOptions::default() },
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() || self.repetitions == 0 || self.methods.is_empty() {
            return Err(Error::OutOfDomain("need at least one pair, repetition and method".into()));
        }
        if self.rank == 0 || self.uplift_bands == 0 || self.block == 0 {
            return Err(Error::OutOfDomain("rank, uplift_bands and block must be ≥ 1".into()));
        }
        for r in [self.cmr_ridge, self.cmr1_ridge, self.frr_ridge] {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::OutOfDomain(alloc::format!("ridge must be finite and ≥ 0, got {r}")));
            }
        }
        if let Some(cfg) = &self.refine {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// Test accuracy of one method on one task in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub method: Method,
    pub t_train: usize,
    pub repetition: usize,
    pub digit_a: u8,
    pub digit_b: u8,
    pub accuracy: f64,
    pub error_kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Mean over repetitions of the mean accuracy over tasks.
    pub mean_accuracy: f64,
    pub per_repetition: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResult {
    pub config: ClassifyConfig,
    /// Ordered by `(repetition, method, task)`.
    pub records: Vec<AccuracyRecord>,
    pub summary: Vec<MethodSummary>,
}

/// Uplifted band images, computed on first use.
pub struct FeatureCache<'a> {
    images: &'a ImageSet,
    block: usize,
    map: UpliftMap,
    cache: Vec<Option<Matrix>>,
}

impl<'a> FeatureCache<'a> {
    pub fn new(images: &'a ImageSet, block: usize, map: UpliftMap) -> Self {
        Self { images, block, map, cache: vec![None; images.len()] }
    }

    pub fn features(&mut self, k: usize) -> Result<&Matrix> {
        if self.cache[k].is_none() {
            let banded = block_reshape(&self.images.image(k), self.block)?;
            self.cache[k] = Some(self.map.apply(&banded)?.bands);
        }
        Ok(self.cache[k].as_ref().unwrap())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.map.output_bands(), (self.images.height / self.block) * (self.images.width / self.block))
    }
}

/// Training designs of every task as one [`TaskDataset`] (all tasks share
/// `T = t_train`).
fn training_set(tasks: &[PairTask], features: &mut FeatureCache<'_>) -> Result<TaskDataset> {
    let (b, p) = features.shape();
    let t = tasks[0].train.len();
    let mut ds = TaskDataset::zeros(b, p, tasks.len(), t);
    let mut y = Vec::with_capacity(tasks.len() * t);
    for (i, task) in tasks.iter().enumerate() {
        for (s, &k) in task.train.iter().enumerate() {
            ds.x_mut(i, s).copy_from_slice(features.features(k)?.as_slice());
        }
        y.extend_from_slice(&task.train_labels);
    }
    ds.set_responses(y)?;
    Ok(ds)
}

fn accuracy(fit: &RidgeFit, rows: &Matrix, labels: &[f64]) -> f64 {
    let correct = rows
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let pred = row.iter().zip(fit.weights.iter()).map(|(a, b)| a * b).sum::<f64>() + fit.intercept;
            pred * y > 0.0
        })
        .count();
    correct as f64 / labels.len() as f64
}

/// Rows `vec(Xᵀ W)` for the listed images.
fn projected_rows(w: &Matrix, idx: &[usize], features: &mut FeatureCache<'_>) -> Result<Matrix> {
    let (b, p) = features.shape();
    let mut rows = Matrix::zeros(idx.len(), p * w.ncols());
    for (s, &k) in idx.iter().enumerate() {
        let x = features.features(k)?;
        if x.nrows() != b {
            return Err(shape_err!("feature map has {} bands, expected {}", x.nrows(), b));
        }
        let xtw = x.transpose() * w;
        for (j, v) in xtw.iter().enumerate() {
            rows[(s, j)] = *v;
        }
    }
    Ok(rows)
}

fn raw_rows(idx: &[usize], features: &mut FeatureCache<'_>) -> Result<Matrix> {
    let (b, p) = features.shape();
    let mut rows = Matrix::zeros(idx.len(), b * p);
    for (s, &k) in idx.iter().enumerate() {
        for (j, v) in features.features(k)?.iter().enumerate() {
            rows[(s, j)] = *v;
        }
    }
    Ok(rows)
}

/// Shared `Ŵ` for the pooled variants, optionally refined.
fn shared_mechanism(method: Method, ds: &TaskDataset, cfg: &ClassifyConfig) -> Result<Matrix> {
    let est: SpectralEstimate = match method {
        Method::CmrNw => spectral_cmr_nw(ds, cfg.rank, &cfg.spectral)?,
        _ => spectral_cmr(ds, cfg.rank, &cfg.spectral)?,
    };
    match &cfg.refine {
        None => Ok(est.w_hat),
        Some(rc) => {
            let v0 = crate::estimator::fit_all_local(&est.w_hat, ds, cfg.cmr_ridge)?;
            Ok(refine_gd(&est.w_hat, &v0, ds, rc)?.w)
        }
    }
}

/// Accuracy of `method` on every task of one repetition.
fn evaluate_method(
    method: Method,
    tasks: &[PairTask],
    ds: &TaskDataset,
    cfg: &ClassifyConfig,
    features: &mut FeatureCache<'_>,
) -> Vec<Result<f64>> {
    let shared = match method {
        Method::Cmr | Method::CmrNw => Some(shared_mechanism(method, ds, cfg)),
        _ => None,
    };
    tasks
        .iter()
        .enumerate()
        .map(|(i, task)| -> Result<f64> {
            let view: TaskView<'_> = ds.task(i);
            match method {
                Method::Frr => {
                    let train = raw_rows(&task.train, features)?;
                    let fit = frr_baseline(&[train], core::slice::from_ref(&task.train_labels), cfg.frr_ridge, true)?;
                    let test = raw_rows(&task.test, features)?;
                    Ok(accuracy(&fit[0], &test, &task.test_labels))
                }
                Method::Cmr1 => {
                    let single = ds.single_task(i);
                    let w = spectral_cmr(&single, cfg.rank, &cfg.spectral)?.w_hat;
                    let fit = ridge_regression(&local_features(&w, &view), view.responses(), cfg.cmr1_ridge, true)?;
                    let test = projected_rows(&w, &task.test, features)?;
                    Ok(accuracy(&fit, &test, &task.test_labels))
                }
                Method::Cmr | Method::CmrNw => {
                    let w = match shared.as_ref().unwrap() {
                        Ok(w) => w,
                        Err(e) => return Err(e.clone()),
                    };
                    let fit = ridge_regression(&local_features(w, &view), view.responses(), cfg.cmr_ridge, true)?;
                    let test = projected_rows(w, &task.test, features)?;
                    Ok(accuracy(&fit, &test, &task.test_labels))
                }
            }
        })
        .collect()
}

/// Builds the pair tasks of every repetition.
pub fn build_tasks(images: &ImageSet, cfg: &ClassifyConfig) -> Result<Vec<Vec<PairTask>>> {
    (0..cfg.repetitions)
        .map(|rep| {
            let seed = derive_seed(cfg.split_seed, &[rep as u64]);
            cfg.pairs
                .iter()
                .map(|&(a, b)| PairTask::sample(&images.labels, a, b, cfg.t_train, cfg.test_per_class, seed))
                .collect()
        })
        .collect()
}

/// Trains and evaluates every configured method. Repetitions are the unit
/// of parallel work; each keeps its own feature cache.
pub fn run_pair_classification<E: Executor>(
    images: &ImageSet,
    cfg: &ClassifyConfig,
    exec: &E,
) -> Result<ClassifyResult> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !images.height.is_multiple_of(cfg.block) || !images.width.is_multiple_of(cfg.block) {
        return Err(Error::NotDivisible { block: cfg.block, rows: images.height, cols: images.width });
    }
    let map = UpliftMap::random(cfg.uplift_bands, cfg.block * cfg.block, cfg.uplift_seed)?;
    let reps = build_tasks(images, cfg)?;
    let mut methods = cfg.methods.clone();
    methods.dedup();

    let jobs: Vec<(usize, Vec<PairTask>)> = reps.into_iter().enumerate().collect();
    let per_rep = exec.map(jobs, |(rep, tasks)| -> Result<Vec<AccuracyRecord>> {
        let mut features = FeatureCache::new(images, cfg.block, map.clone());
        let ds = training_set(&tasks, &mut features)?;
        let mut out = Vec::new();
        for &method in &methods {
            for (task, acc) in tasks.iter().zip(evaluate_method(method, &tasks, &ds, cfg, &mut features)) {
                let (accuracy, error_kind) = match acc {
                    Ok(a) => (a, None),
                    Err(e) => (0.0, Some(String::from(e.kind()))),
                };
                out.push(AccuracyRecord {
                    method,
                    t_train: cfg.t_train,
                    repetition: rep,
                    digit_a: task.digit_a,
                    digit_b: task.digit_b,
                    accuracy,
                    error_kind,
                });
            }
        }
        Ok(out)
    });
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }

    let summary = methods
        .iter()
        .map(|&method| {
            let per_repetition: Vec<f64> = (0..cfg.repetitions)
                .map(|rep| {
                    let accs: Vec<f64> = records
                        .iter()
                        .filter(|r| r.method == method && r.repetition == rep)
                        .map(|r| r.accuracy)
                        .collect();
                    accs.iter().sum::<f64>() / accs.len() as f64
                })
                .collect();
            let mean_accuracy = per_repetition.iter().sum::<f64>() / per_repetition.len() as f64;
            MethodSummary { method, mean_accuracy, per_repetition }
        })
        .collect();
    Ok(ClassifyResult { config: cfg.clone(), records, summary })
}
