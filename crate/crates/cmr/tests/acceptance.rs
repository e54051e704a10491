//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test -p cmr --release --test acceptance -- 3 4` runs criteria 3 and 4 only.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cmr::idx::load_image_set;
use cmr::output;
use cmr::parallel::RayonExecutor;
use cmr_core::estimator::{estimate_a, spectral_cmr, spectral_from_moments, SpectralOptions};
use cmr_core::estimator::{loss_and_gradient, objective};
use cmr_core::experiment::*;
use cmr_core::linalg::{subspace_distance, Matrix, SymMatrix};
use cmr_core::model::*;
use cmr_core::rng::{derive_seed, seeded, standard_normal_matrix};
use cmr_core::vision::{run_pair_classification, ClassifyConfig, ImageSet, Method};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn executor() -> RayonExecutor {
    RayonExecutor::new(0).expect("thread pool")
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1 ----------------------------------------------------------------------

fn mean_of_a_hat() -> Outcome {
    let cfg = MeanCheckConfig {
        b: 8,
        p: 4,
        r: 1,
        tasks: 50,
        samples: 50,
        datasets: 200,
        master_seed: 0,
        covariance: CovarianceSpec::Random { gamma_condition: 4.0, delta_condition: 4.0 },
    };
    let start = Instant::now();
    let check = lemma1_mean_check(&cfg, &Serial).unwrap();
    let elapsed = start.elapsed();
    outcome(
        check.relative_error <= 0.05 && elapsed <= Duration::from_secs(120),
        format!("relative error {:.4} (≤ 0.05), {} single-threaded (≤ 120s)", check.relative_error, secs(elapsed)),
    )
}

// 2 ----------------------------------------------------------------------

fn ratios_halve(ratios: &[f64]) -> bool {
    ratios.iter().all(|r| (2.0 / 1.5..=2.0 * 1.5).contains(r))
}

fn concentration_rates() -> Outcome {
    let exec = executor();
    let covariance = CovarianceSpec::Random { gamma_condition: 4.0, delta_condition: 4.0 };
    let a_cfg = ConcentrationConfig {
        b: 8,
        p: 4,
        r: 1,
        samples: 50,
        task_values: vec![25, 100, 400],
        repetitions: 20,
        master_seed: 0,
        covariance,
    };
    let g_cfg = ConcentrationConfig {
        b: 10,
        p: 10,
        r: 1,
        samples: 4,
        task_values: vec![100, 400, 1600],
        repetitions: 20,
        master_seed: 0,
        covariance,
    };
    let a = verify_lemma1(&a_cfg, &exec).unwrap().median_ratios();
    let g = verify_lemma2(&g_cfg, &exec).unwrap().median_ratios();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    outcome(
        ratios_halve(&a) && ratios_halve(&g),
        format!("Â median ratios [{}], Γ̂ median ratios [{}] (each in [1.333, 3])", fmt(&a), fmt(&g)),
    )
}

// 3 ----------------------------------------------------------------------

fn davis_kahan() -> Outcome {
    let cfg = BoundCheckConfig::default();
    assert_eq!((cfg.b, cfg.p, cfg.r, cfg.tasks, cfg.samples, cfg.trials), (10, 5, 1, 200, 20, 100));
    let rep = verify_lemma3(&cfg, &executor()).unwrap();
    outcome(
        rep.violations == 0 && rep.valid + rep.excluded == 100,
        format!("{} valid, {} excluded, {} violations", rep.valid, rep.excluded, rep.violations),
    )
}

// 4 ----------------------------------------------------------------------

fn exact_fixed_point() -> Outcome {
    let (b, p, t) = (20, 10, 5);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = seeded(seed);
        let dims = SyntheticDims { bands: b, positions: p, rank: 1, tasks: 30, samples: t };
        let cov = TaskCovariances::identity(b, p, 30);
        let model = random_model(&dims, &mut rng).unwrap();
        let expected = expected_a(&model, &cov, t).unwrap();
        let est = spectral_from_moments(SymMatrix::identity(b), expected.a, 1, 1e-12).unwrap();
        worst = worst.max(subspace_distance(&est.w_hat, model.w()).unwrap());

        // closed form for a unit-norm w
        let w = model.w().normalize();
        let a = &w * w.transpose() * (1.0 + 1.0 / t as f64) + Matrix::identity(b, b) * (p as f64 / t as f64);
        let est = spectral_from_moments(SymMatrix::identity(b), SymMatrix::new(a).unwrap(), 1, 1e-12).unwrap();
        worst = worst.max(subspace_distance(&est.w_hat, &w).unwrap());
    }
    outcome(worst <= 1e-8, format!("max dist {worst:.2e} over 40 injections (≤ 1e-8)"))
}

// 5 ----------------------------------------------------------------------

/// Central differences computed here, independently of the library's checker.
fn fd_relative_error(seed: u64, h: f64) -> f64 {
    let (b, p, r, tasks, samples, ridge) = (6, 4, 2, 3, 5, 0.1);
    let mut rng = seeded(seed);
    let dims = SyntheticDims { bands: b, positions: p, rank: r, tasks, samples };
    let cov = TaskCovariances::random(b, p, tasks, 3.0, 3.0, &mut rng).unwrap();
    let (_, ds) = generate_synthetic(&dims, &cov, &mut rng).unwrap();
    let w = standard_normal_matrix(b, r, &mut rng);
    let v: Vec<Matrix> = (0..tasks).map(|_| standard_normal_matrix(p, r, &mut rng)).collect();
    let (_, grad) = loss_and_gradient(&w, &v, &ds, ridge).unwrap();
    let f = |w: &Matrix, v: &[Matrix]| objective(w, v, &ds, ridge).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for k in 0..w.len() {
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus[k] += h;
        minus[k] -= h;
        analytic.push(grad.w[k]);
        numeric.push((f(&plus, &v) - f(&minus, &v)) / (2.0 * h));
    }
    for i in 0..tasks {
        for k in 0..v[i].len() {
            let (mut plus, mut minus) = (v.clone(), v.clone());
            plus[i][k] += h;
            minus[i][k] -= h;
            analytic.push(grad.v[i][k]);
            numeric.push((f(&w, &plus) - f(&w, &minus)) / (2.0 * h));
        }
    }
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    analytic
        .iter()
        .zip(&numeric)
        .map(|(g, fd)| (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6 * scale))
        .fold(0.0, f64::max)
}

fn gradients() -> Outcome {
    let lib = gradcheck(&GradcheckConfig::default(), &executor()).unwrap();
    let independent = (0..20).map(|k| fd_relative_error(derive_seed(55, &[k]), 1e-5)).fold(0.0, f64::max);
    outcome(
        lib.instances.len() == 20 && lib.max_rel_error <= 1e-5 && independent <= 1e-5,
        format!(
            "max relative error {:.2e} (library checker), {:.2e} (local checker) over 20 instances (≤ 1e-5)",
            lib.max_rel_error, independent
        ),
    )
}

// 6 ----------------------------------------------------------------------

fn phase_diagrams() -> Outcome {
    let text = fs::read_to_string(workspace_root().join("configs/phase-spectral.json")).unwrap();
    let spectral_cfg: PhaseGridConfig = serde_json::from_str(&text).unwrap();
    assert_eq!((spectral_cfg.b, spectral_cfg.p, spectral_cfg.r, spectral_cfg.trials_per_cell), (20, 10, 1, 50));
    assert_eq!(spectral_cfg.i_values, [10, 50, 100, 500, 2000]);
    assert_eq!(spectral_cfg.t_values, [2, 5, 10, 20, 50]);
    assert_eq!(spectral_cfg.init_mode, InitMode::Spectral);
    let mut random_cfg = spectral_cfg.clone();
    random_cfg.init_mode = InitMode::Random;

    let exec = executor();
    let start = Instant::now();
    let spectral = run_phase_diagram(&spectral_cfg, &exec).unwrap();
    let random = run_phase_diagram(&random_cfg, &exec).unwrap();
    let elapsed = start.elapsed();

    let (violations, pairs) = monotonicity_violations(&spectral.success_rate);
    let monotone = violations as f64 <= 0.1 * pairs as f64;

    let mut below_p = None;
    for (row, rates) in spectral.success_rate.iter().enumerate() {
        for (col, &rate) in rates.iter().enumerate() {
            let t = spectral_cfg.t_values[col];
            if t < spectral_cfg.p && rate >= 0.8 && below_p.is_none() {
                below_p = Some((spectral_cfg.i_values[row], t, rate));
            }
        }
    }

    let mut dominated = true;
    let mut gain = 0.0;
    let mut cells = 0;
    let mut improved = 0;
    for (s_row, r_row) in spectral.success_rate.iter().zip(&random.success_rate) {
        for (s, r) in s_row.iter().zip(r_row) {
            dominated &= *s >= r - 0.1;
            gain += s - r;
            cells += 1;
            improved += usize::from(s > r);
        }
    }
    let mean_gain = gain / cells as f64;

    let within_budget = elapsed <= Duration::from_secs(30 * 60);
    let grid = |g: &[Vec<f64>]| {
        g.iter()
            .map(|row| row.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    outcome(
        monotone && below_p.is_some() && dominated && mean_gain > 0.0 && within_budget,
        format!(
            "(a) {violations}/{pairs} monotonicity violations; (b) T < P cell at ≥ 0.8: {below_p:?}; \
             (c) spectral ≥ random − 0.1 everywhere: {dominated}, mean improvement {mean_gain:.4}, \
             {improved}/{cells} cells strictly better; \
             {} on {} threads (≤ 30 min)\n      spectral rows I=10..2000: {}\n      random   rows I=10..2000: {}",
            secs(elapsed),
            exec.threads(),
            grid(&spectral.success_rate),
            grid(&random.success_rate),
        ),
    )
}

// 7 ----------------------------------------------------------------------

fn small_dataset(seed: u64, b: usize, p: usize, r: usize) -> (CmrModel, TaskDataset) {
    let dims = SyntheticDims { bands: b, positions: p, rank: r, tasks: 4, samples: 3 };
    let mut rng = seeded(seed);
    let cov = TaskCovariances::random(b, p, 4, 4.0, 4.0, &mut rng).unwrap();
    generate_synthetic(&dims, &cov, &mut rng).unwrap()
}

fn well_conditioned(r: usize, seed: u64) -> Option<Matrix> {
    let g = standard_normal_matrix(r, r, &mut seeded(seed));
    let sv = g.singular_values();
    (sv.min() > 0.0 && sv.max() / sv.min() <= 100.0).then_some(g)
}

fn invariants() -> Outcome {
    let cases = 1000;
    let runner = || TestRunner::new(PropConfig { cases, failure_persistence: None, ..PropConfig::default() });
    let mut report = Vec::new();

    let responses_invariant = runner().run(&(any::<u64>(), 1usize..=3), |(seed, r)| {
        let (model, ds) = small_dataset(seed, 5, 4, r);
        let Some(g) = well_conditioned(r, seed ^ 0x5eed) else {
            return Err(TestCaseError::reject("ill-conditioned G"));
        };
        let g_inv_t = g.clone().try_inverse().unwrap().transpose();
        let moved = CmrModel::new(model.w() * &g, model.v().iter().map(|v| v * &g_inv_t).collect()).unwrap();
        let a = responses(&model, &ds).unwrap();
        let b = responses(&moved, &ds).unwrap();
        let scale = a.iter().fold(1.0f64, |m, y| m.max(y.abs()));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
        Ok(())
    });
    report.push(("response invariance", responses_invariant.map_err(|e| e.to_string())));

    let metric = runner().run(&(any::<u64>(), 2usize..=8, 1usize..=3), |(seed, b, r)| {
        if r >= b {
            return Err(TestCaseError::reject("r ≥ b"));
        }
        let mut rng = seeded(seed);
        let u = standard_normal_matrix(b, r, &mut rng);
        let v = standard_normal_matrix(b, r, &mut rng);
        let Some(g) = well_conditioned(r, seed.wrapping_add(1)) else {
            return Err(TestCaseError::reject("ill-conditioned G"));
        };
        let d = subspace_distance(&u, &v).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - subspace_distance(&v, &u).unwrap()).abs() <= 1e-9);
        prop_assert!((d - subspace_distance(&(&u * g), &v).unwrap()).abs() <= 1e-9);
        Ok(())
    });
    report.push(("subspace distance", metric.map_err(|e| e.to_string())));

    let scaling = runner().run(&(any::<u64>(), 0.01f64..100.0), |(seed, c)| {
        let (_, ds) = small_dataset(seed, 5, 3, 1);
        let mut scaled = ds.clone();
        scaled.set_responses(ds.responses().iter().map(|y| c * y).collect()).unwrap();
        let opts = SpectralOptions::default();
        let w = spectral_cmr(&ds, 1, &opts).unwrap().w_hat;
        let w_c = spectral_cmr(&scaled, 1, &opts).unwrap().w_hat;
        prop_assert!(subspace_distance(&w, &w_c).unwrap() <= 1e-10);
        Ok(())
    });
    report.push(("y-scaling", scaling.map_err(|e| e.to_string())));

    let pass = report.iter().all(|(_, r)| r.is_ok());
    let detail = report
        .iter()
        .map(|(name, r)| match r {
            Ok(()) => format!("{name}: {cases} cases ok"),
            Err(e) => format!("{name}: {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

// 8 ----------------------------------------------------------------------

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn toy_images() -> ImageSet {
    let mut rng = seeded(77);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for digit in 0..3u8 {
        for _ in 0..60 {
            let m = standard_normal_matrix(8, 8, &mut rng);
            for (k, x) in m.iter().enumerate() {
                pixels.push((0.3 * x + if k % 3 == digit as usize { 0.6 } else { 0.2 }).clamp(0.0, 1.0));
            }
            labels.push(digit);
        }
    }
    ImageSet::new(8, 8, pixels, labels).unwrap()
}

/// Writes every harness's files for one thread count.
fn write_all(root: &Path, threads: usize) {
    let exec = RayonExecutor::new(threads).unwrap();
    let dir = |name: &str| {
        let d = root.join(name);
        fs::create_dir_all(&d).unwrap();
        d
    };
    let mut phase = PhaseGridConfig::with_grid(vec![10, 60], vec![3, 10]);
    phase.b = 8;
    phase.p = 5;
    phase.trials_per_cell = 8;
    phase.refine.max_iters = 50;
    output::write_phase(&dir("phase"), &run_phase_diagram(&phase, &exec).unwrap()).unwrap();

    let sweep = BSweepConfig {
        b_values: vec![4, 8],
        p: 5,
        r: 1,
        tasks: 40,
        samples: 6,
        trials_per_cell: 8,
        master_seed: 1,
        init_mode: InitMode::Random,
        success_threshold: 0.9,
        covariance: CovarianceSpec::Identity,
        refine: phase.refine,
        spectral: SpectralOptions::default(),
    };
    output::write_sweep(&dir("sweep"), &run_b_sweep(&sweep, &exec).unwrap()).unwrap();

    let conc = ConcentrationConfig {
        b: 5,
        p: 3,
        r: 1,
        samples: 6,
        task_values: vec![10, 40],
        repetitions: 6,
        master_seed: 2,
        covariance: CovarianceSpec::Random { gamma_condition: 3.0, delta_condition: 3.0 },
    };
    output::write_concentration(&dir("lemma1"), &verify_lemma1(&conc, &exec).unwrap()).unwrap();
    output::write_concentration(&dir("lemma2"), &verify_lemma2(&conc, &exec).unwrap()).unwrap();

    let bound = BoundCheckConfig { tasks: 30, trials: 12, ..BoundCheckConfig::default() };
    output::write_bound_trials(&dir("lemma3"), &verify_lemma3(&bound, &exec).unwrap()).unwrap();

    let grad = GradcheckConfig { instances: 4, ..GradcheckConfig::default() };
    output::write_gradcheck(&dir("gradcheck"), &gradcheck(&grad, &exec).unwrap()).unwrap();

    let classify = ClassifyConfig {
        block: 2,
        uplift_bands: 10,
        pairs: vec![(0, 1), (1, 2)],
        t_train: 12,
        repetitions: 2,
        rank: 2,
        methods: vec![Method::Cmr, Method::Cmr1, Method::Frr, Method::CmrNw],
        ..ClassifyConfig::default()
    };
    output::write_classify(&dir("classify"), &run_pair_classification(&toy_images(), &classify, &exec).unwrap())
        .unwrap();
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs = [1, 4, 1];
    for (k, threads) in runs.iter().enumerate() {
        write_all(&tmp.path().join(k.to_string()), *threads);
    }
    let harnesses = ["phase", "sweep", "lemma1", "lemma2", "lemma3", "gradcheck", "classify"];
    let mut files = 0;
    let mut mismatched = Vec::new();
    for h in harnesses {
        let first = csv_files(&tmp.path().join("0").join(h));
        files += first.len();
        for k in 1..runs.len() {
            if csv_files(&tmp.path().join(k.to_string()).join(h)) != first {
                mismatched.push(format!("{h} (run {k})"));
            }
        }
    }
    outcome(
        mismatched.is_empty() && files > 0,
        format!(
            "{files} files from {} harnesses compared across thread counts {runs:?}; mismatches: {mismatched:?}",
            harnesses.len()
        ),
    )
}

// 9 ----------------------------------------------------------------------

fn mnist_dir() -> PathBuf {
    std::env::var_os("CMR_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| workspace_root().join("data/mnist-5k"))
}

fn vision() -> Outcome {
    let dir = mnist_dir();
    let images = match load_image_set(&dir.join("images-idx3-ubyte"), &dir.join("labels-idx1-ubyte")) {
        Ok(set) => set,
        Err(e) => return outcome(false, format!("cannot load digits from {}: {e}", dir.display())),
    };
    let cfg = ClassifyConfig::default();
    assert_eq!((cfg.pairs.len(), cfg.t_train, cfg.repetitions), (10, 50, 5));
    let start = Instant::now();
    let res = run_pair_classification(&images, &cfg, &executor()).unwrap();
    let elapsed = start.elapsed();
    let mean = |m: Method| res.summary.iter().find(|s| s.method == m).map(|s| s.mean_accuracy).unwrap_or(f64::NAN);
    let (cmr, cmr1, frr, nw) = (mean(Method::Cmr), mean(Method::Cmr1), mean(Method::Frr), mean(Method::CmrNw));
    outcome(
        cmr >= cmr1 && cmr >= frr && cmr.min(cmr1).min(frr) >= 0.90 && elapsed <= Duration::from_secs(600),
        format!(
            "CMR {cmr:.4}, CMR1 {cmr1:.4}, FRR {frr:.4} (CMR-NW {nw:.4}) on {} images; {} (≤ 600s)",
            images.len(),
            secs(elapsed)
        ),
    )
}

// 10 ---------------------------------------------------------------------

fn factored_a() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut rng = seeded(derive_seed(10, &[seed]));
        let (b, p, tasks, samples) = (4 + seed as usize % 3, 3, 2 + seed as usize % 2, 2 + seed as usize % 4);
        let cov = TaskCovariances::random(b, p, tasks, 5.0, 5.0, &mut rng).unwrap();
        let dims = SyntheticDims { bands: b, positions: p, rank: 1 + seed as usize % 2, tasks, samples };
        let (_, ds) = generate_synthetic(&dims, &cov, &mut rng).unwrap();
        let mut literal = Matrix::zeros(b, b);
        for i in 0..tasks {
            for t in 0..samples {
                for t2 in 0..samples {
                    literal += ds.x(i, t) * ds.x(i, t2).transpose() * (ds.y(i, t) * ds.y(i, t2));
                }
            }
        }
        literal /= (tasks * samples * samples) as f64;
        let a = estimate_a(&ds).unwrap();
        worst = worst.max((a.as_matrix() - &literal).norm() / literal.norm());
    }
    outcome(worst <= 1e-10, format!("max relative difference {worst:.2e} over 50 instances (≤ 1e-10)"))
}

// ------------------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "mean of Â matches its expectation", mean_of_a_hat),
    (2, "concentration rates of Â and Γ̂", concentration_rates),
    (3, "perturbation bound holds", davis_kahan),
    (4, "exact moments give exact recovery", exact_fixed_point),
    (5, "refinement gradients", gradients),
    (6, "phase diagram", phase_diagrams),
    (7, "identifiability and metric invariants", invariants),
    (8, "thread-count determinism", determinism),
    (9, "digit-pair classification", vision),
    (10, "factored Â equals the double sum", factored_a),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!("{verdict} {id:>2} {name} [{}]: {}", secs(start.elapsed()), result.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
