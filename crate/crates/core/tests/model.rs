use cmr_core::linalg::{eig_sym, Matrix, SymMatrix};
use cmr_core::model::*;
use cmr_core::rng::{seeded, standard_normal_matrix};
use cmr_core::Error;

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// `(Γ ⊗ Δ)[(b,p),(b',p')] = Γ_bb' Δ_pp'`, built entry by entry.
fn kron_entry(gamma: &Matrix, delta: &Matrix, b: usize, p: usize, b2: usize, p2: usize) -> f64 {
    gamma[(b, b2)] * delta[(p, p2)]
}

#[test]
fn scalar_draws_are_standard_normal() {
    let one = SymMatrix::identity(1);
    let sampler = MatrixNormalSampler::new(&one, &one).unwrap();
    let mut rng = seeded(3);
    let n = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let x = sampler.sample(&mut rng)[(0, 0)];
        sum += x;
        sq += x * x;
    }
    assert!((sum / n as f64).abs() <= 3.0 / (n as f64).sqrt());
    assert!((sq / n as f64 - 1.0).abs() < 0.02);
}

#[test]
fn design_covariance_is_kronecker() {
    let mut rng = seeded(11);
    let gamma = random_spd(2, 5.0, &mut rng).unwrap();
    let delta = random_spd(2, 3.0, &mut rng).unwrap();
    let sampler = MatrixNormalSampler::new(&gamma, &delta).unwrap();
    let n = 100_000;
    let mut acc = [[0.0f64; 4]; 4];
    let mut acc_sq = [[0.0f64; 4]; 4];
    for _ in 0..n {
        let x = sampler.sample(&mut rng);
        // row-major vec: index b·P + p
        let v = [x[(0, 0)], x[(0, 1)], x[(1, 0)], x[(1, 1)]];
        for j in 0..4 {
            for k in 0..4 {
                acc[j][k] += v[j] * v[k];
                acc_sq[j][k] += (v[j] * v[k]).powi(2);
            }
        }
    }
    let (g, d) = (gamma.as_matrix(), delta.as_matrix());
    for j in 0..4 {
        for k in 0..4 {
            let mean = acc[j][k] / n as f64;
            let var = acc_sq[j][k] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            let expected = kron_entry(g, d, j / 2, j % 2, k / 2, k % 2);
            assert!((mean - expected).abs() <= 5.0 * se, "entry ({j},{k}): {mean} vs {expected} (se {se})");
        }
    }
}

#[test]
fn covariance_error_halves_when_draws_quadruple() {
    let mut rng = seeded(5);
    let gamma = random_spd(2, 4.0, &mut rng).unwrap();
    let delta = random_spd(2, 4.0, &mut rng).unwrap();
    let sampler = MatrixNormalSampler::new(&gamma, &delta).unwrap();
    let max_error = |n: usize, seed: u64| {
        let mut rng = seeded(seed);
        let mut acc = Matrix::zeros(4, 4);
        for _ in 0..n {
            let x = sampler.sample(&mut rng);
            let v = Matrix::from_column_slice(4, 1, &[x[(0, 0)], x[(0, 1)], x[(1, 0)], x[(1, 1)]]);
            acc += &v * v.transpose();
        }
        let mut worst: f64 = 0.0;
        for j in 0..4 {
            for k in 0..4 {
                let e = kron_entry(gamma.as_matrix(), delta.as_matrix(), j / 2, j % 2, k / 2, k % 2);
                worst = worst.max((acc[(j, k)] / n as f64 - e).abs());
            }
        }
        worst
    };
    let small = median((0..20).map(|s| max_error(2_000, 100 + s)).collect());
    let large = median((0..20).map(|s| max_error(8_000, 200 + s)).collect());
    let ratio = small / large;
    assert!((2.0 / 1.5..=2.0 * 1.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn sampling_is_deterministic() {
    let mut rng = seeded(42);
    let gamma = random_spd(3, 2.0, &mut rng).unwrap();
    let delta = random_spd(2, 2.0, &mut rng).unwrap();
    let a = sample_matrix_normal(&gamma, &delta, &mut seeded(42)).unwrap();
    let b = sample_matrix_normal(&gamma, &delta, &mut seeded(42)).unwrap();
    assert_eq!(a, b);

    let dims = SyntheticDims { bands: 5, positions: 3, rank: 2, tasks: 4, samples: 6 };
    let cov = TaskCovariances::identity(5, 3, 4);
    let first = generate_synthetic(&dims, &cov, &mut seeded(9)).unwrap();
    let second = generate_synthetic(&dims, &cov, &mut seeded(9)).unwrap();
    assert_eq!(first, second);
    assert_ne!(first.1, generate_synthetic(&dims, &cov, &mut seeded(10)).unwrap().1);
}

#[test]
fn synthetic_shapes() {
    let dims = SyntheticDims { bands: 20, positions: 10, rank: 1, tasks: 100, samples: 10 };
    let cov = TaskCovariances::identity(20, 10, 100);
    let (model, ds) = generate_synthetic(&dims, &cov, &mut seeded(0)).unwrap();
    assert_eq!(model.w().shape(), (20, 1));
    assert_eq!(model.v().len(), 100);
    assert!(model.v().iter().all(|v| v.shape() == (10, 1)));
    assert_eq!((ds.tasks(), ds.samples()), (100, 10));
    assert_eq!(ds.x(99, 9).shape(), (20, 10));
    assert_eq!(ds.responses().len(), 1000);
    let wtw = model.w().transpose() * model.w();
    assert!((wtw[(0, 0)] - 1.0).abs() < 1e-12);
}

#[test]
fn zero_rank_is_rejected() {
    let dims = SyntheticDims { bands: 20, positions: 10, rank: 0, tasks: 3, samples: 2 };
    let cov = TaskCovariances::identity(20, 10, 3);
    assert!(matches!(generate_synthetic(&dims, &cov, &mut seeded(0)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn responses_match_triple_loop() {
    let mut rng = seeded(21);
    let (b, p, r, tasks, samples) = (4, 3, 2, 3, 5);
    let w = standard_normal_matrix(b, r, &mut rng);
    let v: Vec<Matrix> = (0..tasks).map(|_| standard_normal_matrix(p, r, &mut rng)).collect();
    let model = CmrModel::new(w.clone(), v.clone()).unwrap();
    let xs: Vec<Matrix> = (0..tasks * samples).map(|_| standard_normal_matrix(b, p, &mut rng)).collect();
    let ds = TaskDataset::from_parts(tasks, samples, &xs, vec![0.0; tasks * samples]).unwrap();
    let y = responses(&model, &ds).unwrap();
    for i in 0..tasks {
        for t in 0..samples {
            let x = &xs[i * samples + t];
            let mut expected = 0.0;
            for bb in 0..b {
                for pp in 0..p {
                    for rr in 0..r {
                        expected += w[(bb, rr)] * x[(bb, pp)] * v[i][(pp, rr)];
                    }
                }
            }
            let got = y[i * samples + t];
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn scalar_and_zero_models() {
    let model = CmrModel::new(Matrix::from_element(1, 1, 2.0), vec![Matrix::from_element(1, 1, -3.0)]).unwrap();
    let ds = TaskDataset::from_parts(
        1,
        2,
        &[Matrix::from_element(1, 1, 0.5), Matrix::from_element(1, 1, 4.0)],
        vec![0.0; 2],
    )
    .unwrap();
    assert_eq!(responses(&model, &ds).unwrap(), vec![-3.0, -24.0]);

    let zero = CmrModel::new(Matrix::zeros(3, 1), vec![Matrix::from_element(2, 1, 1.0)]).unwrap();
    let cov = TaskCovariances::identity(3, 2, 1);
    let ds = sample_dataset(&zero, &cov, 4, &mut seeded(0)).unwrap();
    assert!(ds.responses().iter().all(|&y| y == 0.0));
    let exp = expected_a(&zero, &cov, 4).unwrap();
    assert_eq!(exp.beta, 0.0);
    assert!(exp.a.as_matrix().iter().all(|&x| x == 0.0));
    assert!((exp.q.as_matrix()[(0, 0)] - 2.0).abs() < 1e-15);
}

#[test]
fn expected_a_identity_case() {
    let (b, p, t) = (6, 4, 7);
    let mut rng = seeded(8);
    let dims = SyntheticDims { bands: b, positions: p, rank: 1, tasks: 5, samples: t };
    let model = random_model(&dims, &mut rng).unwrap();
    let cov = TaskCovariances::identity(b, p, 5);
    let exp = expected_a(&model, &cov, t).unwrap();
    assert!((exp.q.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
    assert!((exp.beta - p as f64 / t as f64).abs() < 1e-12);
    let w = model.w();
    let expected = w * w.transpose() * (1.0 + 1.0 / t as f64) + Matrix::identity(b, b) * (p as f64 / t as f64);
    assert!((exp.a.as_matrix() - expected).abs().max() < 1e-12);
}

#[test]
fn expected_a_is_psd() {
    for seed in 0..20 {
        let mut rng = seeded(seed);
        let dims = SyntheticDims { bands: 6, positions: 4, rank: 2, tasks: 3, samples: 5 };
        let cov = TaskCovariances::random(6, 4, 3, 10.0, 10.0, &mut rng).unwrap();
        let model = random_model(&dims, &mut rng).unwrap();
        let exp = expected_a(&model, &cov, 5).unwrap();
        assert!(exp.beta >= 0.0);
        let scale = eig_sym(&exp.a).unwrap().max();
        assert!(eig_sym(&exp.a).unwrap().min() >= -1e-12 * scale);
        assert!(eig_sym(&exp.q).unwrap().min() >= -1e-12);
    }
}

fn bound_fixture(seed: u64) -> (CmrModel, TaskCovariances, ExpectedA) {
    let mut rng = seeded(seed);
    let dims = SyntheticDims { bands: 6, positions: 4, rank: 2, tasks: 5, samples: 10 };
    let cov = TaskCovariances::random(6, 4, 5, 3.0, 3.0, &mut rng).unwrap();
    let model = random_model(&dims, &mut rng).unwrap();
    let exp = expected_a(&model, &cov, 10).unwrap();
    (model, cov, exp)
}

#[test]
fn bound_vanishes_at_zero_and_is_linear_in_eps2() {
    let (model, cov, exp) = bound_fixture(1);
    assert_eq!(davis_kahan_bound(0.0, 0.0, &model, &cov, &exp).unwrap(), 0.0);

    let coeffs = divergence_coefficients(&model, &cov).unwrap();
    let f = davis_kahan_bound(0.0, 0.01, &model, &cov, &exp).unwrap();
    let closed = 2.0 * 2f64.sqrt() * coeffs.kappa_gamma.powf(1.5) * 0.01 / coeffs.signal_floor;
    assert!((f - closed).abs() <= 1e-12 * closed);
    let f2 = davis_kahan_bound(0.0, 0.02, &model, &cov, &exp).unwrap();
    assert!((f2 - 2.0 * f).abs() <= 1e-12 * f2);
}

#[test]
fn bound_is_monotone_and_checks_domain() {
    let (model, cov, exp) = bound_fixture(2);
    let f = |e1: f64, e2: f64| davis_kahan_bound(e1, e2, &model, &cov, &exp).unwrap();
    let grid = [0.0, 0.1, 0.3, 0.6, 0.9];
    for &a in &grid {
        for (&lo, &hi) in grid.iter().zip(&grid[1..]) {
            assert!(f(hi, a) >= f(lo, a));
            assert!(f(a, hi) >= f(a, lo));
        }
    }
    assert!(matches!(davis_kahan_bound(1.0, 0.1, &model, &cov, &exp), Err(Error::OutOfDomain(_))));
    assert!(matches!(davis_kahan_bound(0.1, -1.0, &model, &cov, &exp), Err(Error::OutOfDomain(_))));
}

#[test]
fn identical_tasks_collapse_coefficients() {
    let mut rng = seeded(4);
    let (b, p, tasks) = (5, 3, 4);
    let w = standard_normal_matrix(b, 1, &mut rng).normalize();
    let v0 = standard_normal_matrix(p, 1, &mut rng) * 0.7;
    let model = CmrModel::new(w, vec![v0.clone(); tasks]).unwrap();
    let gamma = random_spd(b, 3.0, &mut rng).unwrap();
    let delta = random_spd(p, 2.0, &mut rng).unwrap();
    let cov = TaskCovariances::new(gamma, vec![delta; tasks], true).unwrap();
    let c = divergence_coefficients(&model, &cov).unwrap();
    let eta = c.l_per_task[0] / c.signal_floor;
    assert!(c.l_per_task.iter().all(|&l| l == c.l_per_task[0]));
    assert!((c.eta - eta).abs() <= 1e-12 * eta);
    assert!((c.alpha - eta * eta).abs() <= 1e-12 * eta * eta);
    assert!((c.mu - eta * eta).abs() <= 1e-12 * eta * eta);
    assert!((c.nu - eta).abs() <= 1e-12 * eta);
}

#[test]
fn identity_covariances_give_unit_ratios() {
    let dims = SyntheticDims { bands: 6, positions: 4, rank: 2, tasks: 3, samples: 1 };
    let model = random_model(&dims, &mut seeded(0)).unwrap();
    let c = divergence_coefficients(&model, &TaskCovariances::identity(6, 4, 3)).unwrap();
    assert!((c.psi - 1.0).abs() < 1e-12);
    assert!((c.chi - 1.0).abs() < 1e-12);
    assert!((c.kappa_gamma - 1.0).abs() < 1e-12);
}

#[test]
fn alpha_never_exceeds_mu() {
    for seed in 0..50 {
        let mut rng = seeded(1000 + seed);
        let dims = SyntheticDims { bands: 5, positions: 4, rank: 2, tasks: 6, samples: 1 };
        let cov = TaskCovariances::random(5, 4, 6, 5.0, 20.0, &mut rng).unwrap();
        let mut model = random_model(&dims, &mut rng).unwrap();
        let scales: Vec<f64> = (0..6).map(|k| 0.2 + k as f64 * 0.5).collect();
        let v: Vec<Matrix> = model.v().iter().zip(&scales).map(|(v, s)| v * *s).collect();
        model = CmrModel::new(model.w().clone(), v).unwrap();
        let c = divergence_coefficients(&model, &cov).unwrap();
        let sq: f64 = c.l_per_task.iter().map(|l| l * l).sum::<f64>() / 6.0;
        let fourth: f64 = c.l_per_task.iter().map(|l| l.powi(4)).sum::<f64>() / 6.0;
        assert!(sq <= fourth.sqrt() * (1.0 + 1e-12));
        assert!(c.alpha <= c.mu * (1.0 + 1e-12));
    }
}

#[test]
fn trace_normalisation_and_psd_checks() {
    let cov = TaskCovariances::new(SymMatrix::identity(2), vec![SymMatrix::from_diagonal(&[2.0, 6.0])], true).unwrap();
    assert_eq!(cov.deltas()[0].as_matrix().diagonal().as_slice(), &[0.5, 1.5]);
    let bad = SymMatrix::from_diagonal(&[1.0, -1.0]);
    assert!(matches!(TaskCovariances::new(bad, vec![SymMatrix::identity(2)], true), Err(Error::NotPsd { .. })));
    let spd = random_spd(5, 7.0, &mut seeded(1)).unwrap();
    let eig = eig_sym(&spd).unwrap();
    assert!((eig.max() / eig.min() - 7.0).abs() < 1e-9);
    assert!((spd.trace() - 5.0).abs() < 1e-12);
}
