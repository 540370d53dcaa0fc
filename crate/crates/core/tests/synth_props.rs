use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tagm::synth::{
    gen_means, gen_precision_degree_bounded, gen_precision_random_spd, gen_transition_matrix, generate, CovMode,
    GeneratorConfig, MeanMode, TransitionMode,
};

fn base(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_obs: 500,
        n_states: 3,
        dim: 4,
        mean_mode: MeanMode::Uniform { a: -5.0, b: 5.0 },
        cov_mode: CovMode::DegreeBounded { max_degree: 2 },
        kappa: 20.0,
        transition_mode: TransitionMode::Sudden,
        seed,
    }
}

#[test]
fn same_seed_same_dataset() {
    for mode in [
        TransitionMode::Sudden,
        TransitionMode::FixedSmooth { steps: 3 },
        TransitionMode::RandomSmooth { lo: 2, hi: 5 },
        TransitionMode::RandomSmoothRandomWeights { lo: 2, hi: 5 },
    ] {
        let cfg = GeneratorConfig {
            transition_mode: mode,
            ..base(42)
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.weights, b.weights);
        let c = generate(&GeneratorConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.x, c.x);
    }
}

#[test]
fn normal_means_have_unit_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = gen_means(200, 50, MeanMode::Normal, &mut rng);
    let n = m.len() as f64;
    let mean = m.sum() / n;
    let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // 10000 draws: the standard error of the mean is 0.01.
    assert!(mean.abs() < 0.05);
    assert!((var - 1.0).abs() < 0.05);
    let u = gen_means(100, 100, MeanMode::Uniform { a: -10.0, b: 10.0 }, &mut rng);
    assert!(u.iter().all(|v| (-10.0..=10.0).contains(v)));
}

#[test]
fn generated_precisions_are_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for d in [2, 5, 10, 30] {
        for max_degree in 1..d.min(5) {
            let p = gen_precision_degree_bounded(d, max_degree, &mut rng);
            assert!(p.min_eigenvalue() > 0.0);
            for i in 0..d {
                let deg = (0..d).filter(|&j| j != i && p.get(i, j) != 0.0).count();
                assert!(deg <= max_degree);
                assert_eq!(p.get(i, i), 1.0);
            }
        }
        let spd = gen_precision_random_spd(d, &mut rng);
        assert!(spd.is_positive_definite());
    }
}

#[test]
fn dirichlet_rows_have_expected_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reps = 4000;
    for (k, kappa, expected) in [(4, 1.0, 0.25), (3, 50.0, 50.0 / 52.0)] {
        let mut diag = 0.0;
        for _ in 0..reps {
            let a = gen_transition_matrix(k, kappa, &mut rng);
            for row in a.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            diag += a.diagonal().mean();
        }
        assert!((diag / reps as f64 - expected).abs() < 0.01, "k={k} kappa={kappa}");
    }
}

#[test]
fn empirical_transitions_match_the_matrix() {
    let cfg = GeneratorConfig {
        n_obs: 50_000,
        dim: 2,
        cov_mode: CovMode::DegreeBounded { max_degree: 1 },
        kappa: 5.0,
        ..base(7)
    };
    let ds = generate(&cfg).unwrap();
    let k = cfg.n_states;
    let mut counts = DMatrix::<f64>::zeros(k, k);
    for w in ds.labels.windows(2) {
        counts[(w[0], w[1])] += 1.0;
    }
    for i in 0..k {
        let total: f64 = counts.row(i).sum();
        for j in 0..k {
            assert!((counts[(i, j)] / total - ds.params.trans[(i, j)]).abs() < 0.05);
        }
    }
}

#[test]
fn per_state_samples_match_their_gaussian() {
    let cfg = GeneratorConfig {
        n_obs: 30_000,
        ..base(11)
    };
    let ds = generate(&cfg).unwrap();
    for s in 0..cfg.n_states {
        let rows: Vec<usize> = (0..cfg.n_obs).filter(|&t| ds.labels[t] == s).collect();
        let m = rows.len() as f64;
        assert!(m > 1000.0);
        for j in 0..cfg.dim {
            let mean = rows.iter().map(|&t| ds.x.data()[(t, j)]).sum::<f64>() / m;
            let sd = ds.covariances[s].get(j, j).sqrt();
            assert!((mean - ds.params.means[(s, j)]).abs() < 5.0 * sd / m.sqrt());
        }
        let prod = ds.params.precisions[s].as_matrix() * ds.covariances[s].as_matrix();
        assert!((prod - DMatrix::identity(cfg.dim, cfg.dim)).amax() < 1e-10);
    }
}

#[test]
fn weights_are_distributions() {
    for mode in [
        TransitionMode::FixedSmooth { steps: 6 },
        TransitionMode::RandomSmoothRandomWeights { lo: 2, hi: 8 },
    ] {
        let ds = generate(&GeneratorConfig {
            transition_mode: mode,
            ..base(5)
        })
        .unwrap();
        for (t, row) in ds.weights.row_iter().enumerate() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row[ds.labels[t]] >= row.max() - 1e-15);
        }
    }
}

#[test]
fn sudden_weights_are_one_hot() {
    let ds = generate(&base(13)).unwrap();
    for (t, row) in ds.weights.row_iter().enumerate() {
        assert_eq!(row[ds.labels[t]], 1.0);
        assert_eq!(row.sum(), 1.0);
    }
}
