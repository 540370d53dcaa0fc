use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tagm::metrics::{map_clusters, mcc, v_measure, EdgeSet};
use tagm::selection::{connectivity_matrix, consensus_matrix, count_free_params, dispersion};
use tagm::{ModelParams, SymMatrix};

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn v_measure_ignores_label_names(truth in labels(30, 4), pred in labels(30, 4), shift in 1usize..4) {
        let renamed: Vec<usize> = pred.iter().map(|l| (l + shift) % 4).collect();
        let a = v_measure(&truth, &pred).unwrap();
        let b = v_measure(&truth, &renamed).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        // Symmetric in its arguments.
        prop_assert!((a - v_measure(&pred, &truth).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mapping_covers_every_predicted_state(truth in labels(25, 3), pred in labels(25, 5)) {
        let m = map_clusters(&truth, &pred).unwrap();
        for p in &pred {
            prop_assert!(truth.contains(&m[p]));
        }
    }

    #[test]
    fn mcc_is_bounded_and_symmetric(a in prop::collection::vec(any::<bool>(), 15), b in prop::collection::vec(any::<bool>(), 15)) {
        let pairs: Vec<(usize, usize)> = (0..6).flat_map(|i| ((i + 1)..6).map(move |j| (i, j))).collect();
        let pick = |mask: &[bool]| EdgeSet::from_edges(6, &pairs.iter().zip(mask).filter(|(_, &m)| m).map(|(&p, _)| p).collect::<Vec<_>>()).unwrap();
        let (ea, eb) = (pick(&a), pick(&b));
        let v = mcc(&ea, &eb).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        prop_assert!((v - mcc(&eb, &ea).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn connectivity_is_an_equivalence(l in labels(12, 3)) {
        let c = connectivity_matrix(&l);
        for i in 0..12 {
            prop_assert_eq!(c[(i, i)], 1);
            for j in 0..12 {
                prop_assert_eq!(c[(i, j)], c[(j, i)]);
                for k in 0..12 {
                    if c[(i, j)] == 1 && c[(j, k)] == 1 {
                        prop_assert_eq!(c[(i, k)], 1);
                    }
                }
            }
        }
    }

    #[test]
    fn dispersion_stays_in_unit_interval(runs in prop::collection::vec(labels(10, 3), 2..6)) {
        let c = consensus_matrix(&runs).unwrap();
        let rho = dispersion(&c);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&rho));
        let binary = c.iter().all(|&v| v == 0.0 || v == 1.0);
        prop_assert_eq!(binary, (rho - 1.0).abs() < 1e-12);
    }
}

#[test]
fn agreeing_repeats_up_to_renaming_are_perfectly_stable() {
    let a = vec![0, 0, 1, 1, 2];
    let b = vec![2, 2, 0, 0, 1];
    let c = consensus_matrix(&[a, b]).unwrap();
    assert_eq!(dispersion(&c), 1.0);
    assert_eq!(dispersion(&DMatrix::from_element(4, 4, 0.5)), 0.0);
}

#[test]
fn free_parameters_ignore_state_order() {
    let thetas = vec![
        SymMatrix::from_upper_fn(3, |i, j| if i == j { 2.0 } else if j == i + 1 { 0.3 } else { 0.0 }),
        SymMatrix::identity(3),
    ];
    let p = ModelParams::new(
        DVector::from_element(2, 0.5),
        DMatrix::from_element(2, 2, 0.5),
        DMatrix::zeros(2, 3),
        thetas,
    )
    .unwrap();
    assert_eq!(count_free_params(&p), count_free_params(&p.permuted(&[1, 0])));
    assert_eq!(count_free_params(&p), 3 + 6 + 5 + 3);
}
