mod common;

use common::normal_equations_fit;
use paraumt_core::clustering::DistanceMatrix;
use paraumt_core::pairing::*;
use proptest::prelude::*;

fn three() -> DistanceMatrix {
    DistanceMatrix::from_rows(vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 2.0], vec![5.0, 2.0, 0.0]]).unwrap()
}

fn poly(c: &[f64]) -> ScoreFunction {
    ScoreFunction {
        coefficients: c.to_vec(),
        rss: 0.0,
        samples: c.len(),
    }
}

#[test]
fn three_cluster_strategy_examples() {
    let m = three();
    let act = [0, 1, 2];
    let tgt0 = |s| pair_clusters(&act, &m, s, 0).unwrap().target_of(0).unwrap();
    assert_eq!(tgt0(PairingStrategy::Largest), 2);
    assert_eq!(tgt0(PairingStrategy::Smallest), 1);
    assert_eq!(tgt0(PairingStrategy::Medium), 1);
    for seed in 0..5 {
        let a = pair_clusters(&act, &m, PairingStrategy::Random, seed).unwrap();
        assert_eq!(a, pair_clusters(&act, &m, PairingStrategy::Random, seed).unwrap());
    }
    assert!(pair_clusters(&[2], &m, PairingStrategy::Random, 0).is_err());
    assert!(pair_clusters(&act, &m, PairingStrategy::Supervised, 0).is_err());
}

#[test]
fn medium_takes_lower_median_by_rank() {
    let row = vec![0.0, 4.0, 1.0, 3.0, 2.0];
    let mut rows = vec![row.clone()];
    for i in 1..5 {
        let mut r: Vec<f64> = (0..5).map(|j| if i == j { 0.0 } else { 1.0 }).collect();
        r[0] = row[i];
        rows.push(r);
    }
    let m = DistanceMatrix::from_rows(rows).unwrap();
    let plan = pair_clusters(&[0, 1, 2, 3, 4], &m, PairingStrategy::Medium, 0).unwrap();
    // Sorted distances from 0: 1 (c2), 2 (c4), 3 (c3), 4 (c1); index floor(3/2) = 1.
    assert_eq!(plan.target_of(0), Some(4));
}

#[test]
fn planted_quadratic_fit() {
    let samples: Vec<(f64, f64)> = (0..10)
        .map(|i| {
            let d = i as f64 * 0.37;
            (d, 1.0 + 2.0 * d + 3.0 * d * d)
        })
        .collect();
    let f = fit_score_function(&samples, 2).unwrap();
    for (got, want) in f.coefficients.iter().zip([1.0, 2.0, 3.0]) {
        assert!((got - want).abs() < 1e-8, "{:?}", f.coefficients);
    }
    assert!(f.rss <= 1e-10);
    assert_eq!((f.samples, f.degree()), (10, 2));
    let oracle = normal_equations_fit(&samples, 2);
    for (a, b) in f.coefficients.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn score_function_examples() {
    let f = poly(&[1.0, 2.0, 3.0]);
    assert_eq!(predict_score(&f, 0.0), 1.0);
    assert_eq!(predict_score(&f, 2.0), 17.0);
    let c = fit_score_function(&[(0.0, 5.0), (1.0, 5.0), (7.0, 5.0)], 0).unwrap();
    for d in [-3.0, 0.0, 2.5, 100.0] {
        assert!((predict_score(&c, d) - 5.0).abs() < 1e-12);
    }
    assert!(fit_score_function(&[(0.0, 1.0), (1.0, 2.0)], 2).is_err());
}

#[test]
fn supervised_matches_distance_rules_under_monotone_f() {
    let m = three();
    let act = [0, 1, 2];
    let inc = pair_supervised(&act, &m, &poly(&[0.0, 1.0])).unwrap();
    let dec = pair_supervised(&act, &m, &poly(&[0.0, -1.0])).unwrap();
    let flat = pair_supervised(&act, &m, &poly(&[3.0])).unwrap();
    assert_eq!(inc.targets(), pair_clusters(&act, &m, PairingStrategy::Largest, 0).unwrap().targets());
    assert_eq!(dec.targets(), pair_clusters(&act, &m, PairingStrategy::Smallest, 0).unwrap().targets());
    assert_eq!(flat.targets(), vec![1, 0, 0]);
}

#[test]
fn plan_file_is_tsv() {
    let plan = pair_clusters(&[0, 1, 2], &three(), PairingStrategy::Largest, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("plan.tsv");
    plan.save(&p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "0\t2\tlargest\n1\t2\tlargest\n2\t0\tlargest\n");
    assert_eq!(PairingPlan::load(&p).unwrap(), plan);
    std::fs::write(&p, "0\t1\n").unwrap();
    assert!(PairingPlan::load(&p).is_err());
}

fn matrix_and_active() -> impl Strategy<Value = (DistanceMatrix, Vec<usize>)> {
    (2usize..7).prop_flat_map(|k| {
        (prop::collection::vec(0.0f64..10.0, k * k), prop::collection::vec(any::<bool>(), k)).prop_map(move |(v, keep)| {
            let mut rows = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in i + 1..k {
                    rows[i][j] = v[i * k + j];
                    rows[j][i] = v[i * k + j];
                }
            }
            let mut active: Vec<usize> = (0..k).filter(|&i| keep[i]).collect();
            if active.len() < 2 {
                active = vec![0, 1];
            }
            (DistanceMatrix::from_rows(rows).unwrap(), active)
        })
    })
}

proptest! {
    #[test]
    fn every_plan_is_total_and_irreflexive((m, active) in matrix_and_active(), seed in any::<u64>()) {
        for s in PairingStrategy::DISTANCE_RULES {
            pair_clusters(&active, &m, s, seed).unwrap().validate(&active).unwrap();
        }
        pair_supervised(&active, &m, &poly(&[0.5, -1.0, 0.2])).unwrap().validate(&active).unwrap();
    }

    #[test]
    fn supervised_argmax_invariant_under_increasing_transform(
        (m, active) in matrix_and_active(), a in -2.0f64..2.0, b in -2.0f64..2.0, scale in 0.1f64..10.0, shift in -5.0f64..5.0,
    ) {
        let f = poly(&[0.0, a, b]);
        let g = poly(&[shift, scale * a, scale * b]);
        prop_assert_eq!(pair_supervised(&active, &m, &f).unwrap().targets(), pair_supervised(&active, &m, &g).unwrap().targets());
    }

    #[test]
    fn noiseless_fit_has_zero_residual(c in prop::collection::vec(-5.0f64..5.0, 1..4), n in 6usize..15) {
        let degree = c.len() - 1;
        let f = poly(&c);
        let samples: Vec<(f64, f64)> = (0..n).map(|i| { let d = i as f64 / n as f64 * 3.0; (d, predict_score(&f, d)) }).collect();
        let fit = fit_score_function(&samples, degree).unwrap();
        prop_assert!(fit.rss <= 1e-10);
        for (x, y) in fit.coefficients.iter().zip(&c) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }
}
