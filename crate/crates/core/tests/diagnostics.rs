use fidcov::diagnostics::{kolmogorov_pvalue, ks_uniform_distance, mardia_skewness, KS_95};
use fidcov::samplers::{random_partition, sample_full_model};
use fidcov::{
    co_membership, compute_statistics, one_sided_pvalue, qq_coverage, simulate_scenario, ChainConfig, ChainState,
    CliqueModel, CliqueScorer, ConfidenceCurve, Generator, Norm, ObservationSet, RngStream, SamplerKind, ScenarioSpec,
    Statistic, SweepOrder,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn confidence_intervals_are_nested(values in prop::collection::vec(-50.0f64..50.0, 1..200), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let curve = ConfidenceCurve::new(Statistic::LogD, &values).unwrap();
        let (small, large) = if a < b { (a, b) } else { (b, a) };
        let wide = curve.interval(small);
        let narrow = curve.interval(large);
        prop_assert!(wide.0 <= narrow.0 && narrow.1 <= wide.1);
        for (_, lo, hi) in curve.curve(51) {
            prop_assert!(lo <= hi);
        }
    }

    #[test]
    fn co_membership_is_symmetric_with_unit_diagonal(seed in any::<u64>(), p in 1usize..8, draws in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let models: Vec<CliqueModel> = (0..draws).map(|_| random_partition(p, &mut rng)).collect();
        let c = co_membership(&models).unwrap();
        prop_assert_eq!(c.draws, draws);
        for i in 0..p {
            prop_assert_eq!(c.matrix[(i, i)], 1.0);
            for j in 0..p {
                prop_assert_eq!(c.matrix[(i, j)], c.matrix[(j, i)]);
                prop_assert!((0.0..=1.0).contains(&c.matrix[(i, j)]));
            }
        }
    }

    #[test]
    fn pvalue_is_monotone_in_reference(values in prop::collection::vec(-5.0f64..5.0, 100..300), r1 in -6.0f64..6.0, r2 in -6.0f64..6.0) {
        let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        let a = one_sided_pvalue(&values, lo).unwrap();
        let b = one_sided_pvalue(&values, hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && a <= b);
    }
}

#[test]
fn pvalue_extremes_and_minimum_draws() {
    let values: Vec<f64> = (0..100).map(|k| k as f64).collect();
    assert_eq!(one_sided_pvalue(&values, -1.0).unwrap(), 0.0);
    assert_eq!(one_sided_pvalue(&values, 100.0).unwrap(), 1.0);
    assert!(one_sided_pvalue(&values[..99], 10.0).is_err());
}

#[test]
fn qq_table_on_grid_and_constant_input() {
    let grid: Vec<f64> = (0..40).map(|k| (k as f64 + 0.5) / 40.0).collect();
    let table = qq_coverage(&grid).unwrap();
    assert!(table.rows.iter().all(|r| (r.empirical - r.uniform).abs() < 1e-15));
    assert!(table.inside_band);
    assert!((table.band_halfwidth - KS_95 / 40f64.sqrt()).abs() < 1e-15);

    let flat = vec![0.9; 40];
    assert!(!qq_coverage(&flat).unwrap().inside_band);
    assert!(qq_coverage(&grid[..19]).is_err());
    assert!(qq_coverage(&[1.5; 25]).is_err());
}

#[test]
fn kolmogorov_tail_at_the_band_constant() {
    assert!((kolmogorov_pvalue(KS_95) - 0.05).abs() < 1e-3);
    assert!((kolmogorov_pvalue(1.0) - 0.27).abs() < 1e-2);
    assert_eq!(ks_uniform_distance(&[0.5]), 0.5);
}

#[test]
fn statistics_table_is_reproducible_on_real_draws() {
    let a0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.3, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = DMatrix::<f64>::from_fn(80, 3, |_, _| StandardNormal.sample(&mut rng));
    let obs = ObservationSet::new(z * a0.transpose()).unwrap();
    let sigma0 = fidcov::SpdMatrix::new(&a0 * a0.transpose()).unwrap();
    let trace = sample_full_model(&obs, 300, &mut RngStream::new(9, 0)).unwrap();
    let one = compute_statistics(&trace.draws, &obs, Some(&sigma0), &Norm::L2, &Statistic::ALL).unwrap();
    let two = compute_statistics(&trace.draws, &obs, Some(&sigma0), &Norm::L2, &Statistic::ALL).unwrap();
    assert_eq!(one, two);
    assert_eq!(one.len(), 300);
    assert!(one.column(Statistic::D2Sig).iter().all(|&d| d > 0.0));
    let angles = one.column(Statistic::EigvecAngle);
    assert!(angles.iter().all(|&a| (0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&a)));
    let only_logd = compute_statistics(&trace.draws, &obs, None, &Norm::L2, &[Statistic::LogD]).unwrap();
    assert_eq!(only_logd.column(Statistic::LogD), one.column(Statistic::LogD));
}

#[test]
fn co_membership_recovers_two_cliques() {
    let spec = ScenarioSpec {
        p: 6,
        n: 1000,
        generator: Generator::Clique {
            sizes: vec![3, 3],
            intra_corr: 0.5,
        },
        seed: 41,
    };
    let sc = simulate_scenario::<f64>(&spec).unwrap();
    let mut config = ChainConfig::new(SamplerKind::Gibbs {
        penalized: true,
        order: SweepOrder::Ascending,
        draw_covariance: false,
    });
    config.burn_in = 200;
    config.window = 1000;
    let scorer = CliqueScorer::new(&sc.obs, Norm::L2, true);
    let start = ChainState::for_clique(&scorer, CliqueModel::singletons(6));
    let trace = fidcov::run_chain(&sc.obs, &config, start, &mut RngStream::new(41, 0)).unwrap();
    let c = co_membership(trace.draws.iter().filter_map(|d| d.clique_model())).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            let v = c.matrix[(i, j)];
            if i / 3 == j / 3 {
                assert!(v > 0.95, "({i},{j}) = {v}");
            } else {
                assert!(v < 0.05, "({i},{j}) = {v}");
            }
        }
    }
    assert_eq!(Some(&c.threshold(0.5)), sc.m0.as_ref());
}

#[test]
fn standardized_full_model_draws_look_gaussian() {
    let n = 5000;
    let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = DMatrix::<f64>::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
    let obs = ObservationSet::new(z * a0.transpose()).unwrap();
    let s = obs.cov().clone();
    // the draws keep an O(1/sqrt(n)) skew that enough draws will eventually resolve
    let trace = sample_full_model(&obs, 1000, &mut RngStream::new(12, 0)).unwrap();
    let root_n = (n as f64).sqrt();
    let samples: Vec<Vec<f64>> = trace
        .draws
        .iter()
        .map(|d| {
            let sigma = d.covariance().unwrap();
            let m = sigma.matrix();
            vec![
                root_n * (m[(0, 0)] - s[(0, 0)]),
                root_n * (m[(1, 0)] - s[(1, 0)]),
                root_n * (m[(1, 1)] - s[(1, 1)]),
            ]
        })
        .collect();
    let (_, pvalue) = mardia_skewness(&samples).unwrap();
    assert!(pvalue > 0.01, "Mardia skewness p-value {pvalue}");
}
