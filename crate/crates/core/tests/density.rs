use fidcov::density::{log_jacobian_raw, log_penalized_gfd};
use fidcov::{
    enumerate_partitions, log_clique_model_gfd, log_clique_penalty, log_gfd, log_likelihood, log_mdl_penalty,
    CliqueModel, CovariateMatrix, Norm, ObservationSet, SparsityPattern,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const LN_2PI: f64 = 1.8378770664093453;

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_obs(n: usize, p: usize, seed: u64) -> ObservationSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ObservationSet::new(normal_matrix(n, p, &mut rng)).unwrap()
}

fn well_conditioned(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    normal_matrix(p, p, rng) * 0.3 + DMatrix::identity(p, p) * 1.5
}

/// Gaussian log-likelihood from an explicit inverse.
fn direct_likelihood(obs: &ObservationSet<f64>, a: &DMatrix<f64>) -> f64 {
    let (n, p) = (obs.n() as f64, obs.p() as f64);
    let sigma = a * a.transpose();
    let inv = sigma.clone().try_inverse().unwrap();
    let quad: f64 = (0..obs.n())
        .map(|i| {
            let y = obs.data().row(i).transpose();
            (y.transpose() * &inv * &y)[(0, 0)]
        })
        .sum();
    -n * p / 2.0 * LN_2PI - n / 2.0 * sigma.determinant().ln() - quad / 2.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn likelihood_sees_only_the_covariance(p in 1usize..=4, n in 1usize..=12, seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = ObservationSet::new(normal_matrix(n, p, &mut rng)).unwrap();
        let a = well_conditioned(p, &mut rng);
        let q = normal_matrix(p, p, &mut rng).qr().q();
        let rot = if p >= 2 {
            let mut g = DMatrix::identity(p, p);
            g[(0, 0)] = angle.cos();
            g[(0, 1)] = -angle.sin();
            g[(1, 0)] = angle.sin();
            g[(1, 1)] = angle.cos();
            q * g
        } else {
            q
        };
        let l1 = log_likelihood(&obs, &CovariateMatrix::from_matrix(a.clone()).unwrap()).unwrap().value;
        let aq = &a * rot;
        let l2 = fidcov::density::log_likelihood_raw(&obs, &aq).unwrap().value;
        prop_assert!((l1 - l2).abs() < 1e-10 * (1.0 + l1.abs()));
        prop_assert!((l1 - direct_likelihood(&obs, &a)).abs() < 1e-8 * (1.0 + l1.abs()));
    }
}

#[test]
fn full_model_gfd_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in 1..=4 {
        for n in [p + 1, 8, 20] {
            let obs = random_obs(n, p, 100 + (p * n) as u64);
            let a = well_conditioned(p, &mut rng);
            let cov = CovariateMatrix::from_matrix(a.clone()).unwrap();
            let got = log_gfd(&obs, &cov, &Norm::L2).unwrap().value;
            // ln C(y) = (p/2) ln det S_n under l2
            let ln_c = p as f64 / 2.0 * obs.cov().determinant().ln();
            let (nf, pf) = (n as f64, p as f64);
            let inv = (&a * a.transpose()).try_inverse().unwrap();
            let tr = (obs.cov() * nf * inv).trace();
            let want = ln_c - (nf + pf) * a.determinant().abs().ln() - nf * pf / 2.0 * LN_2PI - tr / 2.0;
            assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()), "p={p} n={n}: {got} vs {want}");
        }
    }
}

#[test]
fn scaling_observations_shifts_by_known_amount() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for &c in &[0.5, 2.0, 3.7] {
        let p = 3;
        let obs = random_obs(15, p, 21);
        let scaled = ObservationSet::new(obs.data() * c).unwrap();
        let mut a = well_conditioned(p, &mut rng);
        a[(0, 2)] = 0.0;
        a[(2, 1)] = 0.0;
        let cov = CovariateMatrix::from_matrix(a.clone()).unwrap();
        let before = log_gfd(&obs, &cov, &Norm::L2).unwrap().value;
        let after = log_gfd(&scaled, &cov, &Norm::L2).unwrap().value;
        let n = obs.n() as f64;
        let inv = (&a * a.transpose()).try_inverse().unwrap();
        let tr = (obs.cov() * inv).trace();
        let free: usize = cov.pattern().row_free_counts().iter().sum();
        let shift = free as f64 * c.ln() - n / 2.0 * (c * c - 1.0) * tr;
        assert!((after - before - shift).abs() < 1e-9 * (1.0 + shift.abs()), "c={c}");
    }
}

#[test]
fn singular_covariate_has_zero_density() {
    let obs = random_obs(10, 2, 1);
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 1.0]);
    let j = log_jacobian_raw(&obs, &a, &SparsityPattern::full(2), &Norm::L2).unwrap();
    assert!(j.is_zero_density());
}

#[test]
fn description_length_penalty_falls_as_rows_fill() {
    for p in 2..=5usize {
        for n in [p * p * 4 + 1, 100, 1000] {
            let mut pattern = SparsityPattern::diagonal(p);
            let mut last = log_mdl_penalty::<f64>(&pattern, n);
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        pattern.set(i, j, true).unwrap();
                        let now = log_mdl_penalty::<f64>(&pattern, n);
                        assert!(now < last, "p={p} n={n} ({i},{j})");
                        last = now;
                    }
                }
            }
        }
    }
    let full = log_mdl_penalty::<f64>(&SparsityPattern::full(2), 25);
    assert!((full + 2.0 * 50f64.ln()).abs() < 1e-12);
}

#[test]
fn clique_penalty_examples() {
    let p = 4;
    let n = 300;
    let single = log_clique_penalty::<f64>(&CliqueModel::singletons(p), n);
    assert!((single + p as f64 / 4.0 * (n as f64).ln()).abs() < 1e-12);
    let pair = log_clique_penalty::<f64>(&CliqueModel::single_clique(2), 100);
    assert!((pair - (4.0f64 / 100.0).ln()).abs() < 1e-12);
}

#[test]
fn clique_penalty_ratio_bounded_for_submodels() {
    // merging cliques costs more as n grows
    let models = enumerate_partitions(4).unwrap();
    for big in &models {
        for small in &models {
            if small == big || !fidcov::is_submodel(small, big) {
                continue;
            }
            let r = |n| log_clique_penalty::<f64>(big, n) - log_clique_penalty::<f64>(small, n);
            assert!(r(1_000_000) < r(1000));
            assert!(r(1_000_000) < 0.0);
        }
    }
}

#[test]
fn singleton_partition_wins_for_independent_coordinates() {
    let p = 5;
    let models = enumerate_partitions(p).unwrap();
    let mut wins = 0;
    for seed in 0..100 {
        let obs = random_obs(2000, p, 9000 + seed);
        let best = models
            .iter()
            .max_by(|a, b| {
                let score = |m: &CliqueModel| {
                    log_clique_model_gfd(&obs, m, &Norm::L2).unwrap().value + log_clique_penalty::<f64>(m, obs.n())
                };
                score(a).total_cmp(&score(b))
            })
            .unwrap();
        if *best == CliqueModel::singletons(p) {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn penalized_gfd_adds_the_penalty() {
    let obs = random_obs(30, 3, 4);
    let cov = CovariateMatrix::from_matrix(DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.2, 0.0, 1.0, 0.0, 0.3, 0.0, 1.2])).unwrap();
    let plain = log_gfd(&obs, &cov, &Norm::L2).unwrap().value;
    let pen = log_penalized_gfd(&obs, &cov, &Norm::L2).unwrap().value;
    assert!((pen - plain - log_mdl_penalty::<f64>(cov.pattern(), 30)).abs() < 1e-12);
}

#[test]
fn single_precision_density() {
    let obs = fidcov::ObservationSet32::from_rows(&[vec![3.0f32], vec![4.0]]).unwrap();
    let a = fidcov::CovariateMatrix32::from_matrix(DMatrix::from_element(1, 1, 1.0f32)).unwrap();
    let j = fidcov::log_jacobian(&obs, &a, &Norm::L2).unwrap().value;
    assert!((j - 12.5f32.sqrt().ln()).abs() < 1e-5);
}
