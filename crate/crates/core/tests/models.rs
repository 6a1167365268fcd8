use fidcov::{enumerate_partitions, is_compatible, is_submodel, pattern_to_clique, restrict_to_model, CliqueModel, SparsityPattern, SpdMatrix};
use nalgebra::{dmatrix, DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn spd_and_partition() -> impl Strategy<Value = (SpdMatrix<f64>, CliqueModel)> {
    (1usize..=6).prop_flat_map(|p| {
        (
            prop::collection::vec(-2.0f64..2.0, p * p),
            prop::collection::vec(0usize..p, p),
        )
            .prop_map(move |(raw, labels)| {
                let b = DMatrix::from_column_slice(p, p, &raw);
                let s = SpdMatrix::new(&b * b.transpose() + DMatrix::identity(p, p) * 0.2).unwrap();
                (s, CliqueModel::from_labels(&labels).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn restriction_stays_positive_definite((s, m) in spd_and_partition()) {
        let r = restrict_to_model(&s, &m).unwrap();
        prop_assert!(SpdMatrix::new(r.matrix().clone()).is_ok());
        prop_assert!(is_compatible(&m, &r));
    }

    #[test]
    fn fischer_hadamard_and_spectral_bounds((s, m) in spd_and_partition()) {
        let r = restrict_to_model(&s, &m).unwrap();
        let (ld, ld_m) = (s.log_det(), r.log_det());
        prop_assert!(ld <= ld_m + 1e-9);
        // eigenvalues of (S^M)^{-1}(S - S^M), symmetrized through the Cholesky factor of S^M
        let l = r.chol_factor();
        let li = l.clone().try_inverse().unwrap();
        let d = s.matrix() - r.matrix();
        let sym = &li * d * li.transpose();
        let eig = SymmetricEigen::new((&sym + sym.transpose()) * 0.5).eigenvalues;
        let rho = eig.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let lambda = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let p = s.dim() as f64;
        prop_assert!(-p * rho * rho / (1.0 + lambda) + ld_m <= ld + 1e-9);
    }
}

#[test]
fn submodel_is_a_partial_order() {
    let all = enumerate_partitions(5).unwrap();
    assert_eq!(all.len(), 52);
    for a in &all {
        assert!(is_submodel(a, a));
        for b in &all {
            if a != b && is_submodel(a, b) {
                assert!(!is_submodel(b, a));
            }
            if !is_submodel(a, b) {
                continue;
            }
            for c in &all {
                if is_submodel(b, c) {
                    assert!(is_submodel(a, c));
                }
            }
        }
    }
}

#[test]
fn partition_counts() {
    let counts: Vec<usize> = (1..=4).map(|p| enumerate_partitions(p).unwrap().len()).collect();
    assert_eq!(counts, vec![1, 2, 5, 15]);
    assert!(enumerate_partitions(9).is_err());
}

#[test]
fn restriction_examples() {
    let s = SpdMatrix::new(dmatrix![1.0, 0.5; 0.5, 1.0]).unwrap();
    let single = restrict_to_model(&s, &CliqueModel::single_clique(2)).unwrap();
    assert_eq!(single.matrix(), s.matrix());
    let split = restrict_to_model(&s, &CliqueModel::singletons(2)).unwrap();
    assert_eq!(split.matrix(), &DMatrix::<f64>::identity(2, 2));
    assert!(!is_compatible(&CliqueModel::singletons(2), &s));
}

#[test]
fn submodel_examples() {
    let m = |s: &str| s.parse::<CliqueModel>().unwrap();
    assert!(is_submodel(&m("1|2|3"), &m("1 2|3")));
    assert!(!is_submodel(&m("1 2|3"), &m("1 3|2")));
}

#[test]
fn text_forms_round_trip() {
    let m: CliqueModel = "1|2 3|4 5 6".parse().unwrap();
    assert_eq!(m.to_string(), "1|2 3|4 5 6");
    assert_eq!(m.sizes(), vec![1, 2, 3]);
    let relabelled = CliqueModel::from_labels(&[7, 7, 2, 2, 9]).unwrap();
    assert_eq!(relabelled.to_string(), "1 2|3 4|5");
    let pat = m.to_pattern();
    assert_eq!(pattern_to_clique(&pat), Some(m));
    assert_eq!(pattern_to_clique(&SparsityPattern::full(3)), Some(CliqueModel::single_clique(3)));
}
