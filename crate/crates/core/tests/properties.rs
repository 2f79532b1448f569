use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nzlab::bath::*;
use nzlab::harness::records::fmt_float;
use nzlab::linalg::*;
use nzlab::liouville::*;
use nzlab::model::*;
use nzlab::projection::*;
use nzlab::spectral::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_density(seed: u64, n: usize) -> CMat {
    let a = random_hermitian(&mut rng(seed), n);
    let p = &a * a.adjoint() + eye(n) * c(1e-3);
    let tr = p.trace();
    p / tr
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vectorize_round_trip(seed in any::<u64>(), n in 1usize..6) {
        let a = random_hermitian(&mut rng(seed), n);
        prop_assert_eq!(devectorize(&vectorize(&a).unwrap()).unwrap(), a);
    }

    #[test]
    fn liouvillian_is_anti_hermitian_and_trace_free(seed in any::<u64>(), n in 2usize..6) {
        let h = random_hermitian(&mut rng(seed), n);
        let l = hamiltonian_liouvillian(&Operator::plain(h.clone()).unwrap()).unwrap();
        prop_assert!(max_abs(&(&l.mat + l.mat.adjoint())) < 1e-12);
        prop_assert!(l.trace_annihilation_residual() < 1e-12);
        prop_assert!(max_abs(&l.apply(&h)) < 1e-12);
        prop_assert!(max_abs(&l.apply(&eye(n))) < 1e-12);
    }

    #[test]
    fn unitary_propagation_preserves_states(seed in any::<u64>(), n in 2usize..6, t in -5.0f64..5.0) {
        let h = random_hermitian(&mut rng(seed), n);
        let rho = random_density(seed ^ 0x5555, n);
        let out = propagate_unitary(&Operator::plain(h).unwrap(), &Operator::plain(rho.clone()).unwrap(), t).unwrap();
        prop_assert!(check_density(&out.mat).is_ok());
        for (a, b) in eigvalsh(&rho).iter().zip(eigvalsh(&out.mat)) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn partial_trace_adjointness(seed in any::<u64>(), ds in 2usize..4, db in 1usize..5) {
        let dims = CompositeDims::new(ds, db).unwrap();
        let x = random_hermitian(&mut rng(seed), ds * db);
        let a = random_hermitian(&mut rng(seed.wrapping_add(1)), ds);
        let b = random_hermitian(&mut rng(seed.wrapping_add(2)), db);
        let lhs = trace_prod(&lift_system(&a, dims).unwrap(), &x);
        prop_assert!((lhs - trace_prod(&a, &trace_out_bath(&x, dims))).norm() < 1e-10);
        let lhs = trace_prod(&lift_bath(&b, dims).unwrap(), &x);
        prop_assert!((lhs - trace_prod(&b, &trace_out_system(&x, dims))).norm() < 1e-10);
    }

    #[test]
    fn bohr_projectors_resolve_the_liouvillian(seed in any::<u64>(), n in 2usize..6) {
        let h = random_hermitian(&mut rng(seed), n);
        let b = bohr_decomposition(&h, None).unwrap();
        prop_assert!(b.completeness_residual() < 1e-10);
        prop_assert!(b.orthogonality_residual() < 1e-10);
        prop_assert!(b.reconstruction_residual(&h) < 1e-9 * (1.0 + op_norm(&h)));
        let f = b.frequencies();
        for w in &f {
            prop_assert!(f.iter().any(|x| (x + w).abs() < 1e-9));
        }
    }

    #[test]
    fn split_invariants(seed in any::<u64>(), ds in 2usize..4, db in 2usize..5, nc in 1usize..3) {
        let model = random_admissible_model(&mut rng(seed), ds, db, nc).unwrap();
        let split = NZSplit::for_model(&model).unwrap();
        prop_assert!(split.reference_is_stationary);
        let (p, q) = (split.p_dense().unwrap(), split.q_dense().unwrap());
        prop_assert!(p.idempotency_residual() < 1e-10);
        prop_assert!(q.idempotency_residual() < 1e-10);
        prop_assert!(p.compose(q).max_abs() < 1e-10);
        prop_assert!(q.commutator(&model.l_b().unwrap()).max_abs() < 1e-10);
        prop_assert!(p.commutator(&model.l_s().unwrap()).max_abs() < 1e-10);
        prop_assert!(decompose_liouvillian(&model, 0.37, &split).unwrap().residual < 1e-10);
    }

    #[test]
    fn gibbs_states_are_stationary_densities(seed in any::<u64>(), n in 2usize..6, beta in 0.0f64..20.0) {
        let h = random_hermitian(&mut rng(seed), n);
        let g = gibbs_state(&h, beta).unwrap();
        prop_assert!(check_density(&g).is_ok());
        prop_assert!(max_abs(&comm(&h, &g)) < 1e-10);
    }

    #[test]
    fn sector_overlap_is_a_symmetric_fidelity(b1 in 0.5f64..6.0, b2 in 0.5f64..6.0, n in 1usize..40) {
        let modes = linspace(1.0, 2.0, n.max(2));
        let a = sector_overlap(b1, b2, &modes).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0 + 1e-12);
        prop_assert!((a - sector_overlap(b2, b1, &modes).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn csv_floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
    }
}
