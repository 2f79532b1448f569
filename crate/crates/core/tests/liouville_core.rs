use nzlab::linalg::*;
use nzlab::liouville::*;
use nzlab::model::{pauli_x, pauli_y, pauli_z};
use nzlab::Error;

fn sorted_spectrum(m: &CMat) -> Vec<C64> {
    let (_, t) = m.clone().schur().unpack();
    let mut v: Vec<C64> = (0..t.nrows()).map(|i| t[(i, i)]).collect();
    v.sort_by(|a, b| a.im.total_cmp(&b.im));
    v
}

fn plain(m: CMat) -> Operator {
    Operator::plain(m).unwrap()
}

#[test]
fn vectorize_stacks_columns() {
    let a = CMat::from_row_slice(2, 2, &[c(1.0), c(2.0), c(3.0), c(4.0)]);
    let v = vectorize(&a).unwrap();
    assert_eq!(v.as_slice(), &[c(1.0), c(3.0), c(2.0), c(4.0)]);
    assert_eq!(devectorize(&v).unwrap(), a);
    assert!(matches!(devectorize(&CVec::zeros(3)), Err(Error::Dimension(_))));
}

#[test]
fn qubit_liouvillian_spectra() {
    let l = hamiltonian_liouvillian(&plain(real_diag(&[0.0, 1.0]))).unwrap();
    let s = sorted_spectrum(&l.mat);
    let want = [-1.0, 0.0, 0.0, 1.0];
    for (z, w) in s.iter().zip(want) {
        assert!((z - C64::new(0.0, w)).norm() < 1e-12, "{s:?}");
    }
    let l = hamiltonian_liouvillian(&plain(pauli_x())).unwrap();
    let s = sorted_spectrum(&l.mat);
    let want = [-2.0, 0.0, 0.0, 2.0];
    for (z, w) in s.iter().zip(want) {
        assert!((z - C64::new(0.0, w)).norm() < 1e-12, "{s:?}");
    }
}

#[test]
fn liouvillian_rejects_non_hermitian() {
    let mut a = pauli_x();
    a[(0, 1)] = c(2.0);
    assert!(matches!(hamiltonian_liouvillian(&plain(a)), Err(Error::NotHermitian(_))));
}

#[test]
fn liouvillian_matches_commutator() {
    let h = pauli_x() * c(0.3) + pauli_z() * c(0.7);
    let x = pauli_y() + real_diag(&[0.2, -0.5]);
    let l = hamiltonian_liouvillian(&plain(h.clone())).unwrap();
    let direct = comm(&h, &x) * (-I);
    assert!(max_abs(&(l.apply(&x) - direct)) < 1e-14);
}

#[test]
fn lifting_places_factors() {
    let dims = CompositeDims::new(2, 2).unwrap();
    let lb = lift_bath(&real_diag(&[0.0, 1.0]), dims).unwrap();
    assert!(max_abs(&(lb - real_diag(&[0.0, 1.0, 0.0, 1.0]))) == 0.0);
    let ls = lift_system(&real_diag(&[0.0, 1.0]), dims).unwrap();
    assert!(max_abs(&(ls - real_diag(&[0.0, 0.0, 1.0, 1.0]))) == 0.0);
    assert!(matches!(lift_bath(&eye(3), dims), Err(Error::Dimension(_))));
    assert!(CompositeDims::new(1, 4).is_err());
}

#[test]
fn lifted_superoperators_act_on_one_factor() {
    let dims = CompositeDims::new(2, 3).unwrap();
    let hs = pauli_x() * c(0.4) + pauli_z();
    let hb = real_diag(&[0.0, 0.5, 1.3]);
    let a = hamiltonian_liouvillian(&plain(hs.clone())).unwrap();
    let b = hamiltonian_liouvillian(&plain(hb.clone())).unwrap();
    let la = lift_superop_system(&a.mat, dims).unwrap();
    let lb = lift_superop_bath(&b.mat, dims).unwrap();
    let direct_a = commutator_matrix(&lift_system(&hs, dims).unwrap());
    let direct_b = commutator_matrix(&lift_bath(&hb, dims).unwrap());
    assert!(max_abs(&(la.mat - direct_a)) < 1e-14);
    assert!(max_abs(&(lb.mat - direct_b)) < 1e-14);
}

#[test]
fn partial_traces_of_products() {
    let dims = CompositeDims::new(2, 3).unwrap();
    let a = CMat::from_row_slice(2, 2, &[c(0.3), C64::new(0.1, 0.2), C64::new(0.1, -0.2), c(0.7)]);
    let b = real_diag(&[0.5, 0.3, 0.2]);
    let rho = Operator::composite(dims, kron(&a, &b)).unwrap();
    let rs = partial_trace_bath(&rho).unwrap();
    assert!(max_abs(&(rs.mat - &a)) < 1e-15);
    assert!(max_abs(&(trace_out_system(&kron(&a, &b), dims) - &b)) < 1e-15);
    assert!(partial_trace_bath(&plain(eye(6))).is_err());
}

#[test]
fn partial_trace_is_adjoint_to_lift() {
    // tr[(A ⊗ 1) X] = tr[A tr_B X]
    let dims = CompositeDims::new(2, 3).unwrap();
    let x = CMat::from_fn(6, 6, |i, j| C64::new((i * 7 + j) as f64 * 0.1, (i as f64) - (j as f64)));
    let a = pauli_y() + pauli_z() * c(0.5);
    let lhs = trace_prod(&lift_system(&a, dims).unwrap(), &x);
    let rhs = trace_prod(&a, &trace_out_bath(&x, dims));
    assert!((lhs - rhs).norm() < 1e-12);
}

#[test]
fn propagation_composes_and_preserves_spectrum() {
    let h = pauli_x() * c(0.8) + pauli_z() * c(0.3);
    let rho = plain(CMat::from_row_slice(2, 2, &[c(0.6), C64::new(0.1, 0.2), C64::new(0.1, -0.2), c(0.4)]));
    let hop = plain(h.clone());
    let ab = propagate_unitary(&hop, &propagate_unitary(&hop, &rho, 0.7).unwrap(), 1.1).unwrap();
    let direct = propagate_unitary(&hop, &rho, 1.8).unwrap();
    assert!(max_abs(&(&ab.mat - &direct.mat)) < 1e-13);
    let (e0, e1) = (eigvalsh(&rho.mat), eigvalsh(&direct.mat));
    for (x, y) in e0.iter().zip(&e1) {
        assert!((x - y).abs() < 1e-13);
    }
    let back = propagate_unitary(&hop, &direct, -1.8).unwrap();
    assert!(max_abs(&(back.mat - &rho.mat)) < 1e-13);
}

#[test]
fn superop_exponential_matches_unitary() {
    let h = pauli_x() * c(0.8) + pauli_z() * c(0.3);
    let rho = CMat::from_row_slice(2, 2, &[c(0.6), C64::new(0.1, 0.2), C64::new(0.1, -0.2), c(0.4)]);
    let l = hamiltonian_liouvillian(&plain(h.clone())).unwrap();
    let a = apply_superop_exp(&l, &rho, 2.3, DENSE_CAP).unwrap();
    let b = propagate_unitary(&plain(h), &plain(rho.clone()), 2.3).unwrap();
    assert!(max_abs(&(a - b.mat)) < 1e-12);
    assert!(matches!(apply_superop_exp(&l, &rho, 1.0, 2), Err(Error::SizeCap { .. })));
}

#[test]
fn density_checks() {
    assert!(check_density(&real_diag(&[0.5, 0.5])).is_ok());
    assert!(matches!(check_density(&real_diag(&[0.5, 0.6])), Err(Error::NotDensity(_))));
    assert!(matches!(check_density(&real_diag(&[1.2, -0.2])), Err(Error::NotDensity(_))));
    assert!(matches!(check_density(&pauli_y()), Err(Error::NotDensity(_)) | Err(Error::NotHermitian(_))));
}
