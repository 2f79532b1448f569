use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nzlab::bath::*;
use nzlab::linalg::*;
use nzlab::liouville::*;
use nzlab::model::*;
use nzlab::spectral::*;
use nzlab::Error;

#[test]
fn three_level_bohr_frequencies() {
    let b = bohr_decomposition(&real_diag(&[0.0, 1.0, 3.0]), None).unwrap();
    assert_eq!(b.len(), 7);
    let want = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
    for (w, x) in b.frequencies().iter().zip(want) {
        assert!((w - x).abs() < 1e-12);
    }
    assert!(b.completeness_residual() < 1e-12);
    assert!(b.orthogonality_residual() < 1e-12);
    assert!(b.reconstruction_residual(&real_diag(&[0.0, 1.0, 3.0])) < 1e-12);
}

#[test]
fn equally_spaced_levels_merge() {
    // 0, 1, 2 share the gap 1 twice: five frequencies
    let b = bohr_decomposition(&real_diag(&[0.0, 1.0, 2.0]), None).unwrap();
    assert_eq!(b.len(), 5);
    let m = b.index_of(1.0).unwrap();
    assert_eq!(b.entries[m].pairs.len(), 2);
}

#[test]
fn multiple_of_identity_has_one_frequency() {
    let b = bohr_decomposition(&(eye(3) * c(2.5)), None).unwrap();
    assert_eq!(b.len(), 1);
    assert_eq!(b.frequencies()[0], 0.0);
    assert!(max_abs(&(&b.entries[0].superop.mat - eye(9))) < 1e-12);
}

#[test]
fn bohr_decomposition_on_random_hamiltonians() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..20 {
        let d = 2 + k % 4;
        let h = random_hermitian(&mut rng, d);
        let b = bohr_decomposition(&h, None).unwrap();
        assert!(b.completeness_residual() < 1e-10);
        assert!(b.orthogonality_residual() < 1e-10);
        assert!(b.reconstruction_residual(&h) < 1e-10 * (1.0 + op_norm(&h)));
    }
}

#[test]
fn bohr_rejects_non_hermitian() {
    let mut a = pauli_x();
    a[(0, 1)] = c(3.0);
    assert!(matches!(bohr_decomposition(&a, None), Err(Error::NotHermitian(_))));
}

#[test]
fn zero_eigenprojection_properties() {
    let dims = CompositeDims::new(2, 3).unwrap();
    let hb = real_diag(&[0.0, 0.7, 1.5]);
    let om = gibbs_state(&hb, 1.0).unwrap();
    let p = zero_eigenprojection(&om, &hb, dims, false).unwrap();
    assert!(p.idempotency_residual() < 1e-14);
    let lb = commutator_matrix(&lift_bath(&hb, dims).unwrap());
    assert!(max_abs(&(&p.mat * &lb)) < 1e-14);
    assert!(max_abs(&(&lb * &p.mat)) < 1e-14);
    let x = CMat::from_fn(6, 6, |i, j| C64::new((i + 2 * j) as f64, i as f64 - j as f64));
    assert!(max_abs(&(p.apply(&x) - project_reference(&x, &om, dims))) < 1e-12);

    let coherent = CMat::from_element(3, 3, c(1.0 / 3.0));
    assert!(matches!(zero_eigenprojection(&coherent, &hb, dims, false), Err(Error::NonStationary(_))));
    assert!(zero_eigenprojection(&coherent, &hb, dims, true).is_ok());
}

#[test]
fn diagonal_projection_is_idempotent() {
    let hb = real_diag(&[0.0, 1.0, 1.0, 2.0]);
    let eig = BathEigenstructure::new(&hb, None).unwrap();
    assert_eq!(eig.projectors.len(), 3);
    let x = CMat::from_fn(8, 8, |i, j| C64::new((i * j) as f64 * 0.1, (i as f64 - j as f64) * 0.2));
    let once = diagonal_projection(&x, &eig, 2).unwrap();
    let twice = diagonal_projection(&once, &eig, 2).unwrap();
    assert!(max_abs(&(&once - twice)) < 1e-14);
    // d_S = 1 is allowed
    let y = CMat::from_fn(4, 4, |i, j| c((i + j) as f64));
    let py = diagonal_projection(&y, &eig, 1).unwrap();
    assert_eq!(py[(0, 3)], ZERO);
    assert_eq!(py[(1, 2)], y[(1, 2)]);
    assert!(diagonal_projection(&y, &eig, 2).is_err());
}

#[test]
fn cesaro_average_of_two_level_coherence() {
    // coherence at frequency 1 averages to (e^{-iT} - 1)/(-iT)
    let h = real_diag(&[0.0, 1.0]);
    let l = hamiltonian_liouvillian(&Operator::plain(h).unwrap()).unwrap();
    let mut x = zeros(2, 2);
    x[(0, 1)] = ONE;
    for horizon in [5.0, 40.0] {
        let avg = cesaro_average(&l, &x, horizon, 4096).unwrap();
        let exact = ((I * horizon).exp() - ONE) / (I * horizon);
        assert!((avg[(0, 1)] - exact).norm() < 1e-5, "{} vs {exact}", avg[(0, 1)]);
        assert!(avg[(0, 1)].norm() <= 2.0 / horizon + 1e-9);
    }
    assert!(cesaro_average(&l, &x, 1.0, 8).is_err());
    assert!(cesaro_average(&l, &x, -1.0, 128).is_err());
}

#[test]
fn mixing_proxy_vanishes_for_identity() {
    let bath = build_quasicontinuum_bath(16, (0.5, 1.5), SpectralShape::Flat { strength: 0.3 }, f64::INFINITY, Sector::SingleExcitation)
        .unwrap();
    let d = bath.dim();
    let y = bath.couplings[0].clone();
    let cs = check_mixing_proxy(&bath, &eye(d), &y, &[0.0, 1.0, 5.0]).unwrap();
    assert!(cs.iter().all(|z| z.norm() < 1e-14));
}

#[test]
fn mixing_proxy_decays_for_a_packet() {
    let bath = build_quasicontinuum_bath(64, (0.25, 1.75), SpectralShape::Flat { strength: 0.3 }, f64::INFINITY, Sector::SingleExcitation)
        .unwrap();
    let b = bath.mode_annihilator(&bath.packet_state(0.25, 0).unwrap()).unwrap();
    let x = &b + b.adjoint();
    let t0 = 20.0 / bath.bandwidth;
    let grid = linspace(t0, 0.8 * bath.t_rec, 200);
    let cs = check_mixing_proxy(&bath, &x, &x, &grid).unwrap();
    let c0 = check_mixing_proxy(&bath, &x, &x, &[0.0]).unwrap()[0].norm();
    let peak = cs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(peak < 0.05 * c0, "plateau {peak} vs {c0}");
}
