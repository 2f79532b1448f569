use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nzlab::bath::*;
use nzlab::linalg::*;
use nzlab::liouville::*;
use nzlab::model::*;
use nzlab::projection::*;
use nzlab::Error;

/// Qubit on a 7-level flat band: D^2 = 256 keeps dense kernels cheap.
fn small_model() -> OpenModel {
    let bath = build_quasicontinuum_bath(7, (0.5, 1.5), SpectralShape::Flat { strength: 0.3 }, f64::INFINITY, Sector::SingleExcitation)
        .unwrap();
    OpenModel::new(real_diag(&[0.0, 1.0]), vec![pauli_x()], bath).unwrap()
}

/// Same model with a coherent (non-stationary) reference state.
fn wrong_model() -> OpenModel {
    let m = small_model();
    let n = m.bath.dim();
    let vac = CVec::from_fn(n, |i, _| if i == 0 { ONE } else { ZERO });
    let psi = (vac + m.bath.packet_state(0.3, 0).unwrap()) * c(std::f64::consts::FRAC_1_SQRT_2);
    let bath = m.bath.with_reference(outer(&psi, &psi)).unwrap();
    OpenModel::new(m.h_s.clone(), m.system_ops.clone(), bath).unwrap()
}

fn q0() -> Quadrature {
    Quadrature::default()
}

#[test]
fn projector_flags() {
    let dims = CompositeDims::new(2, 3).unwrap();
    let hb = real_diag(&[0.0, 1.0, 1.0]);
    let thermal = gibbs_state(&hb, 1.0).unwrap();
    let s = make_projector(&thermal, &hb, dims).unwrap();
    assert!(s.reference_is_stationary && s.reference_is_zero_eigenprojection);

    // diagonal, hence stationary, but not flat on the degenerate pair
    let lopsided = real_diag(&[0.5, 0.4, 0.1]);
    let s = make_projector(&lopsided, &hb, dims).unwrap();
    assert!(s.reference_is_stationary && !s.reference_is_zero_eigenprojection);

    let coherent = CMat::from_element(3, 3, c(1.0 / 3.0));
    let s = make_projector(&coherent, &hb, dims).unwrap();
    assert!(!s.reference_is_stationary && !s.reference_is_zero_eigenprojection);
    assert!(s.stationarity_residual > 0.1);

    assert!(matches!(make_projector(&real_diag(&[0.5, 0.4, 0.4]), &hb, dims), Err(Error::NotDensity(_))));
    assert!(matches!(make_projector(&eye(2), &hb, dims), Err(Error::Dimension(_))));
}

#[test]
fn projector_algebra_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..6 {
        let model = random_admissible_model(&mut rng, 2 + k % 2, 2 + k % 3, 1).unwrap();
        let split = NZSplit::for_model(&model).unwrap();
        let (p, q) = (split.p_dense().unwrap(), split.q_dense().unwrap());
        let id = SuperOperator::identity(p.dims);
        assert!(p.add(q).sub(&id).max_abs() < 1e-12);
        assert!(p.idempotency_residual() < 1e-10);
        assert!(q.idempotency_residual() < 1e-10);
        assert!(p.compose(q).max_abs() < 1e-10);
        assert!(p.commutator(&model.l_s().unwrap()).max_abs() < 1e-10);
        assert!(q.commutator(&model.l_b().unwrap()).max_abs() < 1e-10);
        let x = CMat::from_fn(model.dims.total(), model.dims.total(), |i, j| C64::new(i as f64, j as f64));
        assert!(max_abs(&(p.apply(&x) - split.apply_p(&x))) < 1e-12);
    }
}

#[test]
fn five_term_split() {
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    let five = decompose_liouvillian(&model, 0.3, &split).unwrap();
    assert!(five.residual < 1e-10);
    let zero = decompose_liouvillian(&model, 0.0, &split).unwrap();
    assert!(zero.terms[2..].iter().all(|t| t.max_abs() == 0.0));
    // P L_SB P is not one of the terms because it vanishes
    let (p, lsb) = (split.p_dense().unwrap(), model.l_sb().unwrap());
    assert!(p.compose(&lsb).compose(p).max_abs() < 1e-14);
}

#[test]
fn coupling_condition_violation() {
    let mut model = small_model();
    let n = model.bath.dim();
    model.bath.couplings[0] += eye(n) * c(0.2);
    let split = NZSplit::for_model(&model).unwrap();
    assert!(check_coupling_condition(&model, &split) > 1e-3);
    assert!(matches!(decompose_liouvillian(&model, 0.3, &split), Err(Error::Coupling(_))));
}

#[test]
fn kernel_r_edge_cases() {
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    assert!(kernel_r(&model, 0, 0.2, 0.0, &split, &q0()).unwrap().max_abs() == 0.0);
    let fwd = kernel_r(&model, 0, 0.2, 0.02, &split, &q0()).unwrap();
    let back = kernel_r(&model, 0, 0.2, -0.02, &split, &q0()).unwrap();
    assert!(fwd.max_abs() > 0.0 && back.max_abs() > 0.0);
    assert!(matches!(kernel_r(&model, 0, 0.01, 1.0, &split, &q0()), Err(Error::Window { .. })));
    let coarse = Quadrature { step: Some(1.0), cap: None };
    assert!(matches!(kernel_r(&model, 0, 0.2, 0.02, &split, &coarse), Err(Error::Nyquist { .. })));
    assert!(kernel_r(&model, 99, 0.2, 0.02, &split, &q0()).is_err());
}

#[test]
fn kernel_r_approaches_the_resolvent() {
    // the comparison is meaningful while τ/λ² stays below 1/η
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    let eta = model.bath.dw;
    for m in 0..model.bohr.len() {
        let g = resolvent_dense(&model, m, eta, &split, true).unwrap();
        let d: Vec<f64> =
            [0.4, 0.2, 0.1].iter().map(|&lam| op_norm(&(kernel_r(&model, m, lam, 0.05, &split, &q0()).unwrap().mat - &g.mat))).collect();
        assert!(d[1] < d[0] && d[2] < d[1], "m = {m}: {d:?}");
    }
}

#[test]
fn lambda_cubed_decay_on_the_coupling_range() {
    // R enters every kernel as R L_SB P; on that range λ³‖R‖ halves at least
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    let lp = &model.l_sb().unwrap().mat * &split.p_dense().unwrap().mat;
    for m in 0..model.bohr.len() {
        let v: Vec<f64> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&lam: &f64| lam.powi(3) * op_norm(&(&kernel_r(&model, m, lam, 0.05, &split, &q0()).unwrap().mat * &lp)))
            .collect();
        assert!(v[0] / v[1] >= 2.0 && v[1] / v[2] >= 2.0, "m = {m}: {v:?}");
    }
}

#[test]
fn full_r_grows_linearly_on_a_finite_bath() {
    // bath populations other than Ω_B sit in the range of Q at zero frequency,
    // so the bare norm grows like τ/λ² even with the correct reference
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    let m0 = model.bohr.index_of(0.0).unwrap();
    let v: Vec<f64> = [0.4, 0.2, 0.1].iter().map(|&lam| op_norm(&kernel_r(&model, m0, lam, 0.05, &split, &q0()).unwrap().mat)).collect();
    for w in v.windows(2) {
        assert!((w[1] / w[0] - 4.0).abs() < 0.4, "{v:?}");
    }
}

#[test]
fn wrong_reference_growth() {
    let model = wrong_model();
    let split = NZSplit::for_model(&model).unwrap();
    assert!(!split.reference_is_zero_eigenprojection);
    let m0 = model.bohr.index_of(0.0).unwrap();
    let v: Vec<f64> = [0.4, 0.2, 0.1].iter().map(|&lam| op_norm(&kernel_r(&model, m0, lam, 0.05, &split, &q0()).unwrap().mat)).collect();
    for w in v.windows(2) {
        assert!((w[1] / w[0] - 4.0).abs() < 0.4, "{v:?}");
    }
    // on the coupling range the wrong reference grows faster than τ/λ²
    let lp = &model.l_sb().unwrap().mat * &split.p_dense().unwrap().mat;
    let r: Vec<f64> = [0.4, 0.2].iter().map(|&lam| op_norm(&(&kernel_r(&model, m0, lam, 0.05, &split, &q0()).unwrap().mat * &lp))).collect();
    assert!(r[1] / r[0] > 4.0, "{r:?}");
    assert!(matches!(recurrence_residual(&model, m0, 0.2, 0.05, &split, model.bath.dw, &q0()), Err(Error::NonStationary(_))));
}

#[test]
fn recurrence_closes_within_the_quadrature_bound() {
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    let eta = model.bath.dw;
    for m in 0..model.bohr.len() {
        for lam in [0.4, 0.2] {
            let r = recurrence_residual(&model, m, lam, 0.05, &split, eta, &q0()).unwrap();
            assert!(r.corrected < r.bound, "m = {m}, λ = {lam}: {r:?}");
            assert!(r.corrected < r.raw);
        }
    }
    assert!(recurrence_residual(&model, 0, 0.2, 0.0, &split, eta, &q0()).is_err());
    assert!(matches!(resolvent_dense(&model, 0, 0.0, &split, true), Err(Error::Singular(_))));
}

#[test]
fn memory_kernel_edge_cases() {
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    let k = memory_kernel(&model, 0, 0, 0.2, 0.0, &split).unwrap();
    assert!(max_abs(&k) == 0.0);
    assert!(secular_norms(&model, 0.2, 0.0, &split).unwrap().iter().all(|&x| x == 0.0));
    let k = memory_kernel(&model, 0, 0, 0.2, 0.05, &split).unwrap();
    assert_eq!(k.nrows(), 4);
    assert!(memory_kernel(&model, 0, 0, 0.0, 0.05, &split).is_err());
}

#[test]
fn initial_correlation_term_cases() {
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    let sigma = CMat::from_row_slice(2, 2, &[c(0.3), c(0.25), c(0.25), c(0.7)]);
    let fact = kron(&sigma, &model.bath.omega_b);
    let i = initial_correlation_term(&model, 0.2, 0.05, &fact, &split).unwrap();
    assert!(max_abs(&i) == 0.0);

    let b = model.bath.mode_annihilator(&model.bath.packet_state(0.3, 0).unwrap()).unwrap();
    let l = exchange_factor(&sigma, &b, std::f64::consts::FRAC_PI_4).unwrap();
    let rho0 = correlated_initial_state(&[l], &model.bath.omega_b, model.dims).unwrap().rho0;
    assert!(max_abs(&initial_correlation_term(&model, 0.2, 0.0, &rho0, &split).unwrap()) == 0.0);
    let i = initial_correlation_term(&model, 0.2, 0.05, &rho0, &split).unwrap();
    assert!(trace_norm(&i) > 0.0);
    assert!(i.trace().norm() < 1e-12);
}

#[test]
fn prelimit_identity_holds_on_the_grid() {
    let model = small_model();
    let split = NZSplit::for_model(&model).unwrap();
    let sigma = CMat::from_row_slice(2, 2, &[c(0.3), c(0.25), c(0.25), c(0.7)]);
    let b = model.bath.mode_annihilator(&model.bath.packet_state(0.3, 0).unwrap()).unwrap();
    let l = exchange_factor(&sigma, &b, std::f64::consts::FRAC_PI_4).unwrap();
    let rho0 = correlated_initial_state(&[l], &model.bath.omega_b, model.dims).unwrap().rho0;
    let times: Vec<f64> = (1..=8).map(|i| 0.5 * i as f64).collect();
    let r = nzlab::generator::prelimit_consistency_check(&model, 0.3, &times, &rho0, &split, 0.01).unwrap();
    assert!(r.iter().all(|&x| x < 1e-4), "{r:?}");
    assert!(nzlab::generator::prelimit_consistency_check(&model, 0.3, &[0.505], &rho0, &split, 0.01).is_err());
}
