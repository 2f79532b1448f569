use nzlab::bath::*;
use nzlab::generator::*;
use nzlab::linalg::*;
use nzlab::model::*;
use nzlab::projection::*;
use nzlab::Error;

fn qubit(bath: BathModel) -> OpenModel {
    OpenModel::new(real_diag(&[0.0, 1.0]), vec![pauli_x()], bath).unwrap()
}

fn thermal(n: usize, beta: f64) -> OpenModel {
    qubit(build_quasicontinuum_bath(n, (0.25, 1.75), SpectralShape::Flat { strength: 0.3 }, beta, Sector::SingleExcitation).unwrap())
}

fn time_integral(model: &OpenModel) -> DaviesGenerator {
    let split = NZSplit::for_model(model).unwrap();
    davies_generator(model, &split, DaviesMethod::TimeIntegral { t_int: 0.5 * model.t_rec() }).unwrap()
}

#[test]
fn davies_structure() {
    let model = thermal(128, 1.0);
    let split = NZSplit::for_model(&model).unwrap();
    for method in [DaviesMethod::Resolvent { eta: model.bath.dw }, DaviesMethod::TimeIntegral { t_int: 0.5 * model.t_rec() }] {
        let k = davies_generator(&model, &split, method).unwrap();
        let d = k.diagnostics(&model.h_s);
        assert!(d.commutator < 1e-10, "{d:?}");
        assert!(d.trace < 1e-12, "{d:?}");
        assert!(d.hermiticity < 1e-12, "{d:?}");
        assert!(d.max_real < 1e-10, "{d:?}");
        assert_eq!(k.blocks.len(), model.bohr.len());
    }
}

#[test]
fn stationary_state_is_gibbs() {
    let model = thermal(128, 1.0);
    let (fixed, res) = time_integral(&model).stationary_state().unwrap();
    assert!(res < 1e-10);
    let d = trace_distance(&fixed, &gibbs_state(&model.h_s, 1.0).unwrap());
    assert!(d < 1e-3, "trace distance {d:.3e}");
}

#[test]
fn two_temperature_fixed_point_is_not_gibbs() {
    // offset grids keep the two sub-baths free of shared levels
    let bath = build_two_temperature_bath(64, 1.0, (0.25, 1.75), 64, 3.0, (0.26, 1.76), SpectralShape::Flat { strength: 0.3 }).unwrap();
    let model = qubit(bath);
    let (fixed, _) = time_integral(&model).stationary_state().unwrap();
    for beta in [1.0, 3.0] {
        let d = trace_distance(&fixed, &gibbs_state(&model.h_s, beta).unwrap());
        assert!(d > 1e-3, "β = {beta}: {d:.3e}");
    }
    // the excited population sits between the two Gibbs values
    let p = fixed[(1, 1)].re;
    let lo = gibbs_state(&model.h_s, 3.0).unwrap()[(1, 1)].re;
    let hi = gibbs_state(&model.h_s, 1.0).unwrap()[(1, 1)].re;
    assert!(lo < p && p < hi, "{lo} < {p} < {hi}");
}

#[test]
fn regularization_sweep_is_stable() {
    let model = thermal(128, 1.0);
    let split = NZSplit::for_model(&model).unwrap();
    let dw = model.bath.dw;
    let base = davies_generator(&model, &split, DaviesMethod::Resolvent { eta: dw }).unwrap();
    for f in [3.0, 10.0] {
        let k = davies_generator(&model, &split, DaviesMethod::Resolvent { eta: f * dw }).unwrap();
        let d = method_difference(&k, &base);
        assert!(d < 0.1, "η = {f}Δω differs by {d:.3e}");
    }
}

#[test]
fn detailed_balance_against_golden_rule() {
    let model = thermal(128, 1.0);
    let split = NZSplit::for_model(&model).unwrap();
    let eta = model.bath.dw;
    let k = davies_generator(&model, &split, DaviesMethod::Resolvent { eta }).unwrap();
    let (down, up) = golden_rule_rates(&model, eta).unwrap();
    assert!((k.transition_rate(1, 0) / down - 1.0).abs() < 1e-6);
    assert!((k.transition_rate(0, 1) / up - 1.0).abs() < 1e-6);
    let ratio = down / up;
    assert!((ratio / 1f64.exp() - 1.0).abs() < 0.02, "{ratio}");
}

#[test]
fn zero_temperature_suppresses_absorption() {
    // only the off-resonant tail of the finite-time δ survives upward
    let model = thermal(64, f64::INFINITY);
    let k = time_integral(&model);
    let (up, down) = (k.transition_rate(0, 1), k.transition_rate(1, 0));
    assert!(down > 0.0 && up.abs() < 1e-2 * down, "{up} vs {down}");
    let (fixed, _) = k.stationary_state().unwrap();
    assert!((fixed[(0, 0)].re - 1.0).abs() < 1e-2);
}

#[test]
fn generator_preconditions() {
    let model = thermal(32, 1.0);
    let split = NZSplit::for_model(&model).unwrap();
    let tiny = DaviesMethod::Resolvent { eta: 1e-6 * model.bath.dw };
    assert!(matches!(davies_generator(&model, &split, tiny), Err(Error::Singular(_))));
    let long = DaviesMethod::TimeIntegral { t_int: 2.0 * model.t_rec() };
    assert!(matches!(davies_generator(&model, &split, long), Err(Error::Window { .. })));
    assert!(davies_generator(&model, &split, DaviesMethod::TimeIntegral { t_int: 0.0 }).is_err());

    let n = model.bath.dim();
    let coherent = CMat::from_element(n, n, c(1.0 / n as f64));
    let wrong = qubit(model.bath.with_reference(coherent).unwrap());
    let wsplit = NZSplit::for_model(&wrong).unwrap();
    let ok = DaviesMethod::Resolvent { eta: model.bath.dw };
    assert!(matches!(davies_generator(&wrong, &wsplit, ok), Err(Error::NonStationary(_))));

    let mut shifted = model.clone();
    shifted.bath.couplings[0] += eye(n) * c(0.2);
    let ssplit = NZSplit::for_model(&shifted).unwrap();
    assert!(check_coupling_condition(&shifted, &ssplit) > 1e-3);
    assert!(matches!(davies_generator(&shifted, &ssplit, ok), Err(Error::Coupling(_))));
}

#[test]
fn master_equation_trivial_cases() {
    let model = thermal(64, 1.0);
    let k = time_integral(&model);
    let sigma = CMat::from_row_slice(2, 2, &[c(0.3), c(0.25), c(0.25), c(0.7)]);
    let out = solve_master_equation(&k, &sigma, &[0.0, 1.0, 1000.0]).unwrap();
    assert!(max_abs(&(&out[0] - &sigma)) < 1e-14);
    for s in &out {
        assert!((s.trace().re - 1.0).abs() < 1e-12);
        assert!(herm_residual(s) < 1e-12);
    }
    let (fixed, _) = k.stationary_state().unwrap();
    assert!(trace_distance(&out[2], &fixed) < 1e-6);
    assert!(solve_master_equation(&k, &eye(3), &[0.0]).is_err());

    let zero = DaviesGenerator { k: zeros(4, 4), method: k.method, blocks: vec![], warnings: vec![] };
    let still = solve_master_equation(&zero, &sigma, &[5.0]).unwrap();
    assert!(max_abs(&(&still[0] - &sigma)) == 0.0);
}

#[test]
fn memory_kernel_approaches_the_davies_block() {
    let model = thermal(64, f64::INFINITY);
    let split = NZSplit::for_model(&model).unwrap();
    let t = 0.25 * model.t_rec();
    let k = davies_generator(&model, &split, DaviesMethod::TimeIntegral { t_int: t }).unwrap();
    let mut diffs = Vec::new();
    for lam in [0.1, 0.05, 0.025] {
        let blocks = diagonal_kernels(&model, lam, lam * lam * t, &split).unwrap();
        let d: f64 = blocks.iter().zip(&k.blocks).map(|(a, b)| op_norm(&(a - b))).fold(0.0, f64::max);
        diffs.push(d);
    }
    assert!(diffs[1] < diffs[0] && diffs[2] < diffs[1], "{diffs:?}");
    assert!(diffs[2] < 0.05 * k.blocks.iter().map(op_norm).fold(0.0, f64::max), "{diffs:?}");
}

#[test]
fn scaled_dynamics_respects_the_window() {
    let model = thermal(32, f64::INFINITY);
    let rho = kron(&real_diag(&[0.0, 1.0]), &model.bath.omega_b);
    assert!(matches!(scaled_reduced_state(&model, 0.01, 1.0, &rho), Err(Error::Window { .. })));
    let s = scaled_reduced_state(&model, 0.2, 0.1, &rho).unwrap();
    assert!((s.trace().re - 1.0).abs() < 1e-12);
    assert!(s[(1, 1)].re < 1.0);
}
