//! System + bath models: H = H_S ⊗ 1 + 1 ⊗ H_B + λ Σ A_i ⊗ B_i.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bath::*;
use crate::error::{Error, Result};
use crate::liouville::*;
use crate::linalg::*;
use crate::spectral::{bohr_decomposition, BohrDecomposition};

/// Product eigenbasis of H_0 = H_S ⊗ 1 + 1 ⊗ H_B. When both factors are
/// already diagonal the rotation is skipped.
#[derive(Clone, Debug)]
pub struct Frame {
    pub es: Vec<f64>,
    pub eb: Vec<f64>,
    pub vs: Option<CMat>,
    pub vb: Option<CMat>,
}

fn is_diagonal(h: &CMat) -> bool {
    let n = h.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || h[(i, j)] == ZERO))
}

fn factor_frame(h: &CMat) -> (Vec<f64>, Option<CMat>) {
    if is_diagonal(h) {
        ((0..h.nrows()).map(|i| h[(i, i)].re).collect(), None)
    } else {
        let (e, v) = eigh(h);
        (e, Some(v))
    }
}

fn rotate_in(v: &Option<CMat>, x: &CMat) -> CMat {
    match v {
        Some(v) => v.adjoint() * x * v,
        None => x.clone(),
    }
}

fn rotate_out(v: &Option<CMat>, x: &CMat) -> CMat {
    match v {
        Some(v) => v * x * v.adjoint(),
        None => x.clone(),
    }
}

impl Frame {
    pub fn new(h_s: &CMat, h_b: &CMat) -> Self {
        let (es, vs) = factor_frame(h_s);
        let (eb, vb) = factor_frame(h_b);
        Self { es, eb, vs, vb }
    }

    pub fn is_trivial(&self) -> bool {
        self.vs.is_none() && self.vb.is_none()
    }

    /// Eigenvalues of H_0 in composite order s·d_B + b.
    pub fn energies(&self) -> Vec<f64> {
        self.es.iter().flat_map(|&s| self.eb.iter().map(move |&b| s + b)).collect()
    }

    fn total(&self) -> Option<CMat> {
        if self.is_trivial() {
            return None;
        }
        let ds = self.es.len();
        let db = self.eb.len();
        let vs = self.vs.clone().unwrap_or_else(|| eye(ds));
        let vb = self.vb.clone().unwrap_or_else(|| eye(db));
        Some(kron(&vs, &vb))
    }

    pub fn to_frame(&self, x: &CMat) -> CMat {
        rotate_in(&self.total(), x)
    }

    pub fn from_frame(&self, x: &CMat) -> CMat {
        rotate_out(&self.total(), x)
    }

    pub fn sys_to_frame(&self, x: &CMat) -> CMat {
        rotate_in(&self.vs, x)
    }

    pub fn sys_from_frame(&self, x: &CMat) -> CMat {
        rotate_out(&self.vs, x)
    }

    pub fn bath_to_frame(&self, x: &CMat) -> CMat {
        rotate_in(&self.vb, x)
    }
}

#[derive(Clone, Debug)]
pub struct OpenModel {
    pub dims: CompositeDims,
    pub h_s: CMat,
    pub bath: BathModel,
    /// A_i, paired index by index with `bath.couplings`.
    pub system_ops: Vec<CMat>,
    pub bohr: BohrDecomposition,
    pub frame: Frame,
}

impl OpenModel {
    pub fn new(h_s: CMat, system_ops: Vec<CMat>, bath: BathModel) -> Result<Self> {
        let dims = CompositeDims::new(h_s.nrows(), bath.dim())?;
        if system_ops.len() != bath.couplings.len() {
            return Err(Error::Dimension(format!(
                "{} system operators for {} bath couplings",
                system_ops.len(),
                bath.couplings.len()
            )));
        }
        for a in std::iter::once(&h_s).chain(system_ops.iter()) {
            if a.nrows() != dims.d_s || a.ncols() != dims.d_s {
                return Err(Error::Dimension("system operator does not match d_S".into()));
            }
            let r = herm_residual(a);
            if r > TAU_HERM * (1.0 + max_abs(a)) {
                return Err(Error::NotHermitian(r));
            }
        }
        let bohr = bohr_decomposition(&h_s, None)?;
        let frame = Frame::new(&h_s, &bath.h_b);
        Ok(Self { dims, h_s, bath, system_ops, bohr, frame })
    }

    pub fn h0(&self) -> CMat {
        kron(&self.h_s, &eye(self.dims.d_b)) + kron(&eye(self.dims.d_s), &self.bath.h_b)
    }

    pub fn h_sb(&self) -> CMat {
        let n = self.dims.total();
        let mut h = zeros(n, n);
        for (a, b) in self.system_ops.iter().zip(&self.bath.couplings) {
            h += kron(a, b);
        }
        h
    }

    pub fn h_total(&self, lam: f64) -> CMat {
        self.h0() + self.h_sb() * c(lam)
    }

    /// Upper bound Σ ‖A_i‖ ‖B_i‖ on ‖H_SB‖.
    pub fn coupling_norm_bound(&self) -> f64 {
        self.system_ops.iter().zip(&self.bath.couplings).map(|(a, b)| op_norm(a) * op_norm(b)).sum()
    }

    /// Frequency estimate ν for ‖L_0'‖ used by the step guard.
    pub fn rate_estimate(&self, lam: f64) -> f64 {
        let e = self.frame.energies();
        let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        (hi - lo) + 2.0 * lam.abs() * self.coupling_norm_bound()
    }

    /// Largest admissible uniform quadrature step at coupling λ.
    pub fn max_step(&self, lam: f64) -> f64 {
        0.1 / self.rate_estimate(lam)
    }

    pub fn t_rec(&self) -> f64 {
        self.bath.t_rec
    }

    pub fn window(&self) -> f64 {
        self.bath.validity_window()
    }

    pub fn check_window(&self, t: f64) -> Result<()> {
        if t.abs() > self.window() * (1.0 + 1e-12) {
            return Err(Error::Window { t, window: self.window(), t_rec: self.t_rec() });
        }
        Ok(())
    }

    fn lifted(&self, h: CMat) -> Result<SuperOperator> {
        let op = Operator::composite(self.dims, h)?;
        hamiltonian_liouvillian(&op)
    }

    pub fn l_s(&self) -> Result<SuperOperator> {
        self.lifted(lift_system(&self.h_s, self.dims)?)
    }

    pub fn l_b(&self) -> Result<SuperOperator> {
        self.lifted(lift_bath(&self.bath.h_b, self.dims)?)
    }

    pub fn l_sb(&self) -> Result<SuperOperator> {
        self.lifted(self.h_sb())
    }

    pub fn l0(&self) -> Result<SuperOperator> {
        self.lifted(self.h0())
    }

    pub fn liouvillian(&self, lam: f64) -> Result<SuperOperator> {
        self.lifted(self.h_total(lam))
    }

    pub fn reduced(&self, rho: &CMat) -> CMat {
        trace_out_bath(rho, self.dims)
    }
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMat {
    real_diag(&[1.0, -1.0])
}

/// Qubit with splitting `gap` coupled through σ_x to a single-excitation
/// flat-band bath at zero temperature.
pub fn reference_qubit_model(n: usize, band: (f64, f64), strength: f64, gap: f64) -> Result<OpenModel> {
    let bath = build_quasicontinuum_bath(n, band, SpectralShape::Flat { strength }, f64::INFINITY, Sector::SingleExcitation)?;
    OpenModel::new(real_diag(&[0.0, gap]), vec![pauli_x()], bath)
}

/// Random Hermitian matrix with Gaussian entries.
pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    (&g + g.adjoint()) * c(0.5)
}

/// Random model satisfying the projection assumptions: Ω_B is a Gibbs state
/// of a random H_B and every coupling is centred on it.
pub fn random_admissible_model<R: Rng>(rng: &mut R, d_s: usize, d_b: usize, n_couplings: usize) -> Result<OpenModel> {
    let h_b = random_hermitian(rng, d_b);
    let beta = rng.random_range(0.2..2.0);
    let omega = gibbs_state(&h_b, beta)?;
    let couplings = (0..n_couplings).map(|_| random_hermitian(rng, d_b)).collect();
    let bath = BathModel::from_parts(h_b, omega, couplings)?;
    let h_s = random_hermitian(rng, d_s);
    let ops = (0..n_couplings).map(|_| random_hermitian(rng, d_s)).collect();
    OpenModel::new(h_s, ops, bath)
}
