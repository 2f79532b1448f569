//! Superoperator algebra on a composite system+bath space.
//!
//! Vectorization is column stacking throughout: vec(A)[i + j*n] = A[i, j].
//! With that convention vec(A X B) = (B^T ⊗ A) vec(X), so the Hamiltonian
//! Liouvillian is -i(1 ⊗ H - H^T ⊗ 1). Composite indices put the system
//! factor first: the basis state |s>|b> sits at s*d_B + b.

use crate::error::{Error, Result};
use crate::linalg::*;

pub const TAU_HERM: f64 = 1e-10;
pub const TAU_TR: f64 = 1e-10;
pub const TAU_POS: f64 = 1e-8;
pub const TAU_PROJ: f64 = 1e-10;
/// Largest D^2 for which dense superoperator exponentials are attempted.
pub const DENSE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CompositeDims {
    pub d_s: usize,
    pub d_b: usize,
}

impl CompositeDims {
    pub fn new(d_s: usize, d_b: usize) -> Result<Self> {
        if d_s < 2 || d_b < 1 {
            return Err(Error::Dimension(format!("need d_S >= 2 and d_B >= 1, got {d_s}, {d_b}")));
        }
        Ok(Self { d_s, d_b })
    }

    pub fn total(&self) -> usize {
        self.d_s * self.d_b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dims {
    Plain(usize),
    Composite(CompositeDims),
}

impl Dims {
    pub fn size(&self) -> usize {
        match self {
            Dims::Plain(n) => *n,
            Dims::Composite(c) => c.total(),
        }
    }
}

/// Advisory only; see [`Operator::verify_hermitian`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HermitianHint {
    Hermitian,
    AntiHermitian,
    General,
}

#[derive(Clone, Debug)]
pub struct Operator {
    pub dims: Dims,
    pub mat: CMat,
    pub hint: HermitianHint,
}

impl Operator {
    pub fn plain(mat: CMat) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::Dimension(format!("{}x{} is not square", mat.nrows(), mat.ncols())));
        }
        Ok(Self { dims: Dims::Plain(mat.nrows()), mat, hint: HermitianHint::General })
    }

    pub fn composite(dims: CompositeDims, mat: CMat) -> Result<Self> {
        if mat.nrows() != dims.total() || mat.ncols() != dims.total() {
            return Err(Error::Dimension(format!(
                "matrix {}x{} does not match composite dimension {}",
                mat.nrows(),
                mat.ncols(),
                dims.total()
            )));
        }
        Ok(Self { dims: Dims::Composite(dims), mat, hint: HermitianHint::General })
    }

    pub fn with_hint(mut self, hint: HermitianHint) -> Self {
        self.hint = hint;
        self
    }

    pub fn composite_dims(&self) -> Result<CompositeDims> {
        match self.dims {
            Dims::Composite(c) => Ok(c),
            Dims::Plain(_) => Err(Error::Dimension("operator carries no composite metadata".into())),
        }
    }

    pub fn verify_hermitian(&self, tol: f64) -> Result<()> {
        let r = herm_residual(&self.mat);
        if r > tol {
            return Err(Error::NotHermitian(r));
        }
        Ok(())
    }

    pub fn check_density(&self) -> Result<()> {
        check_density(&self.mat)
    }
}

pub fn check_density(m: &CMat) -> Result<()> {
    let r = herm_residual(m);
    if r > TAU_HERM {
        return Err(Error::NotHermitian(r));
    }
    let tr = m.trace();
    if (tr - ONE).norm() > TAU_TR {
        return Err(Error::NotDensity(format!("trace {tr}")));
    }
    let min = eigvalsh(m)[0];
    if min < -TAU_POS {
        return Err(Error::NotDensity(format!("minimum eigenvalue {min:.3e}")));
    }
    Ok(())
}

pub fn vectorize(a: &CMat) -> Result<CVec> {
    if !a.is_square() {
        return Err(Error::Dimension("vectorize needs a square matrix".into()));
    }
    Ok(CVec::from_column_slice(a.as_slice()))
}

pub fn devectorize(v: &CVec) -> Result<CMat> {
    let n = (v.len() as f64).sqrt().round() as usize;
    if n * n != v.len() {
        return Err(Error::Dimension(format!("length {} is not a perfect square", v.len())));
    }
    Ok(CMat::from_column_slice(n, n, v.as_slice()))
}

#[derive(Clone, Debug)]
pub struct SuperOperator {
    pub dims: Dims,
    pub mat: CMat,
}

impl SuperOperator {
    pub fn new(dims: Dims, mat: CMat) -> Result<Self> {
        let n = dims.size();
        if mat.nrows() != n * n || mat.ncols() != n * n {
            return Err(Error::Dimension(format!("superoperator must be {0}x{0}", n * n)));
        }
        Ok(Self { dims, mat })
    }

    pub fn identity(dims: Dims) -> Self {
        let n = dims.size();
        Self { dims, mat: eye(n * n) }
    }

    pub fn zero(dims: Dims) -> Self {
        let n = dims.size();
        Self { dims, mat: zeros(n * n, n * n) }
    }

    pub fn apply(&self, x: &CMat) -> CMat {
        let v = CVec::from_column_slice(x.as_slice());
        let n = x.nrows();
        CMat::from_column_slice(n, n, (&self.mat * v).as_slice())
    }

    /// self ∘ other
    pub fn compose(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator { dims: self.dims, mat: &self.mat * &other.mat }
    }

    pub fn add(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator { dims: self.dims, mat: &self.mat + &other.mat }
    }

    pub fn sub(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator { dims: self.dims, mat: &self.mat - &other.mat }
    }

    pub fn scale(&self, z: C64) -> SuperOperator {
        SuperOperator { dims: self.dims, mat: &self.mat * z }
    }

    pub fn commutator(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator { dims: self.dims, mat: &self.mat * &other.mat - &other.mat * &self.mat }
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.mat)
    }

    /// max |P^2 - P|
    pub fn idempotency_residual(&self) -> f64 {
        max_abs(&(&self.mat * &self.mat - &self.mat))
    }

    /// max_j |tr(M E_j)| over the matrix-unit basis.
    pub fn trace_annihilation_residual(&self) -> f64 {
        let n = self.dims.size();
        let mut worst: f64 = 0.0;
        for col in 0..n * n {
            let mut s = ZERO;
            for i in 0..n {
                s += self.mat[(i + i * n, col)];
            }
            worst = worst.max(s.norm());
        }
        worst
    }
}

/// Left multiplication X -> A X.
pub fn spre(a: &CMat) -> CMat {
    kron(&eye(a.nrows()), a)
}

/// Right multiplication X -> X A.
pub fn spost(a: &CMat) -> CMat {
    kron(&a.transpose(), &eye(a.nrows()))
}

/// Matrix of X -> -i[H, X], no Hermiticity check.
pub fn commutator_matrix(h: &CMat) -> CMat {
    (spre(h) - spost(h)) * (-I)
}

pub fn hamiltonian_liouvillian(h: &Operator) -> Result<SuperOperator> {
    h.verify_hermitian(TAU_HERM)?;
    SuperOperator::new(h.dims, commutator_matrix(&h.mat))
}

fn check_factor(a: &CMat, d: usize, what: &str) -> Result<()> {
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::Dimension(format!("{what} factor is {}x{}, expected {d}", a.nrows(), a.ncols())));
    }
    Ok(())
}

/// A ⊗ 1_B
pub fn lift_system(a: &CMat, dims: CompositeDims) -> Result<CMat> {
    check_factor(a, dims.d_s, "system")?;
    Ok(kron(a, &eye(dims.d_b)))
}

/// 1_S ⊗ B
pub fn lift_bath(b: &CMat, dims: CompositeDims) -> Result<CMat> {
    check_factor(b, dims.d_b, "bath")?;
    Ok(kron(&eye(dims.d_s), b))
}

/// Dilate a superoperator acting on system operators to S ⊗ id_B.
pub fn lift_superop_system(s: &CMat, dims: CompositeDims) -> Result<SuperOperator> {
    let (ds, db) = (dims.d_s, dims.d_b);
    check_factor(s, ds * ds, "system superoperator")?;
    let n = dims.total();
    let mut m = zeros(n * n, n * n);
    // Y[(s,b),(s',b')] = sum S[(s,s'),(r,r')] X[(r,b),(r',b')]
    for sp in 0..ds {
        for s0 in 0..ds {
            for rp in 0..ds {
                for r in 0..ds {
                    let z = s[(s0 + sp * ds, r + rp * ds)];
                    if z == ZERO {
                        continue;
                    }
                    for bp in 0..db {
                        for b in 0..db {
                            let row = (s0 * db + b) + (sp * db + bp) * n;
                            let col = (r * db + b) + (rp * db + bp) * n;
                            m[(row, col)] += z;
                        }
                    }
                }
            }
        }
    }
    SuperOperator::new(Dims::Composite(dims), m)
}

/// Dilate a superoperator acting on bath operators to id_S ⊗ S.
pub fn lift_superop_bath(s: &CMat, dims: CompositeDims) -> Result<SuperOperator> {
    let (ds, db) = (dims.d_s, dims.d_b);
    check_factor(s, db * db, "bath superoperator")?;
    let n = dims.total();
    let mut m = zeros(n * n, n * n);
    for bp in 0..db {
        for b in 0..db {
            for rp in 0..db {
                for r in 0..db {
                    let z = s[(b + bp * db, r + rp * db)];
                    if z == ZERO {
                        continue;
                    }
                    for sp in 0..ds {
                        for s0 in 0..ds {
                            let row = (s0 * db + b) + (sp * db + bp) * n;
                            let col = (s0 * db + r) + (sp * db + rp) * n;
                            m[(row, col)] += z;
                        }
                    }
                }
            }
        }
    }
    SuperOperator::new(Dims::Composite(dims), m)
}

/// tr_B on a raw matrix.
pub fn trace_out_bath(m: &CMat, dims: CompositeDims) -> CMat {
    let (ds, db) = (dims.d_s, dims.d_b);
    CMat::from_fn(ds, ds, |s, sp| (0..db).map(|b| m[(s * db + b, sp * db + b)]).sum())
}

/// tr_S on a raw matrix.
pub fn trace_out_system(m: &CMat, dims: CompositeDims) -> CMat {
    let (ds, db) = (dims.d_s, dims.d_b);
    CMat::from_fn(db, db, |b, bp| (0..ds).map(|s| m[(s * db + b, s * db + bp)]).sum())
}

pub fn partial_trace_bath(rho: &Operator) -> Result<Operator> {
    let dims = rho.composite_dims()?;
    Operator::plain(trace_out_bath(&rho.mat, dims))
}

/// Cached eigendecomposition of a Hermitian generator for exact propagation.
#[derive(Clone, Debug)]
pub struct UnitaryPropagator {
    pub energies: Vec<f64>,
    pub vecs: CMat,
}

impl UnitaryPropagator {
    pub fn new(h: &CMat) -> Result<Self> {
        let r = herm_residual(h);
        if r > TAU_HERM * (1.0 + max_abs(h)) {
            return Err(Error::NotHermitian(r));
        }
        let (energies, vecs) = eigh(h);
        Ok(Self { energies, vecs })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn spectral_width(&self) -> f64 {
        self.energies[self.dim() - 1] - self.energies[0]
    }

    pub fn to_eigenbasis(&self, rho: &CMat) -> CMat {
        self.vecs.adjoint() * rho * &self.vecs
    }

    pub fn from_eigenbasis(&self, r: &CMat) -> CMat {
        &self.vecs * r * self.vecs.adjoint()
    }

    /// Rotate an eigenbasis-represented operator by e^{-iHt}(.)e^{iHt}.
    pub fn phase_eigen(&self, r: &CMat, t: f64) -> CMat {
        let ph: Vec<C64> = self.energies.iter().map(|e| (-I * (e * t)).exp()).collect();
        CMat::from_fn(r.nrows(), r.ncols(), |i, j| ph[i] * r[(i, j)] * ph[j].conj())
    }

    pub fn evolve(&self, rho: &CMat, t: f64) -> CMat {
        self.from_eigenbasis(&self.phase_eigen(&self.to_eigenbasis(rho), t))
    }

    pub fn evolve_vector(&self, psi: &CVec, t: f64) -> CVec {
        let mut c = self.vecs.adjoint() * psi;
        for (k, e) in self.energies.iter().enumerate() {
            c[k] *= (-I * (e * t)).exp();
        }
        &self.vecs * c
    }
}

pub fn propagate_unitary(h: &Operator, rho: &Operator, t: f64) -> Result<Operator> {
    if h.dims.size() != rho.dims.size() {
        return Err(Error::Dimension("H and rho sizes differ".into()));
    }
    let p = UnitaryPropagator::new(&h.mat)?;
    Ok(Operator { dims: rho.dims, mat: p.evolve(&rho.mat, t), hint: rho.hint })
}

/// Mixed state stored as weighted pure states; exact unitary propagation costs
/// O(D^2) per component instead of O(D^3).
#[derive(Clone, Debug)]
pub struct PureEnsemble {
    pub weights: Vec<f64>,
    pub states: Vec<CVec>,
}

impl PureEnsemble {
    pub fn from_density(rho: &CMat, cutoff: f64) -> Self {
        let (vals, vecs) = eigh(rho);
        let mut weights = Vec::new();
        let mut states = Vec::new();
        for (k, &w) in vals.iter().enumerate() {
            if w > cutoff {
                weights.push(w);
                states.push(vecs.column(k).into_owned());
            }
        }
        Self { weights, states }
    }

    pub fn evolve(&self, p: &UnitaryPropagator, t: f64) -> Self {
        Self { weights: self.weights.clone(), states: self.states.iter().map(|s| p.evolve_vector(s, t)).collect() }
    }

    pub fn density(&self) -> CMat {
        let n = self.states[0].len();
        let mut m = zeros(n, n);
        for (w, s) in self.weights.iter().zip(&self.states) {
            m += outer(s, s) * c(*w);
        }
        m
    }

    pub fn reduced_system(&self, dims: CompositeDims) -> CMat {
        let (ds, db) = (dims.d_s, dims.d_b);
        let mut out = zeros(ds, ds);
        for (w, s) in self.weights.iter().zip(&self.states) {
            for a in 0..ds {
                for bb in 0..ds {
                    let mut z = ZERO;
                    for b in 0..db {
                        z += s[a * db + b] * s[bb * db + b].conj();
                    }
                    out[(a, bb)] += z * c(*w);
                }
            }
        }
        out
    }

    pub fn expect(&self, op: &CMat) -> C64 {
        self.weights.iter().zip(&self.states).map(|(w, s)| expect(op, s) * c(*w)).sum()
    }
}

/// e^{Mt} applied to rho by dense exponentiation, refused above the size cap.
pub fn apply_superop_exp(m: &SuperOperator, rho: &CMat, t: f64, cap: usize) -> Result<CMat> {
    let size = m.mat.nrows();
    if size > cap {
        return Err(Error::SizeCap { size, cap });
    }
    let e = expm(&(&m.mat * c(t)));
    Ok(SuperOperator { dims: m.dims, mat: e }.apply(rho))
}
