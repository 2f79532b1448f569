//! Bohr decomposition of the system Liouvillian, the stationary-reference
//! projection, the bath-diagonal projection and its time-average form.

use crate::bath::BathModel;
use crate::error::{Error, Result};
use crate::liouville::*;
use crate::linalg::*;

/// Relative clustering tolerance applied to ‖H_S‖.
pub const MERGE_REL: f64 = 1e-9;
/// Relative stationarity tolerance applied to ‖H_B‖.
pub const STAT_REL: f64 = 1e-10;

/// Single-linkage clustering of sorted values. Returns cluster means, member
/// lists and warnings for gaps that sit just above the tolerance.
fn cluster(values: &[f64], tol: f64) -> (Vec<f64>, Vec<Vec<usize>>, Vec<String>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut warnings = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        if k > 0 {
            let gap = values[i] - values[idx[k - 1]];
            if gap <= tol {
                groups.last_mut().unwrap().push(i);
                continue;
            }
            if gap <= 10.0 * tol {
                warnings.push(format!("ill-conditioned clustering: gap {gap:.3e} with tolerance {tol:.3e}"));
            }
        }
        groups.push(vec![i]);
    }
    let means = groups.iter().map(|g| g.iter().map(|&i| values[i]).sum::<f64>() / g.len() as f64).collect();
    (means, groups, warnings)
}

fn spectral_projectors(h: &CMat, tol: f64) -> (Vec<f64>, Vec<CMat>, Vec<String>) {
    let (vals, vecs) = eigh(h);
    let (means, groups, warnings) = cluster(&vals, tol);
    let n = h.nrows();
    let projs = groups
        .iter()
        .map(|g| {
            let mut p = zeros(n, n);
            for &k in g {
                let v = vecs.column(k).into_owned();
                p += outer(&v, &v);
            }
            p
        })
        .collect();
    (means, projs, warnings)
}

#[derive(Clone, Debug)]
pub struct BohrEntry {
    pub omega: f64,
    /// (i, j) with E_i - E_j = omega
    pub pairs: Vec<(usize, usize)>,
    pub superop: SuperOperator,
}

#[derive(Clone, Debug)]
pub struct BohrDecomposition {
    pub energies: Vec<f64>,
    pub projectors: Vec<CMat>,
    pub entries: Vec<BohrEntry>,
    pub merge_tol: f64,
    pub warnings: Vec<String>,
}

pub fn default_merge_tol(h_s: &CMat) -> f64 {
    MERGE_REL * op_norm(h_s)
}

pub fn bohr_decomposition(h_s: &CMat, merge_tol: Option<f64>) -> Result<BohrDecomposition> {
    let r = herm_residual(h_s);
    if r > TAU_HERM * (1.0 + max_abs(h_s)) {
        return Err(Error::NotHermitian(r));
    }
    let tol = merge_tol.unwrap_or_else(|| default_merge_tol(h_s));
    let (energies, projectors, mut warnings) = spectral_projectors(h_s, tol);
    let k = energies.len();
    let mut diffs = Vec::with_capacity(k * k);
    let mut pairs = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            diffs.push(energies[i] - energies[j]);
            pairs.push((i, j));
        }
    }
    let (freqs, groups, w2) = cluster(&diffs, tol);
    warnings.extend(w2);
    let d = h_s.nrows();
    let entries = freqs
        .into_iter()
        .zip(groups)
        .map(|(omega, g)| {
            let pairs: Vec<(usize, usize)> = g.iter().map(|&q| pairs[q]).collect();
            let mut m = zeros(d * d, d * d);
            for &(i, j) in &pairs {
                // X -> Q_i X Q_j  is  Q_j^T ⊗ Q_i
                m += kron(&projectors[j].transpose(), &projectors[i]);
            }
            BohrEntry { omega, pairs, superop: SuperOperator { dims: Dims::Plain(d), mat: m } }
        })
        .collect();
    Ok(BohrDecomposition { energies, projectors, entries, merge_tol: tol, warnings })
}

impl BohrDecomposition {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.omega).collect()
    }

    pub fn index_of(&self, omega: f64) -> Option<usize> {
        self.entries.iter().position(|e| (e.omega - omega).abs() <= self.merge_tol.max(1e-12))
    }

    /// Q̃_m X = Σ Q_i X Q_j over the pairs of entry m.
    pub fn apply(&self, m: usize, x: &CMat) -> CMat {
        let mut out = zeros(x.nrows(), x.ncols());
        for &(i, j) in &self.entries[m].pairs {
            out += &self.projectors[i] * x * &self.projectors[j];
        }
        out
    }

    pub fn completeness_residual(&self) -> f64 {
        let n = self.entries[0].superop.mat.nrows();
        let mut s = zeros(n, n);
        for e in &self.entries {
            s += &e.superop.mat;
        }
        max_abs(&(s - eye(n)))
    }

    pub fn orthogonality_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, ea) in self.entries.iter().enumerate() {
            for (b, eb) in self.entries.iter().enumerate() {
                let prod = &ea.superop.mat * &eb.superop.mat;
                let r = if a == b { max_abs(&(prod - &ea.superop.mat)) } else { max_abs(&prod) };
                worst = worst.max(r);
            }
        }
        worst
    }

    /// max |L_S + i Σ ω_m Q̃_m|
    pub fn reconstruction_residual(&self, h_s: &CMat) -> f64 {
        let mut l = commutator_matrix(h_s);
        for e in &self.entries {
            l += &e.superop.mat * (I * e.omega);
        }
        max_abs(&l)
    }
}

#[derive(Clone, Debug)]
pub struct BathEigenstructure {
    pub energies: Vec<f64>,
    pub projectors: Vec<CMat>,
    pub tol: f64,
}

impl BathEigenstructure {
    pub fn new(h_b: &CMat, tol: Option<f64>) -> Result<Self> {
        let r = herm_residual(h_b);
        if r > TAU_HERM * (1.0 + max_abs(h_b)) {
            return Err(Error::NotHermitian(r));
        }
        let tol = tol.unwrap_or_else(|| MERGE_REL * op_norm(h_b));
        let (energies, projectors, _) = spectral_projectors(h_b, tol);
        Ok(Self { energies, projectors, tol })
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].nrows()
    }
}

/// max |[H_B, Ω_B]| against the stationarity tolerance.
pub fn stationarity_residual(h_b: &CMat, omega_b: &CMat) -> f64 {
    max_abs(&comm(h_b, omega_b))
}

pub fn stationarity_tol(h_b: &CMat) -> f64 {
    STAT_REL * op_norm(h_b)
}

/// X -> tr_B(X) ⊗ Ω_B on raw matrices.
pub fn project_reference(x: &CMat, omega_b: &CMat, dims: CompositeDims) -> CMat {
    kron(&trace_out_bath(x, dims), omega_b)
}

/// The superoperator ρ ↦ tr_B(ρ) ⊗ Ω_B. Refuses a non-stationary Ω_B unless
/// explicitly allowed.
pub fn zero_eigenprojection(
    omega_b: &CMat,
    h_b: &CMat,
    dims: CompositeDims,
    allow_nonstationary: bool,
) -> Result<SuperOperator> {
    if omega_b.nrows() != dims.d_b || h_b.nrows() != dims.d_b {
        return Err(Error::Dimension("reference state or H_B does not match d_B".into()));
    }
    check_density(omega_b)?;
    let r = stationarity_residual(h_b, omega_b);
    if r > stationarity_tol(h_b) && !allow_nonstationary {
        return Err(Error::NonStationary(r));
    }
    let db = dims.d_b;
    let vo = CVec::from_column_slice(omega_b.as_slice());
    let vi = CVec::from_column_slice(eye(db).as_slice());
    let p_b = &vo * vi.transpose();
    lift_superop_bath(&p_b, dims)
}

/// Σ_μ (1 ⊗ P_μ) ρ (1 ⊗ P_μ) with d_S = `d_s` (d_S = 1 allowed).
pub fn diagonal_projection(rho: &CMat, bath: &BathEigenstructure, d_s: usize) -> Result<CMat> {
    let db = bath.dim();
    if rho.nrows() != d_s * db || !rho.is_square() {
        return Err(Error::Dimension(format!("rho is {}x{}, expected {}", rho.nrows(), rho.ncols(), d_s * db)));
    }
    let id = eye(d_s);
    let mut out = zeros(rho.nrows(), rho.ncols());
    for p in &bath.projectors {
        let lp = kron(&id, p);
        out += &lp * rho * &lp;
    }
    Ok(out)
}

/// (1/T) ∫_0^T e^{L t} ρ dt by the uniform trapezoid rule on `n_samples`
/// intervals.
pub fn cesaro_average(l: &SuperOperator, rho: &CMat, horizon: f64, n_samples: usize) -> Result<CMat> {
    if horizon <= 0.0 {
        return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    if n_samples < 64 {
        return Err(Error::Invalid(format!("need at least 64 samples, got {n_samples}")));
    }
    let size = l.mat.nrows();
    if size > DENSE_CAP {
        return Err(Error::SizeCap { size, cap: DENSE_CAP });
    }
    let h = horizon / n_samples as f64;
    let step = expm(&(&l.mat * c(h)));
    let mut v = CVec::from_column_slice(rho.as_slice());
    let mut acc = &v * c(0.5);
    for k in 1..=n_samples {
        v = &step * v;
        let w = if k == n_samples { 0.5 } else { 1.0 };
        acc += &v * c(w);
    }
    acc *= c(h / horizon);
    Ok(CMat::from_column_slice(rho.nrows(), rho.ncols(), acc.as_slice()))
}

/// C(t) = tr{X e^{L_B t}(Y Ω_B)} - tr{X Ω_B} tr{Y Ω_B}.
pub fn check_mixing_proxy(bath: &BathModel, x: &CMat, y: &CMat, t_grid: &[f64]) -> Result<Vec<C64>> {
    let prop = UnitaryPropagator::new(&bath.h_b)?;
    let om = &bath.omega_b;
    let xe = prop.to_eigenbasis(x);
    let ze = prop.to_eigenbasis(&(y * om));
    let base = trace_prod(x, om) * trace_prod(y, om);
    let e = &prop.energies;
    let n = e.len();
    Ok(t_grid
        .iter()
        .map(|&t| {
            let ph: Vec<C64> = e.iter().map(|&ek| (-I * (ek * t)).exp()).collect();
            let mut s = ZERO;
            for i in 0..n {
                for j in 0..n {
                    s += xe[(j, i)] * ze[(i, j)] * ph[i] * ph[j].conj();
                }
            }
            s - base
        })
        .collect())
}
