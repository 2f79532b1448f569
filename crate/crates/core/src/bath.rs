//! Finite bath surrogates, correlated initial states and the Gaussian-state
//! oracles (two-point functions, Wick contractions, sector overlaps).

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liouville::*;
use crate::linalg::*;

/// Default per-mode Fock cutoff.
pub const N_MAX_DEFAULT: usize = 12;
/// Largest tolerated probability mass outside a truncated Fock space.
pub const TAIL_GATE: f64 = 1e-6;
/// Mode count above which brute-force Fock routes are refused.
pub const FOCK_MODE_CAP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectralShape {
    Flat { strength: f64 },
    /// alpha * ω * exp(-ω / cutoff)
    Ohmic { alpha: f64, cutoff: f64 },
}

impl SpectralShape {
    pub fn density(&self, w: f64) -> f64 {
        match *self {
            SpectralShape::Flat { strength } => strength,
            SpectralShape::Ohmic { alpha, cutoff } => alpha * w * (-w / cutoff).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    /// Vacuum plus one quantum: d_B = N + 1, b_k -> |0><k|.
    SingleExcitation,
    /// Full product Fock space with a per-mode cutoff, small N only.
    Fock { n_max: usize },
}

/// Gibbs state of H at inverse temperature β; β = +inf gives the normalized
/// ground-space projector.
pub fn gibbs_state(h: &CMat, beta: f64) -> Result<CMat> {
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::Invalid(format!("inverse temperature must be >= 0, got {beta}")));
    }
    let (e, v) = eigh(h);
    let e0 = e[0];
    let w: Vec<f64> = if beta.is_infinite() {
        let tol = 1e-9 * (1.0 + e.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        e.iter().map(|&x| if x - e0 <= tol { 1.0 } else { 0.0 }).collect()
    } else {
        // shift by the ground energy so the exponent never overflows
        e.iter().map(|&x| (-beta * (x - e0)).exp()).collect()
    };
    let z: f64 = w.iter().sum();
    let d = real_diag(&w.iter().map(|x| x / z).collect::<Vec<_>>());
    Ok(&v * d * v.adjoint())
}

#[derive(Clone, Debug)]
pub struct BathModel {
    pub h_b: CMat,
    pub omega_b: CMat,
    /// Bath factors B_i of H_SB = Σ A_i ⊗ B_i, centred on Ω_B.
    pub couplings: Vec<CMat>,
    /// Mode frequencies and coupling weights g_k (empty for hand-built baths).
    pub modes: Vec<f64>,
    pub weights: Vec<f64>,
    pub dw: f64,
    pub bandwidth: f64,
    pub t_rec: f64,
    pub beta: f64,
    pub beta2: Option<f64>,
    pub sector: Option<Sector>,
    pub warnings: Vec<String>,
}

/// Typical level spacing: the median gap between distinct eigenvalues.
fn level_spacing(h: &CMat) -> f64 {
    let e = eigvalsh(h);
    let tol = 1e-9 * (1.0 + e.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let mut gaps: Vec<f64> = e.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > tol).collect();
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

impl BathModel {
    /// Generic constructor: checks Ω_B, centres every coupling on it and
    /// records the recurrence estimate from the spectrum of H_B.
    pub fn from_parts(h_b: CMat, omega_b: CMat, couplings: Vec<CMat>) -> Result<Self> {
        let d = h_b.nrows();
        if omega_b.nrows() != d || couplings.iter().any(|b| b.nrows() != d) {
            return Err(Error::Dimension("bath operators disagree in dimension".into()));
        }
        check_density(&omega_b)?;
        let couplings = couplings
            .into_iter()
            .map(|b| {
                let avg = trace_prod(&b, &omega_b);
                b - eye(d) * avg
            })
            .collect();
        let dw = level_spacing(&h_b);
        let t_rec = if dw > 0.0 { 2.0 * PI / dw } else { f64::INFINITY };
        let e = eigvalsh(&h_b);
        Ok(Self {
            h_b,
            omega_b,
            couplings,
            modes: vec![],
            weights: vec![],
            dw,
            bandwidth: e[d - 1] - e[0],
            t_rec,
            beta: f64::NAN,
            beta2: None,
            sector: None,
            warnings: vec![],
        })
    }

    pub fn dim(&self) -> usize {
        self.h_b.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Largest physical time at which "long-time" statements are evaluated.
    pub fn validity_window(&self) -> f64 {
        0.8 * self.t_rec
    }

    /// Same bath with a different reference state. Couplings are left as they
    /// are, so a mismatched reference is not silently repaired.
    pub fn with_reference(&self, omega: CMat) -> Result<Self> {
        check_density(&omega)?;
        let mut b = self.clone();
        b.omega_b = omega;
        Ok(b)
    }

    fn require_sector(&self) -> Result<()> {
        if self.sector != Some(Sector::SingleExcitation) {
            return Err(Error::Invalid("operation needs a single-excitation bath".into()));
        }
        Ok(())
    }

    /// One quantum localized at ring site j: N^{-1/2} Σ_k e^{-2πikj/N} |k>.
    pub fn site_state(&self, j: i64) -> Result<CVec> {
        self.require_sector()?;
        let n = self.n_modes();
        let mut v = CVec::zeros(n + 1);
        for k in 0..n {
            let ph = -2.0 * PI * (k as f64) * (j as f64) / n as f64;
            v[k + 1] = C64::from_polar(1.0 / (n as f64).sqrt(), ph);
        }
        Ok(v)
    }

    /// Gaussian wavepacket on the band: |c_k|^2 has mean at the band centre
    /// and standard deviation `sigma` in frequency; `site` shifts it on the ring.
    pub fn packet_state(&self, sigma: f64, site: i64) -> Result<CVec> {
        self.require_sector()?;
        if sigma <= 0.0 {
            return Err(Error::Invalid("packet width must be positive".into()));
        }
        let n = self.n_modes();
        let wc = 0.5 * (self.modes[0] + self.modes[n - 1]);
        let mut v = CVec::zeros(n + 1);
        for k in 0..n {
            let a = (-(self.modes[k] - wc).powi(2) / (4.0 * sigma * sigma)).exp();
            let ph = -2.0 * PI * (k as f64) * (site as f64) / n as f64;
            v[k + 1] = C64::from_polar(a, ph);
        }
        let nrm = v.norm();
        Ok(v / c(nrm))
    }

    /// Annihilator of the single-excitation mode φ: |0><φ|.
    pub fn mode_annihilator(&self, phi: &CVec) -> Result<CMat> {
        self.require_sector()?;
        let vac = CVec::from_fn(self.dim(), |i, _| if i == 0 { ONE } else { ZERO });
        Ok(outer(&vac, phi))
    }
}

/// N equally spaced levels across `band` with g_k = sqrt(J(ω_k) Δω).
pub fn build_quasicontinuum_bath(
    n: usize,
    band: (f64, f64),
    shape: SpectralShape,
    beta: f64,
    sector: Sector,
) -> Result<BathModel> {
    if n < 2 || band.1 <= band.0 {
        return Err(Error::Invalid(format!("need n >= 2 and a nonempty band, got {n}, {band:?}")));
    }
    let modes = linspace(band.0, band.1, n);
    let dw = modes[1] - modes[0];
    let weights: Vec<f64> = modes.iter().map(|&w| (shape.density(w) * dw).max(0.0).sqrt()).collect();
    let (h_b, b) = match sector {
        Sector::SingleExcitation => single_sector_ops(&modes, &weights),
        Sector::Fock { n_max } => {
            if n > FOCK_MODE_CAP {
                return Err(Error::Invalid(format!("full Fock bath refused above {FOCK_MODE_CAP} modes")));
            }
            product_fock_ops(&modes, &weights, n_max)
        }
    };
    let omega = gibbs_state(&h_b, beta)?;
    let mut bath = BathModel::from_parts(h_b, omega, vec![b])?;
    if n < 16 {
        bath.warnings.push(format!("only {n} modes; recurrence time {:.3}", bath.t_rec));
    }
    bath.modes = modes;
    bath.weights = weights;
    bath.bandwidth = band.1 - band.0;
    bath.beta = beta;
    bath.sector = Some(sector);
    Ok(bath)
}

fn single_sector_ops(modes: &[f64], weights: &[f64]) -> (CMat, CMat) {
    let n = modes.len();
    let mut e = vec![0.0];
    e.extend_from_slice(modes);
    let h = real_diag(&e);
    let mut b = zeros(n + 1, n + 1);
    for k in 0..n {
        b[(0, k + 1)] = c(weights[k]);
        b[(k + 1, 0)] = c(weights[k]);
    }
    (h, b)
}

fn product_fock_ops(modes: &[f64], weights: &[f64], n_max: usize) -> (CMat, CMat) {
    let m = n_max + 1;
    let a = CMat::from_fn(m, m, |i, j| if j == i + 1 { c((j as f64).sqrt()) } else { ZERO });
    let num = CMat::from_fn(m, m, |i, j| if i == j { c(i as f64) } else { ZERO });
    let nm = modes.len();
    let d = m.pow(nm as u32);
    let mut h = zeros(d, d);
    let mut b = zeros(d, d);
    for k in 0..nm {
        let embed = |op: &CMat| {
            let id = eye(m);
            let mut out = eye(1);
            for j in 0..nm {
                out = kron(&out, if j == k { op } else { &id });
            }
            out
        };
        h += embed(&num) * c(modes[k]);
        let ak = embed(&a);
        b += (&ak + ak.adjoint()) * c(weights[k]);
    }
    (h, b)
}

/// Two sub-baths in the single-excitation sector sharing one vacuum. The
/// reference is the product of the two Gibbs states restricted to at most one
/// quantum, which keeps it diagonal and stationary.
pub fn build_two_temperature_bath(
    n1: usize,
    beta: f64,
    band1: (f64, f64),
    n2: usize,
    beta2: f64,
    band2: (f64, f64),
    shape: SpectralShape,
) -> Result<BathModel> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::Invalid("each sub-bath needs at least two modes".into()));
    }
    let m1 = linspace(band1.0, band1.1, n1);
    let m2 = linspace(band2.0, band2.1, n2);
    let (dw1, dw2) = (m1[1] - m1[0], m2[1] - m2[0]);
    let mut modes = m1.clone();
    modes.extend(&m2);
    let mut weights: Vec<f64> = m1.iter().map(|&w| (shape.density(w) * dw1).sqrt()).collect();
    weights.extend(m2.iter().map(|&w| (shape.density(w) * dw2).sqrt()));
    let (h_b, b) = single_sector_ops(&modes, &weights);
    let mut p = vec![1.0];
    for &w in &m1 {
        p.push(boltzmann(beta, w));
    }
    for &w in &m2 {
        p.push(boltzmann(beta2, w));
    }
    let z: f64 = p.iter().sum();
    let omega = real_diag(&p.iter().map(|x| x / z).collect::<Vec<_>>());
    let mut bath = BathModel::from_parts(h_b, omega, vec![b])?;
    bath.modes = modes;
    bath.weights = weights;
    bath.dw = dw1.min(dw2);
    bath.t_rec = 2.0 * PI / bath.dw;
    bath.beta = beta;
    bath.beta2 = Some(beta2);
    bath.sector = Some(Sector::SingleExcitation);
    Ok(bath)
}

fn boltzmann(beta: f64, w: f64) -> f64 {
    if beta.is_infinite() {
        0.0
    } else {
        (-beta * w).exp()
    }
}

#[derive(Clone, Debug)]
pub struct CorrelatedState {
    pub rho0: CMat,
    pub rho_s: CMat,
    pub rho_b: CMat,
    pub delta: CMat,
    /// ‖ρ_0 - ρ_S ⊗ ρ_B‖_tr
    pub delta_tr: f64,
    /// ‖ρ_0 - tr_B ρ_0 ⊗ Ω_B‖_tr
    pub q_tr: f64,
}

/// ρ_0 ∝ Σ_i L_i (1 ⊗ Ω_B) L_i^†, with its product/correlation split.
pub fn correlated_initial_state(factors: &[CMat], omega_b: &CMat, dims: CompositeDims) -> Result<CorrelatedState> {
    let n = dims.total();
    if factors.is_empty() || factors.iter().any(|l| l.nrows() != n || l.ncols() != n) {
        return Err(Error::Dimension(format!("factors must be {n}x{n}")));
    }
    let base = kron(&eye(dims.d_s), omega_b);
    let mut rho = zeros(n, n);
    for l in factors {
        rho += l * &base * l.adjoint();
    }
    let tr = rho.trace();
    if tr.norm() < 1e-14 {
        return Err(Error::NotDensity("factors produce a zero-trace state".into()));
    }
    let rho0 = hermitize(&(rho / tr));
    let min = eigvalsh(&rho0)[0];
    if min < -TAU_POS {
        return Err(Error::NotDensity(format!("minimum eigenvalue {min:.3e}")));
    }
    let rho_s = trace_out_bath(&rho0, dims);
    let rho_b = trace_out_system(&rho0, dims);
    let delta = &rho0 - kron(&rho_s, &rho_b);
    let delta_tr = trace_norm_herm(&delta);
    let q_tr = trace_norm_herm(&(&rho0 - kron(&rho_s, omega_b)));
    Ok(CorrelatedState { rho0, rho_s, rho_b, delta, delta_tr, q_tr })
}

/// L = U (sqrt(σ) ⊗ 1) with U = exp(-iθ(σ_+ ⊗ b + σ_- ⊗ b^†)) for a qubit,
/// σ_+ = |1><0|. Feeding it to `correlated_initial_state` gives U(σ⊗Ω)U^†.
pub fn exchange_factor(sigma: &CMat, b: &CMat, theta: f64) -> Result<CMat> {
    if sigma.nrows() != 2 {
        return Err(Error::Dimension("exchange factor is defined for a qubit".into()));
    }
    check_density(sigma)?;
    let mut sp = zeros(2, 2);
    sp[(1, 0)] = ONE;
    let g = kron(&sp, b);
    let gen = &g + g.adjoint();
    let u = expm(&(gen * (-I * theta)));
    Ok(u * kron(&sqrtm_psd(sigma), &eye(b.nrows())))
}

// ---------------------------------------------------------------------------
// Truncated Fock spaces for the Gaussian-state oracles.

/// Occupation basis with total quanta <= n_max, grouped by total number so
/// that number-conserving operators are block diagonal.
#[derive(Clone, Debug)]
pub struct FockSpace {
    pub n_modes: usize,
    pub n_max: usize,
    /// blocks[n] lists the occupation vectors with n quanta
    pub blocks: Vec<Vec<Vec<usize>>>,
    index: Vec<HashMap<Vec<usize>, usize>>,
}

fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in compositions(total - first, parts - 1) {
            let mut v = vec![first];
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

/// A number-conserving operator stored block by block.
pub type BlockOp = Vec<CMat>;

impl FockSpace {
    pub fn new(n_modes: usize, n_max: usize) -> Result<Self> {
        if n_modes == 0 || n_modes > FOCK_MODE_CAP {
            return Err(Error::Invalid(format!("Fock route limited to 1..={FOCK_MODE_CAP} modes")));
        }
        let blocks: Vec<Vec<Vec<usize>>> = (0..=n_max).map(|n| compositions(n, n_modes)).collect();
        let index = blocks.iter().map(|b| b.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()).collect();
        Ok(Self { n_modes, n_max, blocks, index })
    }

    pub fn block_dim(&self, n: usize) -> usize {
        self.blocks[n].len()
    }

    /// Σ M_{kk'} b_k^† b_k' in every block.
    pub fn quadratic(&self, m: &CMat) -> BlockOp {
        (0..=self.n_max)
            .map(|n| {
                let dim = self.block_dim(n);
                let mut out = zeros(dim, dim);
                for (col, s) in self.blocks[n].iter().enumerate() {
                    for kp in 0..self.n_modes {
                        if s[kp] == 0 {
                            continue;
                        }
                        let mut t = s.clone();
                        t[kp] -= 1;
                        let a1 = (s[kp] as f64).sqrt();
                        for k in 0..self.n_modes {
                            let z = m[(k, kp)];
                            if z == ZERO {
                                continue;
                            }
                            let mut u = t.clone();
                            u[k] += 1;
                            let a2 = (u[k] as f64).sqrt();
                            let row = self.index[n][&u];
                            out[(row, col)] += z * c(a1 * a2);
                        }
                    }
                }
                out
            })
            .collect()
    }

    /// b_k^† as a map from block n-1 to block n (n >= 1).
    pub fn creation(&self, k: usize, n: usize) -> CMat {
        let mut out = zeros(self.block_dim(n), self.block_dim(n - 1));
        for (col, s) in self.blocks[n - 1].iter().enumerate() {
            let mut u = s.clone();
            u[k] += 1;
            let row = self.index[n][&u];
            out[(row, col)] = c((u[k] as f64).sqrt());
        }
        out
    }

    /// Σ_k ω_k n_k on every basis state.
    pub fn energies(&self, modes: &[f64]) -> Vec<Vec<f64>> {
        self.blocks
            .iter()
            .map(|b| b.iter().map(|s| s.iter().zip(modes).map(|(n, w)| *n as f64 * w).sum()).collect())
            .collect()
    }
}

pub fn block_trace(a: &BlockOp) -> C64 {
    a.iter().map(|m| m.trace()).sum()
}

pub fn block_mul(a: &BlockOp, b: &BlockOp) -> BlockOp {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Probability that a Gaussian state with mode energies `eps` (eigenvalues
/// of its quadratic form) holds more than n_max quanta in total.
pub fn gaussian_tail_mass(eps: &[f64], n_max: usize) -> f64 {
    let mut p = vec![0.0; n_max + 1];
    p[0] = 1.0;
    for &e in eps {
        let x = (-e).exp();
        let mut q = vec![0.0; n_max + 1];
        for n in 0..=n_max {
            let mut acc = 0.0;
            let mut xp = 1.0;
            for j in 0..=n {
                acc += p[n - j] * xp;
                xp *= x;
            }
            q[n] = acc * (1.0 - x);
        }
        p = q;
    }
    (1.0 - p.iter().sum::<f64>()).max(0.0)
}

#[derive(Clone, Debug)]
pub struct GaussianBathSpec {
    pub modes: Vec<f64>,
    /// W(ω_k)
    pub w_diag: Vec<f64>,
    /// off-diagonal perturbation W̃ (Hermitian)
    pub w_tilde: CMat,
    pub n_max: usize,
}

impl GaussianBathSpec {
    pub fn thermal(modes: &[f64], beta: f64, n_max: usize) -> Self {
        let n = modes.len();
        Self { modes: modes.to_vec(), w_diag: modes.iter().map(|w| beta * w).collect(), w_tilde: zeros(n, n), n_max }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.modes.len();
        if self.w_diag.len() != n || self.w_tilde.nrows() != n || self.w_tilde.ncols() != n {
            return Err(Error::Dimension("Gaussian spec arrays disagree".into()));
        }
        if self.w_diag.iter().any(|&w| w <= 0.0) {
            return Err(Error::Invalid("W(ω) must be positive".into()));
        }
        let r = herm_residual(&self.w_tilde);
        if r > TAU_HERM {
            return Err(Error::NotHermitian(r));
        }
        if eigvalsh(&self.w_matrix())[0] <= 0.0 {
            return Err(Error::Invalid("W is not positive definite".into()));
        }
        Ok(())
    }

    pub fn w_matrix(&self) -> CMat {
        real_diag(&self.w_diag) + &self.w_tilde
    }

    /// N(ω_k) = 1/(e^{W(ω_k)} - 1)
    pub fn occupations(&self) -> Vec<f64> {
        self.w_diag.iter().map(|w| 1.0 / w.exp_m1()).collect()
    }

    pub fn tail_mass(&self) -> f64 {
        gaussian_tail_mass(&eigvalsh(&self.w_matrix()), self.n_max)
    }

    fn check_tail(&self) -> Result<()> {
        let t = self.tail_mass();
        if t > TAIL_GATE {
            return Err(Error::Cutoff(t));
        }
        Ok(())
    }

    /// ρ_W = exp(-b^† W b)/Z on the truncated space, block by block.
    pub fn fock_state(&self, space: &FockSpace) -> BlockOp {
        let q = space.quadratic(&self.w_matrix());
        let mut blocks: BlockOp = q.iter().map(|m| herm_fn(m, |x| (-x).exp())).collect();
        let z = block_trace(&blocks);
        for b in &mut blocks {
            *b /= z;
        }
        blocks
    }
}

fn bose(x: f64) -> f64 {
    1.0 / x.exp_m1()
}

/// Two-point function 𝒩_{kk'} = <b_k'^† b_k> by exact trace on the
/// truncated Fock space.
pub fn two_point_function(spec: &GaussianBathSpec) -> Result<CMat> {
    spec.validate()?;
    spec.check_tail()?;
    let n = spec.modes.len();
    let space = FockSpace::new(n, spec.n_max)?;
    let rho = spec.fock_state(&space);
    let mut out = zeros(n, n);
    for k in 0..n {
        for kp in 0..n {
            let mut m = zeros(n, n);
            m[(kp, k)] = ONE;
            out[(k, kp)] = block_trace(&block_mul(&space.quadratic(&m), &rho));
        }
    }
    Ok(out)
}

/// Closed form of the same quantity: 𝒩 = (e^W - 1)^{-1}.
pub fn two_point_analytic(spec: &GaussianBathSpec) -> Result<CMat> {
    spec.validate()?;
    Ok(herm_fn(&spec.w_matrix(), bose))
}

/// First order in W̃: 𝒩̃_{kk'} ≈ W̃_{kk'} (f(W_k) - f(W_k'))/(W_k - W_k').
pub fn two_point_first_order(spec: &GaussianBathSpec) -> CMat {
    let n = spec.modes.len();
    let w = &spec.w_diag;
    CMat::from_fn(n, n, |a, b| {
        let dd = if (w[a] - w[b]).abs() < 1e-9 {
            let e = w[a].exp();
            -e / (e - 1.0).powi(2)
        } else {
            (bose(w[a]) - bose(w[b])) / (w[a] - w[b])
        };
        let base = if a == b { bose(w[a]) } else { 0.0 };
        c(base) + spec.w_tilde[(a, b)] * c(dd)
    })
}

/// One bilinear Σ M[c][a] b_c^† b_a inside an operator string, with the
/// positions of its creator and annihilator.
struct Bilinear<'a> {
    m: &'a CMat,
    pos_c: usize,
    pos_a: usize,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Wick expansion of the ordered product of bilinears in a number-conserving
/// Gaussian state with two-point function 𝒩_{kk'} = <b_k'^† b_k>.
fn wick_chain(blocks: &[Bilinear], nmat: &CMat) -> C64 {
    let n = nmat.nrows();
    let id = eye(n);
    let mut total = ZERO;
    for perm in permutations(blocks.len()) {
        // annihilator of block k contracts with the creator of block perm[k]
        let mut seen = vec![false; blocks.len()];
        let mut value = ONE;
        for start in 0..blocks.len() {
            if seen[start] {
                continue;
            }
            let mut prod = eye(n);
            let mut k = start;
            loop {
                seen[k] = true;
                let j = perm[k];
                let gamma = if blocks[k].pos_a < blocks[j].pos_c { nmat + &id } else { nmat.clone() };
                prod = prod * gamma * blocks[j].m;
                k = j;
                if k == start {
                    break;
                }
            }
            value *= prod.trace();
        }
        total += value;
    }
    total
}

#[derive(Clone, Debug)]
pub struct MixingTrace {
    pub t: Vec<f64>,
    pub wick: Vec<C64>,
    pub fock: Option<Vec<C64>>,
    /// <X>_{ρ_W0} <Y>_{ρ_B}
    pub limit: C64,
}

fn evolved_bilinear(x: &CMat, modes: &[f64], t: f64) -> CMat {
    CMat::from_fn(x.nrows(), x.ncols(), |a, b| x[(a, b)] * (I * ((modes[a] - modes[b]) * t)).exp())
}

/// <X(t) Y> in ρ_B ∝ Σ w_{kk'} b_k^† ρ_W b_k', X and Y quadratic. The Wick
/// route always runs; the Fock-trace route runs for at most four modes.
pub fn mixing_correlation_gaussian(
    spec: &GaussianBathSpec,
    x: &CMat,
    y: &CMat,
    w: &CMat,
    t_grid: &[f64],
) -> Result<MixingTrace> {
    spec.validate()?;
    let n = spec.modes.len();
    if [x, y, w].iter().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::Dimension("mode matrices must match the grid".into()));
    }
    let nmat = two_point_analytic(spec)?;
    let b0 = |m| Bilinear { m, pos_c: 99, pos_a: 0 };
    let norm = wick_chain(&[b0(w)], &nmat);
    let mut wick = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let xt = evolved_bilinear(x, &spec.modes, t);
        let v = wick_chain(
            &[b0(w), Bilinear { m: &xt, pos_c: 1, pos_a: 2 }, Bilinear { m: y, pos_c: 3, pos_a: 4 }],
            &nmat,
        );
        wick.push(v / norm);
    }
    let n0: Vec<f64> = spec.occupations();
    let x0: C64 = (0..n).map(|k| x[(k, k)] * c(n0[k])).sum();
    let y_b = wick_chain(&[b0(w), Bilinear { m: y, pos_c: 1, pos_a: 2 }], &nmat) / norm;
    let fock = if n <= FOCK_MODE_CAP { Some(mixing_fock(spec, x, y, w, t_grid)?) } else { None };
    Ok(MixingTrace { t: t_grid.to_vec(), wick, fock, limit: x0 * y_b })
}

fn mixing_fock(spec: &GaussianBathSpec, x: &CMat, y: &CMat, w: &CMat, t_grid: &[f64]) -> Result<Vec<C64>> {
    spec.check_tail()?;
    let n = spec.modes.len();
    let space = FockSpace::new(n, spec.n_max)?;
    let rho_w = spec.fock_state(&space);
    let mut rho_b: BlockOp = (0..=space.n_max).map(|b| zeros(space.block_dim(b), space.block_dim(b))).collect();
    for nb in 1..=space.n_max {
        let cr: Vec<CMat> = (0..n).map(|k| space.creation(k, nb)).collect();
        for k in 0..n {
            for kp in 0..n {
                let z = w[(k, kp)];
                if z == ZERO {
                    continue;
                }
                rho_b[nb] += &cr[k] * &rho_w[nb - 1] * cr[kp].adjoint() * z;
            }
        }
    }
    let z = block_trace(&rho_b);
    let xq = space.quadratic(x);
    let yq = space.quadratic(y);
    let en = space.energies(&spec.modes);
    let yr = block_mul(&yq, &rho_b);
    Ok(t_grid
        .iter()
        .map(|&t| {
            let mut s = ZERO;
            for nb in 0..=space.n_max {
                let e = &en[nb];
                let xt = CMat::from_fn(e.len(), e.len(), |i, j| xq[nb][(i, j)] * (I * ((e[i] - e[j]) * t)).exp());
                s += trace_prod(&xt, &yr[nb]);
            }
            s / z
        })
        .collect())
}

fn overlap_checks(beta: f64, beta2: f64) -> Result<()> {
    if !(beta > 0.0 && beta2 > 0.0) || beta.is_infinite() || beta2.is_infinite() {
        return Err(Error::Invalid(format!("inverse temperatures must be finite and positive: {beta}, {beta2}")));
    }
    Ok(())
}

/// tr{Ω_β^{1/2} Ω_β'^{1/2}} for free bosons on the given dispersion.
pub fn sector_overlap(beta: f64, beta2: f64, modes: &[f64]) -> Result<f64> {
    overlap_checks(beta, beta2)?;
    let bb = 0.5 * (beta + beta2);
    let expo: f64 = modes
        .iter()
        .map(|&w| {
            let num = 2.0 * (-(-bb * w).exp_m1()).ln();
            let den = (-(-beta * w).exp_m1()).ln() + (-(-beta2 * w).exp_m1()).ln();
            num - den
        })
        .sum();
    Ok((-0.5 * expo).exp())
}

/// Quadratic bath operator c0·1 + Σ l_{kk'} b_k^† b_k'.
#[derive(Clone, Debug)]
pub struct QuadraticOp {
    pub c0: f64,
    pub l: CMat,
}

/// Product formula times <L_B>_{β̄}.
pub fn perturbed_sector_overlap(beta: f64, beta2: f64, lb: &QuadraticOp, modes: &[f64]) -> Result<f64> {
    let base = sector_overlap(beta, beta2, modes)?;
    if lb.l.nrows() != modes.len() {
        return Err(Error::Dimension("L_B does not match the mode grid".into()));
    }
    let bb = 0.5 * (beta + beta2);
    let avg: f64 = lb.c0 + modes.iter().enumerate().map(|(k, &w)| lb.l[(k, k)].re * bose(bb * w)).sum::<f64>();
    Ok(base * avg)
}

/// Brute-force tr{L_B Ω_β^{1/2} Ω_β'^{1/2}} on a truncated Fock space.
pub fn sector_overlap_fock(beta: f64, beta2: f64, lb: Option<&QuadraticOp>, modes: &[f64], n_max: usize) -> Result<f64> {
    overlap_checks(beta, beta2)?;
    let space = FockSpace::new(modes.len(), n_max)?;
    let en = space.energies(modes);
    let sqrt_state = |b: f64| -> Vec<Vec<f64>> {
        let w: Vec<Vec<f64>> = en.iter().map(|e| e.iter().map(|x| (-b * x).exp()).collect()).collect();
        let z: f64 = w.iter().flatten().sum();
        w.into_iter().map(|v| v.into_iter().map(|x| (x / z).sqrt()).collect()).collect()
    };
    let (s1, s2) = (sqrt_state(beta), sqrt_state(beta2));
    let lq = lb.map(|q| space.quadratic(&q.l));
    let mut total = 0.0;
    for nb in 0..=space.n_max {
        for i in 0..space.block_dim(nb) {
            let diag = match (&lq, lb) {
                (Some(m), Some(q)) => q.c0 + m[nb][(i, i)].re,
                _ => 1.0,
            };
            total += diag * s1[nb][i] * s2[nb][i];
        }
    }
    Ok(total)
}

/// Per-mode occupation moments <n>, <n^2> of a thermal mode truncated at n_max.
fn truncated_moments(x: f64, n_max: usize) -> (f64, f64, f64) {
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    let mut p = 1.0;
    for n in 0..=n_max {
        let nf = n as f64;
        z += p;
        m1 += nf * p;
        m2 += nf * nf * p;
        p *= x;
    }
    (m1 / z, m2 / z, x.powi(n_max as i32 + 1))
}

/// Returns (tr{Y P_D Ω̃_β}, <Y>_β tr Ω̃_β) for Ω̃_β = Σ w_{kk'} b_k^† Ω_β b_k'.
/// Only diagonal elements of Y and w enter the projected expectation.
pub fn diagonal_projection_demo(beta: f64, w: &CMat, y: &CMat, modes: &[f64], n_max: usize) -> Result<(f64, f64)> {
    let n = modes.len();
    if w.nrows() != n || y.nrows() != n {
        return Err(Error::Dimension("w and Y must match the mode grid".into()));
    }
    if !(beta > 0.0) || beta.is_infinite() {
        return Err(Error::Invalid(format!("beta must be finite and positive, got {beta}")));
    }
    let mut m1 = Vec::with_capacity(n);
    let mut m2 = Vec::with_capacity(n);
    let mut tail: f64 = 0.0;
    for &wk in modes {
        let (a, b, t) = truncated_moments((-beta * wk).exp(), n_max);
        m1.push(a);
        m2.push(b);
        tail = tail.max(t);
    }
    if tail > TAIL_GATE {
        return Err(Error::Cutoff(tail));
    }
    let yd: Vec<f64> = (0..n).map(|k| y[(k, k)].re).collect();
    let ld: Vec<f64> = (0..n).map(|k| w[(k, k)].re * (beta * modes[k]).exp()).collect();
    let mut exact = 0.0;
    for k in 0..n {
        for kp in 0..n {
            exact += yd[k] * ld[kp] * if k == kp { m2[k] } else { m1[k] * m1[kp] };
        }
    }
    let y_avg: f64 = (0..n).map(|k| yd[k] * m1[k]).sum();
    let l_avg: f64 = (0..n).map(|k| ld[k] * m1[k]).sum();
    Ok((exact, y_avg * l_avg))
}
