//! The limiting Markovian generator, its master equation, and the exact
//! scaled reduced dynamics it is compared against.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::liouville::*;
use crate::linalg::*;
use crate::model::OpenModel;
use crate::projection::*;

/// Methods disagreeing by more than this (relative) mark a bath as too coarse.
pub const TOL_EQUIV: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DaviesMethod {
    /// finite-time integral up to `t_int`
    TimeIntegral { t_int: f64 },
    /// resolvent with -0+ replaced by -η
    Resolvent { eta: f64 },
}

#[derive(Clone, Debug)]
pub struct DaviesGenerator {
    /// d_S^2 x d_S^2 on column-stacked system operators
    pub k: CMat,
    pub method: DaviesMethod,
    /// K_mm, one per Bohr frequency
    pub blocks: Vec<CMat>,
    pub warnings: Vec<String>,
}

/// K = Σ_m P Q̃_m L_SB [surrogate of -Q/(L_0 + iω_m - 0+)] L_SB Q̃_m P on the
/// P-range. In the eigenbasis of H_0 the resolvent is elementwise.
pub fn davies_generator(model: &OpenModel, split: &NZSplit, method: DaviesMethod) -> Result<DaviesGenerator> {
    if !split.reference_is_zero_eigenprojection {
        return Err(Error::NonStationary(split.stationarity_residual));
    }
    let cc = check_coupling_condition(model, split);
    if cc > 1e-10 {
        return Err(Error::Coupling(cc));
    }
    match method {
        DaviesMethod::TimeIntegral { t_int } => {
            if !(t_int > 0.0) {
                return Err(Error::Invalid("t_int must be positive".into()));
            }
            model.check_window(t_int)?;
        }
        DaviesMethod::Resolvent { eta } => {
            if !(eta >= 1e-3 * model.bath.dw) {
                return Err(Error::Singular(format!("eta {eta:.3e} below 1e-3 of the level spacing")));
            }
        }
    }
    let engine = QEngine::new(model, split, 0.0)?;
    let e = model.frame.energies();
    let ds = model.dims.d_s;
    let n = e.len();
    let mut blocks = Vec::with_capacity(engine.freqs.len());
    for (m, &w) in engine.freqs.iter().enumerate() {
        let factor = CMat::from_fn(n, n, |a, b| {
            let z = C64::new(0.0, w - (e[a] - e[b]));
            match method {
                DaviesMethod::Resolvent { eta } => -ONE / (z - eta),
                DaviesMethod::TimeIntegral { t_int } => {
                    if z.norm() * t_int < 1e-8 {
                        c(t_int) + z * c(0.5 * t_int * t_int)
                    } else {
                        ((z * t_int).exp() - ONE) / z
                    }
                }
            }
        });
        let mut k = zeros(ds * ds, ds * ds);
        for col in 0..ds * ds {
            let (a, b) = (col % ds, col / ds);
            if engine.bohr_index(a, b) != m {
                continue;
            }
            let mut unit = zeros(ds, ds);
            unit[(a, b)] = ONE;
            let x = engine.l_sb(&engine.product(&unit));
            let y = x.component_mul(&factor);
            let out = engine.bohr_mask(m, &engine.trb_lsb_q(&y));
            k.set_column(col, &CVec::from_column_slice(out.as_slice()));
        }
        if let Some(s) = vec_rotation(&model.frame.vs) {
            k = &s * k * s.adjoint();
        }
        blocks.push(k);
    }
    let mut k = zeros(ds * ds, ds * ds);
    for b in &blocks {
        k += b;
    }
    Ok(DaviesGenerator { k, method, blocks, warnings: vec![] })
}

/// Relative Frobenius difference between two constructions.
pub fn method_difference(a: &DaviesGenerator, b: &DaviesGenerator) -> f64 {
    (&a.k - &b.k).norm() / b.k.norm().max(1e-300)
}

/// Builds both constructions and flags the model when they disagree by
/// more than 10·TOL_EQUIV.
pub fn davies_pair(model: &OpenModel, split: &NZSplit, t_int: f64, eta: f64) -> Result<(DaviesGenerator, DaviesGenerator, f64)> {
    let mut a = davies_generator(model, split, DaviesMethod::TimeIntegral { t_int })?;
    let mut b = davies_generator(model, split, DaviesMethod::Resolvent { eta })?;
    let d = method_difference(&a, &b);
    if d > 10.0 * TOL_EQUIV {
        let w = format!("bath under-resolved: constructions differ by {d:.3e}");
        a.warnings.push(w.clone());
        b.warnings.push(w);
    }
    Ok((a, b, d))
}

#[derive(Clone, Copy, Debug)]
pub struct DaviesDiagnostics {
    /// max |[K, L_S]|
    pub commutator: f64,
    /// max |tr K σ| over matrix units
    pub trace: f64,
    /// max |(Kσ)^† - K σ^†| over matrix units
    pub hermiticity: f64,
    /// largest real part of the spectrum (soft check)
    pub max_real: f64,
}

impl DaviesGenerator {
    pub fn superop(&self, d_s: usize) -> SuperOperator {
        SuperOperator { dims: Dims::Plain(d_s), mat: self.k.clone() }
    }

    pub fn diagnostics(&self, h_s: &CMat) -> DaviesDiagnostics {
        let ds = h_s.nrows();
        let ls = commutator_matrix(h_s);
        let commutator = max_abs(&(&self.k * &ls - &ls * &self.k));
        let sup = self.superop(ds);
        let trace = sup.trace_annihilation_residual();
        let mut hermiticity: f64 = 0.0;
        for col in 0..ds * ds {
            let mut u = zeros(ds, ds);
            u[(col % ds, col / ds)] = ONE;
            let lhs = sup.apply(&u).adjoint();
            let rhs = sup.apply(&u.adjoint());
            hermiticity = hermiticity.max(max_abs(&(lhs - rhs)));
        }
        let (_, t) = self.k.clone().schur().unpack();
        let max_real = (0..t.nrows()).map(|i| t[(i, i)].re).fold(f64::NEG_INFINITY, f64::max);
        DaviesDiagnostics { commutator, trace, hermiticity, max_real }
    }

    /// Null vector from the smallest singular value, as a density matrix,
    /// with the residual ‖K σ‖.
    pub fn stationary_state(&self) -> Result<(CMat, f64)> {
        let svd = self.k.clone().svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| Error::Numerical("empty generator".into()))?;
        let v: CVec = vt.row(imin).adjoint();
        let d = (v.len() as f64).sqrt().round() as usize;
        let m = CMat::from_column_slice(d, d, v.as_slice());
        let tr = m.trace();
        if tr.norm() < 1e-12 {
            return Err(Error::Singular("null vector is traceless".into()));
        }
        let rho = hermitize(&(m / tr));
        let res = (&self.k * CVec::from_column_slice(rho.as_slice())).norm();
        Ok((rho, res))
    }

    /// Rate matrix entry d<i|σ|i>/dτ from <j|σ|j>.
    pub fn transition_rate(&self, from: usize, to: usize) -> f64 {
        let d = (self.k.nrows() as f64).sqrt().round() as usize;
        self.k[(to + to * d, from + from * d)].re
    }
}

/// σ(τ) = e^{Kτ} σ_0 on the grid.
pub fn solve_master_equation(gen: &DaviesGenerator, sigma0: &CMat, taus: &[f64]) -> Result<Vec<CMat>> {
    check_density(sigma0)?;
    let d = sigma0.nrows();
    if gen.k.nrows() != d * d {
        return Err(Error::Dimension("generator does not match the initial state".into()));
    }
    let v = CVec::from_column_slice(sigma0.as_slice());
    Ok(taus
        .iter()
        .map(|&tau| {
            let e = expm(&(&gen.k * c(tau)));
            CMat::from_column_slice(d, d, (e * &v).as_slice())
        })
        .collect())
}

/// -Q (L_0 + iω_m - η)^{-1} Q applied to a total-space operator, in the
/// eigenbasis of H_0; `forward = false` uses +η (τ < 0 variant).
#[derive(Clone, Debug)]
pub struct Resolvent {
    engine: QEngine,
    factor: CMat,
    pub eta: f64,
    pub omega_m: f64,
}

impl Resolvent {
    pub fn apply_frame(&self, x: &CMat) -> CMat {
        let mut qx = x.clone();
        self.engine.q_inplace(&mut qx);
        let mut y = qx.component_mul(&self.factor);
        self.engine.q_inplace(&mut y);
        -y
    }

    /// (L_0 + iω_m ∓ η) y on frame operators, for residual checks.
    pub fn shifted_l0_frame(&self, y: &CMat) -> CMat {
        y.component_div(&self.factor)
    }
}

pub fn resolvent_regularized(model: &OpenModel, m: usize, eta: f64, split: &NZSplit, forward: bool) -> Result<Resolvent> {
    let omega_m = model.bohr.entries.get(m).ok_or_else(|| Error::Invalid(format!("no Bohr index {m}")))?.omega;
    if !(eta >= 1e-3 * model.bath.dw) {
        return Err(Error::Singular(format!("eta {eta:.3e} below 1e-3 of the level spacing")));
    }
    let engine = QEngine::new(model, split, 0.0)?;
    let e = model.frame.energies();
    let shift = if forward { -eta } else { eta };
    let factor = CMat::from_fn(e.len(), e.len(), |a, b| ONE / C64::new(shift, omega_m - (e[a] - e[b])));
    Ok(Resolvent { engine, factor, eta, omega_m })
}

/// Exact ρ_I(τ) = e^{-L_S t} tr_B ρ(t), t = τ/λ², with cached propagators.
#[derive(Clone, Debug)]
pub struct ScaledDynamics {
    pub lam: f64,
    dims: CompositeDims,
    prop: UnitaryPropagator,
    sys: UnitaryPropagator,
    ens: PureEnsemble,
    window: f64,
    t_rec: f64,
}

impl ScaledDynamics {
    pub fn new(model: &OpenModel, lam: f64, rho0: &CMat) -> Result<Self> {
        check_density(rho0)?;
        Ok(Self {
            lam,
            dims: model.dims,
            prop: UnitaryPropagator::new(&model.h_total(lam))?,
            sys: UnitaryPropagator::new(&model.h_s)?,
            ens: PureEnsemble::from_density(rho0, 1e-14),
            window: model.window(),
            t_rec: model.t_rec(),
        })
    }

    fn physical(&self, tau: f64) -> Result<f64> {
        if self.lam == 0.0 {
            return Err(Error::Invalid("scaled time needs λ ≠ 0".into()));
        }
        let t = tau / (self.lam * self.lam);
        if t.abs() > self.window * (1.0 + 1e-12) {
            return Err(Error::Window { t, window: self.window, t_rec: self.t_rec });
        }
        Ok(t)
    }

    /// Evolved ensemble at physical time t.
    pub fn state_at(&self, t: f64) -> PureEnsemble {
        self.ens.evolve(&self.prop, t)
    }

    pub fn reduced_at(&self, t: f64) -> CMat {
        self.state_at(t).reduced_system(self.dims)
    }

    pub fn scaled(&self, tau: f64) -> Result<CMat> {
        let t = self.physical(tau)?;
        Ok(self.sys.evolve(&self.reduced_at(t), -t))
    }
}

pub fn scaled_reduced_state(model: &OpenModel, lam: f64, tau: f64, rho0: &CMat) -> Result<CMat> {
    ScaledDynamics::new(model, lam, rho0)?.scaled(tau)
}

/// Pointwise Frobenius residual of the exact pre-limit integral identity at
/// physical times t_i (multiples of `step`), plus the times used.
pub fn prelimit_consistency_check(
    model: &OpenModel,
    lam: f64,
    t_points: &[f64],
    rho0: &CMat,
    split: &NZSplit,
    step: f64,
) -> Result<Vec<f64>> {
    check_density(rho0)?;
    let engine = QEngine::new(model, split, lam)?;
    engine.check_step(step)?;
    let t_max = t_points.iter().fold(0.0f64, |a, &b| a.max(b));
    model.check_window(t_max)?;
    let idx: Vec<usize> = t_points
        .iter()
        .map(|&t| {
            let k = (t / step).round();
            if k < 0.0 || (k * step - t).abs() > 1e-9 * (1.0 + t) {
                Err(Error::Invalid(format!("time {t} is not on the step grid")))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<_>>()?;
    let n = idx.iter().copied().max().unwrap_or(0);
    let fr = &model.frame;
    let series = KernelSeries::compute(&engine, step, n)?;
    let cum: Vec<Vec<CMat>> = (0..engine.freqs.len()).map(|m| series.cumulative_frame(m)).collect();
    let corr = correlation_series(&engine, &fr.to_frame(rho0), step, n)?;
    let exact = ScaledDynamics::new(model, lam, rho0)?;
    let ds = model.dims.d_s;
    let sig: Vec<CVec> = (0..=n)
        .map(|j| {
            let s = fr.sys_to_frame(&exact.reduced_at(j as f64 * step));
            CVec::from_column_slice(s.as_slice())
        })
        .collect();
    let sig0 = CMat::from_column_slice(ds, ds, sig[0].as_slice());
    let phases: Vec<Vec<C64>> =
        (0..=n).map(|j| engine.freqs.iter().map(|w| (I * (w * j as f64 * step)).exp()).collect()).collect();
    Ok(idx
        .iter()
        .map(|&i| {
            let t = i as f64 * step;
            let s_i = CMat::from_column_slice(ds, ds, sig[i].as_slice());
            let r_i = engine.to_interaction(&s_i, t);
            let mut conv = CVec::zeros(ds * ds);
            for j in 0..=i {
                let w = if j == 0 || j == i { 0.5 } else { 1.0 };
                for m in 0..engine.freqs.len() {
                    conv += &cum[m][i - j] * &sig[j] * (phases[j][m] * w);
                }
            }
            conv *= c(lam * lam * step);
            let conv = CMat::from_column_slice(ds, ds, conv.as_slice());
            (r_i - &sig0 - conv - &corr[i]).norm()
        })
        .collect())
}

/// Golden-rule rates for a two-level system from direct summation over bath
/// transitions with a Lorentzian δ of width η; requires H_S, H_B and Ω_B
/// diagonal. Returns (down, up) for the transition between levels 1 and 0.
pub fn golden_rule_rates(model: &OpenModel, eta: f64) -> Result<(f64, f64)> {
    if model.dims.d_s != 2 || !model.frame.is_trivial() || model.system_ops.len() != 1 {
        return Err(Error::Invalid("golden-rule oracle needs a diagonal qubit model with one coupling".into()));
    }
    let gap = model.h_s[(1, 1)].re - model.h_s[(0, 0)].re;
    let a = model.system_ops[0][(0, 1)].norm_sqr();
    let b = &model.bath.couplings[0];
    let e = &model.frame.eb;
    let p: Vec<f64> = (0..e.len()).map(|i| model.bath.omega_b[(i, i)].re).collect();
    let delta = |x: f64| eta / PI / (x * x + eta * eta);
    let (mut down, mut up) = (0.0, 0.0);
    for i in 0..e.len() {
        for j in 0..e.len() {
            let g = b[(j, i)].norm_sqr();
            if g == 0.0 {
                continue;
            }
            // bath i -> j absorbs gap on the way down, supplies it on the way up
            down += p[i] * g * delta(e[j] - e[i] - gap);
            up += p[i] * g * delta(e[j] - e[i] + gap);
        }
    }
    Ok((2.0 * PI * a * down, 2.0 * PI * a * up))
}
