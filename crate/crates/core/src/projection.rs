//! Projection operators built from a bath reference state, the five-term
//! split of the Liouvillian and the pre-limit kernels R_m, K_mn and I.
//!
//! Dense superoperators are only formed for small models. The kernels on
//! large baths are computed matrix-free in the eigenbasis of H_0, where the
//! free Liouvillian is elementwise multiplication.

use crate::error::{Error, Result};
use crate::liouville::*;
use crate::linalg::*;
use crate::model::OpenModel;
use crate::spectral::{stationarity_residual, stationarity_tol, zero_eigenprojection, BathEigenstructure};

#[derive(Clone, Debug)]
pub struct NZSplit {
    pub dims: CompositeDims,
    pub omega_b: CMat,
    /// Dense P and Q, present when D^2 is below the dense cap.
    pub p: Option<SuperOperator>,
    pub q: Option<SuperOperator>,
    pub reference_is_stationary: bool,
    pub reference_is_zero_eigenprojection: bool,
    pub stationarity_residual: f64,
}

/// P ρ = tr_B(ρ) ⊗ Ω_B and Q = 1 - P, with the flags computed against H_B.
pub fn make_projector(omega_b: &CMat, h_b: &CMat, dims: CompositeDims) -> Result<NZSplit> {
    if omega_b.nrows() != dims.d_b || h_b.nrows() != dims.d_b {
        return Err(Error::Dimension("reference state does not match d_B".into()));
    }
    let tr = omega_b.trace();
    if (tr - ONE).norm() > TAU_TR {
        return Err(Error::NotDensity(format!("reference trace {tr}")));
    }
    let res = stationarity_residual(h_b, omega_b);
    let stationary = res <= stationarity_tol(h_b);
    // A zero-eigenprojection reference is a function of H_B: on every
    // eigenspace it is proportional to the eigenprojector.
    let mut zero_eig = stationary;
    if stationary {
        let eig = BathEigenstructure::new(h_b, None)?;
        for p in &eig.projectors {
            let blk = p * omega_b * p;
            let rank = p.trace().re.round();
            let target = p * (blk.trace() / c(rank));
            if max_abs(&(blk - target)) > TAU_PROJ {
                zero_eig = false;
                break;
            }
        }
    }
    let n = dims.total();
    let (p, q) = if n * n <= DENSE_CAP {
        let db = dims.d_b;
        let vo = CVec::from_column_slice(omega_b.as_slice());
        let vi = CVec::from_column_slice(eye(db).as_slice());
        let p = lift_superop_bath(&(&vo * vi.transpose()), dims)?;
        if zero_eig {
            let z = zero_eigenprojection(omega_b, h_b, dims, false)?;
            if max_abs(&(&z.mat - &p.mat)) > TAU_PROJ {
                zero_eig = false;
            }
        }
        let q = SuperOperator::identity(p.dims).sub(&p);
        (Some(p), Some(q))
    } else {
        (None, None)
    };
    Ok(NZSplit {
        dims,
        omega_b: omega_b.clone(),
        p,
        q,
        reference_is_stationary: stationary,
        reference_is_zero_eigenprojection: zero_eig,
        stationarity_residual: res,
    })
}

impl NZSplit {
    pub fn for_model(model: &OpenModel) -> Result<Self> {
        make_projector(&model.bath.omega_b, &model.bath.h_b, model.dims)
    }

    pub fn apply_p(&self, x: &CMat) -> CMat {
        kron(&trace_out_bath(x, self.dims), &self.omega_b)
    }

    pub fn apply_q(&self, x: &CMat) -> CMat {
        x - self.apply_p(x)
    }

    pub fn p_dense(&self) -> Result<&SuperOperator> {
        let n = self.dims.total();
        self.p.as_ref().ok_or(Error::SizeCap { size: n * n, cap: DENSE_CAP })
    }

    pub fn q_dense(&self) -> Result<&SuperOperator> {
        let n = self.dims.total();
        self.q.as_ref().ok_or(Error::SizeCap { size: n * n, cap: DENSE_CAP })
    }

    fn require_admissible(&self) -> Result<()> {
        if !self.reference_is_zero_eigenprojection {
            return Err(Error::NonStationary(self.stationarity_residual));
        }
        Ok(())
    }
}

/// The map σ ↦ tr_B(L_SB(σ ⊗ Ω)) on column-stacked system operators.
fn reference_coupling_map(h_sb: &CMat, omega: &CMat, dims: CompositeDims) -> CMat {
    let ds = dims.d_s;
    let mut m = zeros(ds * ds, ds * ds);
    for col in 0..ds * ds {
        let mut e = zeros(ds, ds);
        e[(col % ds, col / ds)] = ONE;
        let x = kron(&e, omega);
        let y = trace_out_bath(&(comm(h_sb, &x) * (-I)), dims);
        m.set_column(col, &CVec::from_column_slice(y.as_slice()));
    }
    m
}

/// max |P L_SB P| entry; zero when every coupling has vanishing bath average.
pub fn check_coupling_condition(model: &OpenModel, split: &NZSplit) -> f64 {
    max_abs(&reference_coupling_map(&model.h_sb(), &split.omega_b, model.dims)) * max_abs(&split.omega_b)
}

#[derive(Clone, Debug)]
pub struct LiouvilleSplit {
    /// P L_S P, Q L_0 Q, λ Q L_SB Q, λ P L_SB Q, λ Q L_SB P
    pub terms: [SuperOperator; 5],
    pub residual: f64,
}

pub fn decompose_liouvillian(model: &OpenModel, lam: f64, split: &NZSplit) -> Result<LiouvilleSplit> {
    let cc = check_coupling_condition(model, split);
    if cc > 1e-10 {
        return Err(Error::Coupling(cc));
    }
    let p = split.p_dense()?;
    let q = split.q_dense()?;
    let ls = model.l_s()?;
    let l0 = model.l0()?;
    let lsb = model.l_sb()?.scale(c(lam));
    let terms = [
        p.compose(&ls).compose(p),
        q.compose(&l0).compose(q),
        q.compose(&lsb).compose(q),
        p.compose(&lsb).compose(q),
        q.compose(&lsb).compose(p),
    ];
    let mut sum = terms[0].clone();
    for t in &terms[1..] {
        sum = sum.add(t);
    }
    let residual = sum.sub(&model.liouvillian(lam)?).max_abs();
    if residual > 1e-10 {
        return Err(Error::Coupling(residual));
    }
    Ok(LiouvilleSplit { terms, residual })
}

/// Sparse complex matrix as (row, col, value) triplets.
#[derive(Clone, Debug)]
pub struct Sparse {
    pub n: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl Sparse {
    pub fn from_dense(m: &CMat) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != ZERO {
                    entries.push((i, j, m[(i, j)]));
                }
            }
        }
        Self { n: m.nrows(), entries }
    }

    /// out += z (H y - y H)
    fn add_comm(&self, y: &CMat, out: &mut CMat, z: C64) {
        let n = self.n;
        let ys = y.as_slice();
        let os = out.as_mut_slice();
        for col in 0..n {
            let base = col * n;
            for &(i, j, v) in &self.entries {
                os[base + i] += z * v * ys[base + j];
            }
        }
        for &(i, j, v) in &self.entries {
            let zv = z * v;
            for r in 0..n {
                os[j * n + r] -= zv * ys[i * n + r];
            }
        }
    }
}

/// Matrix-free action of L_0' = L_0 + λ Q L_SB Q in the eigenbasis of H_0,
/// with readouts onto system operators.
#[derive(Clone, Debug)]
pub struct QEngine {
    pub dims: CompositeDims,
    pub lam: f64,
    nu: CMat,
    omega: CMat,
    omega_sp: Sparse,
    hsb: Sparse,
    ref_map: CMat,
    /// Bohr index of every (a, b) pair of system frame indices
    bohr_of: Vec<Vec<usize>>,
    pub freqs: Vec<f64>,
    es: Vec<f64>,
    pub step_max: f64,
}

impl QEngine {
    pub fn new(model: &OpenModel, split: &NZSplit, lam: f64) -> Result<Self> {
        let dims = model.dims;
        let fr = &model.frame;
        let e = fr.energies();
        let n = dims.total();
        let nu = CMat::from_fn(n, n, |a, b| -I * (e[a] - e[b]));
        let omega = fr.bath_to_frame(&split.omega_b);
        let hsb = fr.to_frame(&model.h_sb());
        let ref_map = reference_coupling_map(&hsb, &omega, dims);
        let freqs = model.bohr.frequencies();
        let ds = dims.d_s;
        let mut bohr_of = vec![vec![0; ds]; ds];
        for a in 0..ds {
            for b in 0..ds {
                let w = fr.es[a] - fr.es[b];
                bohr_of[a][b] = model
                    .bohr
                    .index_of(w)
                    .or_else(|| {
                        freqs
                            .iter()
                            .enumerate()
                            .min_by(|x, y| (x.1 - w).abs().total_cmp(&(y.1 - w).abs()))
                            .map(|(k, _)| k)
                    })
                    .ok_or_else(|| Error::Numerical("empty Bohr decomposition".into()))?;
            }
        }
        Ok(Self {
            dims,
            lam,
            nu,
            omega_sp: Sparse::from_dense(&omega),
            omega,
            hsb: Sparse::from_dense(&hsb),
            ref_map,
            bohr_of,
            freqs,
            es: fr.es.clone(),
            step_max: model.max_step(lam),
        })
    }

    fn trb(&self, y: &CMat) -> CMat {
        trace_out_bath(y, self.dims)
    }

    /// y -= tr_B(y) ⊗ Ω
    pub fn q_inplace(&self, y: &mut CMat) {
        let sig = self.trb(y);
        self.sub_product(&sig, y);
    }

    fn sub_product(&self, sig: &CMat, y: &mut CMat) {
        let (ds, db) = (self.dims.d_s, self.dims.d_b);
        for t in 0..ds {
            for s in 0..ds {
                let z = sig[(s, t)];
                if z == ZERO {
                    continue;
                }
                for &(b, bp, v) in &self.omega_sp.entries {
                    y[(s * db + b, t * db + bp)] -= z * v;
                }
            }
        }
    }

    pub fn product(&self, sig: &CMat) -> CMat {
        kron(sig, &self.omega)
    }

    pub fn l_sb(&self, y: &CMat) -> CMat {
        let n = self.dims.total();
        let mut out = zeros(n, n);
        self.hsb.add_comm(y, &mut out, -I);
        out
    }

    /// L_0' y
    pub fn apply(&self, y: &CMat) -> CMat {
        let mut out = self.nu.component_mul(y);
        if self.lam != 0.0 {
            let mut qy = y.clone();
            self.q_inplace(&mut qy);
            let mut w = self.l_sb(&qy);
            self.q_inplace(&mut w);
            out += w * c(self.lam);
        }
        out
    }

    /// tr_B(L_SB y) without forming L_SB y.
    pub fn trb_lsb(&self, y: &CMat) -> CMat {
        let (ds, db) = (self.dims.d_s, self.dims.d_b);
        let mut out = zeros(ds, ds);
        for &(i, j, v) in &self.hsb.entries {
            let (s, b) = (i / db, i % db);
            for t in 0..ds {
                out[(s, t)] += v * y[(j, t * db + b)];
            }
            let (t, b) = (j / db, j % db);
            for s in 0..ds {
                out[(s, t)] -= y[(s * db + b, i)] * v;
            }
        }
        out * (-I)
    }

    /// tr_B(L_SB Q y)
    pub fn trb_lsb_q(&self, y: &CMat) -> CMat {
        let ds = self.dims.d_s;
        let sig = self.trb(y);
        let v = &self.ref_map * CVec::from_column_slice(sig.as_slice());
        self.trb_lsb(y) - CMat::from_column_slice(ds, ds, v.as_slice())
    }

    pub fn bohr_index(&self, a: usize, b: usize) -> usize {
        self.bohr_of[a][b]
    }

    /// Q̃_m on a frame-basis system operator.
    pub fn bohr_mask(&self, m: usize, x: &CMat) -> CMat {
        CMat::from_fn(x.nrows(), x.ncols(), |a, b| if self.bohr_of[a][b] == m { x[(a, b)] } else { ZERO })
    }

    /// e^{-L_S t} on a frame-basis system operator.
    pub fn to_interaction(&self, x: &CMat, t: f64) -> CMat {
        CMat::from_fn(x.nrows(), x.ncols(), |a, b| x[(a, b)] * (I * ((self.es[a] - self.es[b]) * t)).exp())
    }

    pub fn check_step(&self, h: f64) -> Result<()> {
        if h.abs() > self.step_max * (1.0 + 1e-12) {
            return Err(Error::Nyquist { step: h.abs(), max: self.step_max });
        }
        Ok(())
    }

    /// readout(e^{L_0' t_j} y0) for t_j = j h, j = 0..=n. Each block of
    /// `nsub` steps expands the exponential in a Taylor series once and
    /// evaluates the readout on the powers.
    pub fn trajectory<F>(&self, y0: &CMat, h: f64, n: usize, readout: F) -> Result<Vec<CMat>>
    where
        F: Fn(&CMat) -> CMat,
    {
        Ok(self.trajectory_at(y0, h, n, readout, &[])?.0)
    }

    /// As `trajectory`, plus readouts at the ascending off-grid times `extra`
    /// (each in [0, n h]), taken from the same Taylor blocks.
    pub fn trajectory_at<F>(&self, y0: &CMat, h: f64, n: usize, readout: F, extra: &[f64]) -> Result<(Vec<CMat>, Vec<CMat>)>
    where
        F: Fn(&CMat) -> CMat,
    {
        if extra.windows(2).any(|w| w[1] < w[0]) || extra.iter().any(|&t| t < 0.0 || t > n as f64 * h * (1.0 + 1e-12)) {
            return Err(Error::Invalid("extra times must be ascending and inside the grid".into()));
        }
        let mut extra_out = Vec::with_capacity(extra.len());
        let mut cursor = 0;
        while cursor < extra.len() && extra[cursor] == 0.0 {
            extra_out.push(readout(y0));
            cursor += 1;
        }
        const NSUB: usize = 10;
        const TOL: f64 = 1e-15;
        const KMAX: usize = 60;
        self.check_step(h)?;
        let mut outs = Vec::with_capacity(n + 1);
        outs.push(readout(y0));
        let mut y = y0.clone();
        let big = NSUB as f64 * h;
        let mut j = 0;
        while j < n {
            let steps = NSUB.min(n - j);
            let nrm0 = y.norm();
            let mut terms = vec![y.clone()];
            let mut reads = vec![readout(&y)];
            let mut t = y.clone();
            for k in 1..KMAX {
                t = self.apply(&t) * c(big / k as f64);
                let tn = t.norm();
                reads.push(readout(&t));
                terms.push(t.clone());
                if k > 3 && tn <= TOL * nrm0.max(1e-300) {
                    break;
                }
                if k == KMAX - 1 {
                    return Err(Error::Numerical("Taylor series failed to converge".into()));
                }
            }
            let eval = |x: f64| {
                let mut acc = reads[0].clone();
                let mut p = 1.0;
                for r in &reads[1..] {
                    p *= x;
                    acc += r * c(p);
                }
                acc
            };
            for s in 1..=steps {
                outs.push(eval(s as f64 / NSUB as f64));
            }
            let t0 = j as f64 * h;
            let t1 = if j + steps == n { f64::INFINITY } else { (j + steps) as f64 * h };
            while cursor < extra.len() && extra[cursor] <= t1 {
                extra_out.push(eval((extra[cursor] - t0) / big));
                cursor += 1;
            }
            let x = steps as f64 / NSUB as f64;
            let mut p = 1.0;
            let mut next = terms[0].clone();
            for tk in &terms[1..] {
                p *= x;
                next += tk * c(p);
            }
            y = next;
            j += steps;
        }
        if outs.iter().any(|m| m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::Numerical("non-finite value in Q-range propagation".into()));
        }
        while extra_out.len() < extra.len() {
            // only reachable with n = 0
            extra_out.push(readout(&y));
        }
        Ok((outs, extra_out))
    }
}

/// Uniform grid of `n` steps covering [0, t] with step at most `h_max`.
pub fn grid_for(t: f64, h_max: f64) -> (f64, usize) {
    if t == 0.0 {
        return (h_max, 0);
    }
    let n = (t.abs() / h_max).ceil().max(1.0) as usize;
    (t / n as f64, n)
}

fn trapezoid(vals: &[CMat], h: f64) -> CMat {
    let n = vals.len();
    let mut acc = zeros(vals[0].nrows(), vals[0].ncols());
    if n < 2 {
        return acc;
    }
    for (i, v) in vals.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += v * c(w * h);
    }
    acc
}

fn cumulative_trapezoid(vals: &[CMat], h: f64) -> Vec<CMat> {
    let mut out = Vec::with_capacity(vals.len());
    let mut acc = zeros(vals[0].nrows(), vals[0].ncols());
    out.push(acc.clone());
    for i in 1..vals.len() {
        acc += (&vals[i] + &vals[i - 1]) * c(0.5 * h);
        out.push(acc.clone());
    }
    out
}

/// Unitary S with vec(V X V^†) = S vec(X).
pub fn vec_rotation(v: &Option<CMat>) -> Option<CMat> {
    v.as_ref().map(|v| kron(&v.map(|z| z.conj()), v))
}

/// Integrands of the memory kernel on a uniform time grid. For Bohr index m
/// and time t_i, `values[m][i]` is the d_S^2 x d_S^2 matrix of
/// σ ↦ e^{iω_m t} Q̃_m tr_B(L_SB Q e^{L_0' t} L_SB(σ ⊗ Ω)), frame basis.
#[derive(Clone, Debug)]
pub struct KernelSeries {
    pub h: f64,
    pub values: Vec<Vec<CMat>>,
    input_mask: Vec<Vec<bool>>,
    rot: Option<CMat>,
}

impl KernelSeries {
    pub fn compute(engine: &QEngine, h: f64, n: usize) -> Result<Self> {
        let ds = engine.dims.d_s;
        let nm = engine.freqs.len();
        let mut values = vec![vec![zeros(ds * ds, ds * ds); n + 1]; nm];
        for col in 0..ds * ds {
            let mut e = zeros(ds, ds);
            e[(col % ds, col / ds)] = ONE;
            let y0 = engine.l_sb(&engine.product(&e));
            let reads = engine.trajectory(&y0, h, n, |y| engine.trb_lsb_q(y))?;
            for (i, r) in reads.iter().enumerate() {
                let t = i as f64 * h;
                for (m, w) in engine.freqs.iter().enumerate() {
                    let v = engine.bohr_mask(m, r) * (I * (w * t)).exp();
                    values[m][i].set_column(col, &CVec::from_column_slice(v.as_slice()));
                }
            }
        }
        let input_mask = (0..nm)
            .map(|m| (0..ds * ds).map(|col| engine.bohr_of[col % ds][col / ds] == m).collect())
            .collect();
        Ok(Self { h, values, input_mask, rot: None })
    }

    fn with_rotation(mut self, model: &OpenModel) -> Self {
        self.rot = vec_rotation(&model.frame.vs);
        self
    }

    fn finish(&self, mut k: CMat, n_in: Option<usize>) -> CMat {
        if let Some(n) = n_in {
            for col in 0..k.ncols() {
                if !self.input_mask[n][col] {
                    k.column_mut(col).fill(ZERO);
                }
            }
        }
        match &self.rot {
            Some(s) => s * k * s.adjoint(),
            None => k,
        }
    }

    /// K_mn over [0, upto·h] (all inputs when `n_in` is None), original basis.
    pub fn integral(&self, m: usize, n_in: Option<usize>, upto: usize) -> CMat {
        self.finish(trapezoid(&self.values[m][..=upto], self.h), n_in)
    }

    /// Running integrals in the frame basis, all inputs.
    pub fn cumulative_frame(&self, m: usize) -> Vec<CMat> {
        cumulative_trapezoid(&self.values[m], self.h)
    }
}

fn require_lambda(lam: f64) -> Result<()> {
    if lam == 0.0 || !lam.is_finite() {
        return Err(Error::Invalid(format!("scaled time needs a finite nonzero coupling, got {lam}")));
    }
    Ok(())
}

/// K_mn^(λ)(τ) restricted to the P-range (acting on σ of σ ⊗ Ω).
pub fn memory_kernel(model: &OpenModel, m: usize, n: usize, lam: f64, tau: f64, split: &NZSplit) -> Result<CMat> {
    require_lambda(lam)?;
    let t = tau / lam / lam;
    model.check_window(t)?;
    let engine = QEngine::new(model, split, lam)?;
    let (h, steps) = grid_for(t, engine.step_max);
    let series = KernelSeries::compute(&engine, h, steps)?.with_rotation(model);
    Ok(series.integral(m, Some(n), steps))
}

/// Memory kernels K_mm on the Bohr diagonal with inputs restricted to Q̃_m,
/// all evaluated at one τ.
pub fn diagonal_kernels(model: &OpenModel, lam: f64, tau: f64, split: &NZSplit) -> Result<Vec<CMat>> {
    require_lambda(lam)?;
    let t = tau / lam / lam;
    model.check_window(t)?;
    let engine = QEngine::new(model, split, lam)?;
    let (h, steps) = grid_for(t, engine.step_max);
    let series = KernelSeries::compute(&engine, h, steps)?.with_rotation(model);
    Ok((0..engine.freqs.len()).map(|m| series.integral(m, Some(m), steps)).collect())
}

/// Spectral norm of each diagonal kernel block; the quantity whose growth
/// exposes a reference state that fails to remove the bath point spectrum.
pub fn secular_norms(model: &OpenModel, lam: f64, tau: f64, split: &NZSplit) -> Result<Vec<f64>> {
    if tau == 0.0 {
        return Ok(vec![0.0; model.bohr.len()]);
    }
    Ok(diagonal_kernels(model, lam, tau, split)?.iter().map(op_norm).collect())
}

/// Running value of I^(λ) on the grid t_j = j h as frame-basis system
/// operators (the bath factor is Ω_B).
pub fn correlation_series(engine: &QEngine, rho0_frame: &CMat, h: f64, n: usize) -> Result<Vec<CMat>> {
    let mut y0 = rho0_frame.clone();
    engine.q_inplace(&mut y0);
    let reads = engine.trajectory(&y0, h, n, |y| engine.trb_lsb(y))?;
    let integrand: Vec<CMat> = reads
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let t = i as f64 * h;
            let mut acc = zeros(r.nrows(), r.ncols());
            for (m, w) in engine.freqs.iter().enumerate() {
                acc += engine.bohr_mask(m, r) * (I * (w * t)).exp();
            }
            acc
        })
        .collect();
    Ok(cumulative_trapezoid(&integrand, h).into_iter().map(|m| m * c(engine.lam)).collect())
}

/// I^(λ) at arbitrary physical times on top of the grid t_j = j h: the last
/// partial interval is closed with one more trapezoid panel.
pub fn correlation_at(engine: &QEngine, rho0_frame: &CMat, h: f64, n: usize, times: &[f64]) -> Result<Vec<CMat>> {
    let mut y0 = rho0_frame.clone();
    engine.q_inplace(&mut y0);
    let (reads, extra) = engine.trajectory_at(&y0, h, n, |y| engine.trb_lsb(y), times)?;
    let phased = |r: &CMat, t: f64| {
        let mut acc = zeros(r.nrows(), r.ncols());
        for (m, w) in engine.freqs.iter().enumerate() {
            acc += engine.bohr_mask(m, r) * (I * (w * t)).exp();
        }
        acc
    };
    let integrand: Vec<CMat> = reads.iter().enumerate().map(|(i, r)| phased(r, i as f64 * h)).collect();
    let cum = cumulative_trapezoid(&integrand, h);
    Ok(times
        .iter()
        .zip(&extra)
        .map(|(&t, r)| {
            let j = ((t / h).floor() as usize).min(n);
            let tail = (&integrand[j] + phased(r, t)) * c(0.5 * (t - j as f64 * h));
            (&cum[j] + tail) * c(engine.lam)
        })
        .collect())
}

/// I^(λ)(τ) as a system operator.
pub fn initial_correlation_term(model: &OpenModel, lam: f64, tau: f64, rho0: &CMat, split: &NZSplit) -> Result<CMat> {
    require_lambda(lam)?;
    check_density(rho0)?;
    let t = tau / lam / lam;
    model.check_window(t)?;
    let engine = QEngine::new(model, split, lam)?;
    let (h, n) = grid_for(t, engine.step_max);
    let series = correlation_series(&engine, &model.frame.to_frame(rho0), h, n)?;
    Ok(model.frame.sys_from_frame(&series[n]))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Quadrature {
    /// Uniform step; defaults to the largest step the guard allows.
    pub step: Option<f64>,
    /// Cap on |T|; defaults to the model's validity window.
    pub cap: Option<f64>,
}

fn dense_l0_prime(model: &OpenModel, lam: f64, split: &NZSplit, omega_m: f64) -> Result<CMat> {
    let q = split.q_dense()?;
    let l0 = model.l0()?;
    let lsb = model.l_sb()?;
    let n = l0.mat.nrows();
    Ok(&l0.mat + &q.mat * &lsb.mat * &q.mat * c(lam) + eye(n) * (I * omega_m))
}

struct DenseGrid {
    h: f64,
    n: usize,
}

fn dense_grid(model: &OpenModel, lam: f64, t: f64, quad: &Quadrature) -> Result<DenseGrid> {
    let cap = quad.cap.unwrap_or_else(|| model.window());
    if t.abs() > cap {
        return Err(Error::Window { t, window: cap, t_rec: model.t_rec() });
    }
    let hmax = model.max_step(lam);
    let h = quad.step.unwrap_or(hmax);
    if h > hmax * (1.0 + 1e-12) {
        return Err(Error::Nyquist { step: h, max: hmax });
    }
    let (h, n) = grid_for(t, h);
    Ok(DenseGrid { h, n })
}

/// R_m^(λ)(τ) = ∫_0^{τ/λ²} Q e^{(L_0' + iω_m)t} dt by the trapezoid rule.
/// Negative τ integrates with a negative step.
pub fn kernel_r(model: &OpenModel, m: usize, lam: f64, tau: f64, split: &NZSplit, quad: &Quadrature) -> Result<SuperOperator> {
    require_lambda(lam)?;
    let omega_m = model.bohr.entries.get(m).ok_or_else(|| Error::Invalid(format!("no Bohr index {m}")))?.omega;
    let t = tau / lam / lam;
    let g = dense_grid(model, lam, t, quad)?;
    let a = dense_l0_prime(model, lam, split, omega_m)?;
    let q = split.q_dense()?;
    let n = a.nrows();
    let dims = q.dims;
    if g.n == 0 {
        return Ok(SuperOperator::zero(dims));
    }
    let step = expm(&(&a * c(g.h)));
    let mut e = eye(n);
    let mut acc = eye(n) * c(0.5);
    for k in 1..=g.n {
        e = &step * e;
        acc += &e * c(if k == g.n { 0.5 } else { 1.0 });
    }
    Ok(SuperOperator { dims, mat: &q.mat * acc * c(g.h) })
}

/// -Q (L_0 + iω_m ∓ η)^{-1} Q as a dense superoperator; `forward = false`
/// gives the τ < 0 variant with +η.
pub fn resolvent_dense(model: &OpenModel, m: usize, eta: f64, split: &NZSplit, forward: bool) -> Result<SuperOperator> {
    let omega_m = model.bohr.entries.get(m).ok_or_else(|| Error::Invalid(format!("no Bohr index {m}")))?.omega;
    if eta < 1e-3 * model.bath.dw {
        return Err(Error::Singular(format!("eta {eta:.3e} below 1e-3 of the level spacing")));
    }
    let q = split.q_dense()?;
    let l0 = model.l0()?;
    let n = l0.mat.nrows();
    let shift = if forward { -eta } else { eta };
    let a = &l0.mat + eye(n) * (C64::new(shift, omega_m));
    let x = a.lu().solve(&q.mat).ok_or_else(|| Error::Singular("resolvent solve failed".into()))?;
    Ok(SuperOperator { dims: q.dims, mat: -(&q.mat * x) })
}

#[derive(Clone, Copy, Debug)]
pub struct RecurrenceResidual {
    /// ‖R - rhs‖ with the regularized resolvent standing in for -0+
    pub raw: f64,
    /// same, with the η-correction η G R restored; pure quadrature error
    pub corrected: f64,
    /// step · ν² · |T|
    pub bound: f64,
}

/// Both sides of the recurrence for R_m^(λ)(τ), τ > 0, using
/// G = Q (L_0 + iω_m - η)^{-1} Q for the resolvent.
pub fn recurrence_residual(
    model: &OpenModel,
    m: usize,
    lam: f64,
    tau: f64,
    split: &NZSplit,
    eta: f64,
    quad: &Quadrature,
) -> Result<RecurrenceResidual> {
    split.require_admissible()?;
    if tau <= 0.0 {
        return Err(Error::Invalid("recurrence is stated for τ > 0".into()));
    }
    let r = kernel_r(model, m, lam, tau, split, quad)?;
    let g = resolvent_dense(model, m, eta, split, true)?.scale(c(-1.0)).mat;
    let omega_m = model.bohr.entries[m].omega;
    let t = tau / lam / lam;
    let grid = dense_grid(model, lam, t, quad)?;
    let q = &split.q_dense()?.mat;
    let l0 = model.l0()?.mat;
    let lsb = model.l_sb()?.mat;
    let n = l0.nrows();
    let a = dense_l0_prime(model, lam, split, 0.0)?;
    // C(T) = e^{L_0 T} ∫ e^{-L_0 t} Q L_SB Q e^{L_0' t} dt
    let qlq = q * &lsb * q;
    let back = expm(&(&l0 * c(-grid.h)));
    let fwd = expm(&(&a * c(grid.h)));
    let (mut eb, mut ef) = (eye(n), eye(n));
    let mut acc = &qlq * c(0.5);
    for k in 1..=grid.n {
        eb = &back * eb;
        ef = &fwd * ef;
        acc += &eb * &qlq * &ef * c(if k == grid.n { 0.5 } else { 1.0 });
    }
    let conv = expm(&(&l0 * c(t))) * acc * c(grid.h);
    let free = expm(&((&l0 + eye(n) * (I * omega_m)) * c(t)));
    let phase = (I * (omega_m * t)).exp();
    let rhs = &g * (free - eye(n)) + &g * conv * (phase * lam) - &g * &lsb * &r.mat * c(lam);
    let raw = max_abs(&(&r.mat - &rhs));
    let corrected = max_abs(&(&r.mat + &g * &r.mat * c(eta) - &rhs));
    let nu = model.rate_estimate(lam);
    Ok(RecurrenceResidual { raw, corrected, bound: grid.h * nu * nu * t.abs() })
}
