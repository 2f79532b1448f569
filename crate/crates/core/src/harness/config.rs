use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::*;
use crate::error::{Error, Result};
use crate::linalg::*;
use crate::model::OpenModel;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub reference: ReferenceKind,
    pub model: ModelSpec,
    pub initial: InitialSpec,
    pub tau: TauGrid,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub control: Option<ControlSpec>,
    #[serde(default)]
    pub factorize: Option<FactorizeSpec>,
    #[serde(default)]
    pub free: Option<FreeSpec>,
    #[serde(default)]
    pub secular: Option<SecularSpec>,
    #[serde(default)]
    pub appendix: Option<AppendixSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    #[default]
    Correct,
    /// a pure superposition of the bath vacuum and one quantum
    WrongNonstationary,
    /// Gibbs state of a perturbed bath Hamiltonian
    WrongMismatched,
}

impl ReferenceKind {
    pub fn name(&self) -> &'static str {
        match self {
            ReferenceKind::Correct => "correct",
            ReferenceKind::WrongNonstationary => "wrong_nonstationary",
            ReferenceKind::WrongMismatched => "wrong_mismatched",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// real symmetric system Hamiltonian
    pub h_s: Vec<Vec<f64>>,
    /// real symmetric system coupling operator A
    pub coupling: Vec<Vec<f64>>,
    pub bath: BathSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BathSpec {
    SingleExcitation { modes: usize, band: [f64; 2], shape: SpectralShape, beta: f64 },
    TwoTemperature { modes: usize, band: [f64; 2], beta: f64, modes2: usize, band2: [f64; 2], beta2: f64, shape: SpectralShape },
}

impl BathSpec {
    pub fn with_modes(&self, n: usize) -> BathSpec {
        let mut b = self.clone();
        match &mut b {
            BathSpec::SingleExcitation { modes, .. } => *modes = n,
            BathSpec::TwoTemperature { modes, modes2, .. } => {
                *modes = n;
                *modes2 = n;
            }
        }
        b
    }

    pub fn build(&self) -> Result<BathModel> {
        match *self {
            BathSpec::SingleExcitation { modes, band, shape, beta } => {
                build_quasicontinuum_bath(modes, (band[0], band[1]), shape, beta, Sector::SingleExcitation)
            }
            BathSpec::TwoTemperature { modes, band, beta, modes2, band2, beta2, shape } => {
                build_two_temperature_bath(modes, beta, (band[0], band[1]), modes2, beta2, (band2[0], band2[1]), shape)
            }
        }
    }
}

fn real_matrix(rows: &[Vec<f64>], what: &str) -> Result<CMat> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be a square matrix")));
    }
    Ok(CMat::from_fn(n, n, |i, j| c(rows[i][j])))
}

impl ModelSpec {
    pub fn build(&self) -> Result<OpenModel> {
        let h_s = real_matrix(&self.h_s, "model.h_s")?;
        let a = real_matrix(&self.coupling, "model.coupling")?;
        OpenModel::new(h_s, vec![a], self.bath.build()?)
    }

    pub fn with_modes(&self, n: usize) -> ModelSpec {
        ModelSpec { bath: self.bath.with_modes(n), ..self.clone() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// σ ⊗ Ω_B
    Factorized { sigma: Vec<Vec<f64>> },
    /// U (σ ⊗ Ω_B) U^† with U = exp(-iθ(σ_+ ⊗ b_φ + h.c.)), φ a Gaussian
    /// packet of spectral width `packet_width` localized at `packet_site`
    Exchange { sigma: Vec<Vec<f64>>, theta: f64, packet_width: f64, packet_site: i64 },
}

impl InitialSpec {
    pub fn sigma(&self) -> Result<CMat> {
        match self {
            InitialSpec::Factorized { sigma } | InitialSpec::Exchange { sigma, .. } => real_matrix(sigma, "initial.sigma"),
        }
    }

    pub fn build(&self, model: &OpenModel) -> Result<CorrelatedState> {
        let sigma = self.sigma()?;
        let bath = &model.bath;
        let factor = match *self {
            InitialSpec::Factorized { .. } => {
                crate::liouville::check_density(&sigma)?;
                kron(&sqrtm_psd(&sigma), &eye(bath.dim()))
            }
            InitialSpec::Exchange { theta, packet_width, packet_site, .. } => {
                let phi = bath.packet_state(packet_width, packet_site)?;
                exchange_factor(&sigma, &bath.mode_annihilator(&phi)?, theta)?
            }
        };
        correlated_initial_state(&[factor], &bath.omega_b, model.dims)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    #[serde(default = "default_spacing")]
    pub spacing: Spacing,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

fn default_spacing() -> Spacing {
    Spacing::Geometric
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Geometric,
    Linear,
}

impl TauGrid {
    pub fn values(&self) -> Vec<f64> {
        match self.spacing {
            Spacing::Geometric => geomspace(self.start, self.stop, self.points),
            Spacing::Linear => linspace(self.start, self.stop, self.points),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorForm {
    Resolvent,
    TimeIntegral,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// finite-time cap as a fraction of T_rec
    pub t_int_fraction: f64,
    /// η in units of the bath level spacing
    pub eta_spacings: f64,
    pub generator: GeneratorForm,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { t_int_fraction: 0.5, eta_spacings: 1.0, generator: GeneratorForm::Resolvent }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    /// mode count of the discretization-floor run
    pub modes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorizeSpec {
    /// ring sites spanning the support of the bath observables
    pub sites: Vec<i64>,
    pub observables: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeSpec {
    pub modes: usize,
    pub points: usize,
    /// plateau window starts at this many inverse bandwidths
    pub t_min_bandwidths: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecularSpec {
    pub tau: f64,
    /// model override for this experiment
    pub model: Option<ModelSpec>,
    /// references to run; defaults to the top-level selector
    #[serde(default)]
    pub references: Vec<ReferenceKind>,
    /// vacuum/one-quantum mixing angle of the non-stationary reference
    pub wrong_angle: f64,
    /// inverse temperature and hopping of the mismatched reference
    pub wrong_beta: f64,
    pub wrong_hopping: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixSpec {
    pub beta: f64,
    pub beta2: f64,
    /// band filled by the scaling studies
    pub band: [f64; 2],
    pub mode_counts: Vec<usize>,
    pub mixing_modes: usize,
    pub n_max: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
    pub format: OutputFormat,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: "results".into(), format: OutputFormat::Csv }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

pub const REFERENCE_CONFIG: &str = include_str!("../../configs/reference.toml");

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn reference() -> Self {
        Self::from_toml(REFERENCE_CONFIG).expect("shipped config parses")
    }

    /// Hash of the canonical serialization; identifies a model + run setup.
    /// Where and how results are written does not enter.
    pub fn fingerprint(&self) -> String {
        let mut cfg = self.clone();
        cfg.output = OutputSpec::default();
        let canon = toml::to_string(&cfg).unwrap_or_default();
        let digest = Sha256::digest(canon.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Structural checks plus the recurrence window, before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambdas must be finite and positive".into()));
        }
        if self.lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("lambdas must be strictly decreasing".into()));
        }
        let g = &self.tau;
        if g.points < 1 || !(g.start > 0.0) || g.stop < g.start {
            return Err(Error::Config("tau grid needs 0 < start <= stop and points >= 1".into()));
        }
        if !(self.kernel.t_int_fraction > 0.0 && self.kernel.t_int_fraction <= 0.8) || !(self.kernel.eta_spacings > 0.0) {
            return Err(Error::Config("kernel.t_int_fraction must lie in (0, 0.8], eta_spacings > 0".into()));
        }
        let model = self.model.build().map_err(as_config)?;
        let lmin = self.lambda_min();
        model.check_window(g.stop / (lmin * lmin))?;
        if let Some(ctl) = &self.control {
            let m2 = self.model.with_modes(ctl.modes).build().map_err(as_config)?;
            m2.check_window(g.stop / (lmin * lmin))?;
        }
        if let Some(s) = &self.secular {
            let m = s.model.as_ref().unwrap_or(&self.model).build().map_err(as_config)?;
            if s.tau < 0.0 {
                return Err(Error::Config("secular.tau must be >= 0".into()));
            }
            m.check_window(s.tau / (lmin * lmin))?;
        }
        if let Some(f) = &self.factorize {
            if f.sites.is_empty() || f.observables == 0 {
                return Err(Error::Config("factorize needs sites and observables".into()));
            }
        }
        if let Some(f) = &self.free {
            if f.points < 2 || !(f.threshold > 0.0) {
                return Err(Error::Config("free needs points >= 2 and a positive threshold".into()));
            }
        }
        self.initial.build(&model).map_err(as_config)?;
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Window { .. } | Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
