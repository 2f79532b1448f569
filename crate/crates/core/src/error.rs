use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("operator is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),
    #[error("invalid density matrix: {0}")]
    NotDensity(String),
    #[error("superoperator of size {size} exceeds dense cap {cap}")]
    SizeCap { size: usize, cap: usize },
    #[error("reference state is not stationary (commutator {0:.3e})")]
    NonStationary(f64),
    #[error("coupling condition violated (residual {0:.3e})")]
    Coupling(f64),
    #[error("physical time {t:.4} exceeds validity window {window:.4} (T_rec = {t_rec:.4})")]
    Window { t: f64, window: f64, t_rec: f64 },
    #[error("quadrature step {step:.3e} too coarse, guard requires <= {max:.3e}")]
    Nyquist { step: f64, max: f64 },
    #[error("singular or ill-posed: {0}")]
    Singular(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("Fock cutoff inadequate: tail mass {0:.3e}")]
    Cutoff(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
