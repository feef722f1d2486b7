use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("pole of the digamma function at {0}")]
    Pole(f64),

    #[error("requested accuracy not reached: {what} (achieved {achieved:e}, target {target:e})")]
    Accuracy {
        what: String,
        achieved: f64,
        target: f64,
    },

    #[error("insufficient margin: need {needed} time units, have {available}")]
    Margin { needed: f64, available: f64 },

    #[error("imaginary residue {residue:e} exceeds {limit:e} after inverse transform")]
    SpectralSymmetry { residue: f64, limit: f64 },

    #[error("window error: {0}")]
    Window(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("covariance matrix not positive definite at max jitter (min eigenvalue estimate {min_eigenvalue:e})")]
    NonPsd { min_eigenvalue: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
