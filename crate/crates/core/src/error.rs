use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid resolution: n_side = {0} is not a positive power of two")]
    InvalidResolution(u32),

    #[error("pixel index {index} out of range for {n_pix} pixels")]
    IndexOutOfRange { index: usize, n_pix: usize },

    #[error("invalid angle ({theta}, {phi})")]
    InvalidAngle { theta: f64, phi: f64 },

    #[error("pixel has no parent at n_side = 1")]
    NoParent,

    #[error("centroid undefined: pattern is constant")]
    CentroidUndefined,

    #[error("rank error: {valid} valid pixels cannot determine {coeffs} coefficients")]
    Underdetermined { valid: usize, coeffs: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("undefined correlation: zero variance")]
    ZeroVariance,

    #[error("undefined ACC: no angular content")]
    NoAngularContent,

    #[error("undefined divergence: zero mass")]
    ZeroMass,

    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for data and format problems, 3 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Underdetermined { .. }
            | Error::ZeroVariance
            | Error::NoAngularContent
            | Error::ZeroMass
            | Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}
