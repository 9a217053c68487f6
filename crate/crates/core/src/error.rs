use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped so a driver can map them onto process exit codes
/// (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("timestep {t} out of range [{lo}, {hi}]")]
    Timestep { t: usize, lo: usize, hi: usize },

    #[error("degenerate schedule: {0}")]
    DegenerateSchedule(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// 2 = configuration, 3 = numeric failure, 4 = I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param(_)
            | Error::Timestep { .. }
            | Error::DegenerateSchedule(_)
            | Error::Unsupported(_)
            | Error::Shape(_)
            | Error::Config(_) => 2,
            Error::NonFinite(_) | Error::Numeric(_) => 3,
            Error::Corrupt { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
        }
    }
}

pub(crate) fn check_timestep(t: usize, lo: usize, hi: usize) -> Result<()> {
    if t < lo || t > hi {
        return Err(Error::Timestep { t, lo, hi });
    }
    Ok(())
}
