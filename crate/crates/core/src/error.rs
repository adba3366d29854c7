use thiserror::Error;

/// Failure categories shared by every module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate orbit at {point:?}: |det(I - Psi(1))| = {margin:e}")]
    DegenerateOrbit { point: Vec<f64>, margin: f64 },
    #[error("degenerate endpoint: |det(I - Psi(1))| = {0:e}")]
    DegenerateEndpoint(f64),
    #[error("integration quality: {0}")]
    Integration(String),
    #[error("resolution: {0}")]
    Resolution(String),
    #[error("spectral gap: eigenvalue {0:e} is within tolerance of zero")]
    SpectralGap(f64),
    #[error("truncation: {0}")]
    Truncation(String),
    #[error("stiffness at s = {s}: {msg}")]
    Stiffness { s: f64, msg: String },
    #[error("undecided launch: {0}")]
    UndecidedLaunch(String),
    #[error("no solution from guess: {0}")]
    NoSolution(String),
    #[error("structural failure: {0}")]
    Structural(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Structural(_) | Error::Dimension(_) => 2,
            Error::Config(_) | Error::Io(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
