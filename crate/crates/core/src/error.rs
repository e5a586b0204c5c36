use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("noise variance must be non-negative, got {0}")]
    NegativeVariance(f64),

    #[error(
        "IQ imbalance transform is singular (delta_g={delta_g}, delta_phi_deg={delta_phi_deg}): |alpha|^2 == |beta|^2"
    )]
    SingularIqi { delta_g: f64, delta_phi_deg: f64 },

    #[error("channel tap ({delay},{doppler}) out of bounds for a {m}x{n} grid")]
    TapOutOfBounds {
        delay: usize,
        doppler: usize,
        m: usize,
        n: usize,
    },

    #[error("duplicate tap pair (delay={0}, doppler={1}) in estimation profile")]
    DuplicateTap(usize, usize),

    #[error("ML search space of {candidates} candidates exceeds budget {budget}")]
    MlBudgetExceeded { candidates: u128, budget: u64 },

    #[error("singular linear system (pivot below {0:e})")]
    SingularSystem(f64),

    #[error("bit count {0} is not a multiple of bits per symbol {1}")]
    BitCount(usize, usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
