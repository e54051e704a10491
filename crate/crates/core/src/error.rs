use alloc::string::String;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("matrix is not invertible for whitening: smallest eigenvalue {min_eigenvalue:e} below floor {floor:e}")]
    NotInvertible { min_eigenvalue: f64, floor: f64 },
    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },
    #[error("column rank is numerically deficient (singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("argument out of domain: {0}")]
    OutOfDomain(String),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("requested rank {rank} exceeds B = {bands} or T = {samples}")]
    RankRequest { rank: usize, bands: usize, samples: usize },
    #[error("optimisation diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("block size {block} does not divide image shape {rows}x{cols}")]
    NotDivisible { block: usize, rows: usize, cols: usize },
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

impl Error {
    /// Stable short name, used in result files.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite => "NonFinite",
            Error::NotInvertible { .. } => "NotInvertible",
            Error::NotPsd { .. } => "NotPsd",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::OutOfDomain(_) => "OutOfDomain",
            Error::Degenerate(_) => "Degenerate",
            Error::EmptyDataset => "EmptyDataset",
            Error::RankRequest { .. } => "RankRequest",
            Error::Diverged { .. } => "Diverged",
            Error::NotDivisible { .. } => "NotDivisible",
            Error::InsufficientSamples(_) => "InsufficientSamples",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
