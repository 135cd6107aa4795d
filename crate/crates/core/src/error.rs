use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("matrix has spectral radius 0 and cannot be scaled to {target}")]
    Unscalable { target: f64 },

    #[error("degenerate draw persisted after {attempts} attempts: {what}")]
    DegenerateDraw { what: String, attempts: usize },

    #[error("feature dimension overflow: (p+1)^(L+1) = ({p}+1)^({l}+1) exceeds 2^31")]
    FeatureOverflow { p: usize, l: usize },

    #[error("state norm {norm:e} exceeded guard {guard:e} at t = {t}")]
    Unstable { t: usize, norm: f64, guard: f64 },

    #[error("matrix product overflowed at depth {depth}")]
    ProductOverflow { depth: usize },

    #[error("Hankel matrix has numerical rank {observed}, below the requested order {requested}")]
    RankDeficient { observed: usize, requested: usize },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure comes from the numbers (instability, rank, overflow)
    /// rather than from the caller's configuration or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unscalable { .. }
                | Error::DegenerateDraw { .. }
                | Error::Unstable { .. }
                | Error::ProductOverflow { .. }
                | Error::RankDeficient { .. }
                | Error::Decomposition(_)
                | Error::DegenerateDistribution(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
