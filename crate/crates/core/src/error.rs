use thiserror::Error;

/// Errors raised while fitting models, computing criteria, or running experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyData,

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("design matrix is rank deficient at column {column} (pivot ratio {ratio:.3e})")]
    RankDeficient { column: usize, ratio: f64 },

    #[error("IRLS did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("criterion requested on an unconverged fit")]
    UnconvergedFit,

    #[error("observed information is not positive definite (pivot {pivot} ratio {ratio:.3e})")]
    SingularInformation { pivot: usize, ratio: f64 },

    #[error("cluster labels do not align with score rows: {labels} labels, {rows} rows")]
    LabelMismatch { labels: usize, rows: usize },

    #[error("k = {k} folds requested but only {clusters} clusters are available")]
    KTooLarge { k: usize, clusters: usize },

    #[error("at least two contributions are needed for a standard error, got {0}")]
    TooFewFolds(usize),

    #[error("{failed} of {k} cross-validation folds failed")]
    FoldFailures { failed: usize, k: usize },

    #[error("selection path has no standard errors")]
    MissingSe,

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 1 for numerical failures, 2 for bad input or usage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RankDeficient { .. }
            | Error::NonConvergence { .. }
            | Error::UnconvergedFit
            | Error::SingularInformation { .. }
            | Error::FoldFailures { .. }
            | Error::MissingSe => 1,
            Error::EmptyData
            | Error::InvalidData(_)
            | Error::DimensionMismatch(_)
            | Error::LabelMismatch { .. }
            | Error::KTooLarge { .. }
            | Error::TooFewFolds(_)
            | Error::InvalidConfig(_)
            | Error::Schema(_)
            | Error::Io(_)
            | Error::Csv(_) => 2,
        }
    }
}
