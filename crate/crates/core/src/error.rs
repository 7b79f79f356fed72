use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },

    #[error("row {row} (line {line}): treatment value {value} is not 0 or 1")]
    InvalidTreatment { row: usize, line: usize, value: f64 },

    #[error("invalid role map: {0}")]
    Roles(String),

    #[error("unmapped food categories: {}", .0.join(", "))]
    UnmappedCategories(Vec<String>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("perfect separation detected on `{0}`")]
    Separation(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("no convergence after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NoConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("no common support")]
    NoCommonSupport,

    #[error("bandwidth {bandwidth:.4} leaves grid point {point:.4} with {count} effective neighbours (need {required})")]
    SparseBandwidth {
        bandwidth: f64,
        point: f64,
        count: usize,
        required: usize,
    },

    #[error("no one induced: policy changes the mean propensity by {0:e}")]
    NoOneInduced(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the estimators themselves, as opposed to bad
    /// inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Separation(_)
                | Error::NoConvergence { .. }
                | Error::Numerical(_)
                | Error::NoCommonSupport
                | Error::SparseBandwidth { .. }
                | Error::RankDeficient(_)
                | Error::NoOneInduced(_)
        )
    }
}
