use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("path passes within {distance:e} of branch point a_{index}")]
    NearBranchPoint { index: usize, distance: f64 },

    #[error("continuation step control exceeded {max_substeps} substeps on one segment")]
    StepControl { max_substeps: usize },

    #[error("degenerate branch separation at level {k}: kappa = {kappa:e}")]
    DegenerateBranches { k: usize, kappa: f64 },

    #[error("could not certify kappa_{k} > 0 after {retries} radius halvings")]
    ScheduleCertification { k: usize, retries: usize },

    #[error("schedule invariant violated: {0}")]
    ScheduleInvariant(String),

    #[error("schedule of level {m} does not reach any branch point in region S~_{n}")]
    ScheduleTooShort { m: usize, n: usize },

    #[error("calibration sequence is not strictly increasing at n = {n}: {prev} >= {next}")]
    NonMonotone { n: usize, prev: f64, next: f64 },

    #[error("no member of H_{n} could be sampled")]
    EmptyFamily { n: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("component extraction failed: {0}")]
    Component(String),

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
