use thiserror::Error;

/// Errors raised anywhere in the prediction pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column {0} has zero variance over the statistics rows")]
    ZeroVariance(usize),
    #[error(
        "unbalanced design: genotype `{genotype}` has {found} replicates, expected {expected}"
    )]
    Unbalanced {
        genotype: String,
        found: usize,
        expected: usize,
    },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("marker matrix has no polymorphic SNPs (allele-frequency scaling is zero)")]
    DegenerateMarkers,
    #[error("at least two replicates per genotype are required, found {0}")]
    InsufficientReplication(usize),
    #[error("at least two genotypes are required, found {0}")]
    InsufficientGenotypes(usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),
    #[error("non-positive diagonal entry at index {0}")]
    NonPositiveDiagonal(usize),
    #[error("redundancy threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("penalty must lie in (0, 1], got {0}")]
    InvalidPenalty(f64),
    #[error("penalized correlation matrix is singular")]
    SingularPenalizedMatrix,
    #[error("invalid latent dimension {m} for {p} variables (Ledermann bound {bound})")]
    InvalidDimension { m: usize, p: usize, bound: usize },
    #[error("noise covariance of the factor-score projection is singular")]
    SingularNoise,
    #[error("exhaustive subset search over {0} factors exceeds the guard")]
    TooManyFactors(usize),
    #[error("marginal covariance V is singular")]
    SingularV,
    #[error("residual trait covariance is not positive definite")]
    SingularSigmaE,
    #[error("test-set kinship block is singular")]
    SingularKtt,
    #[error("phenotypic covariance of the selection index is singular")]
    SingularPhenotypic,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("vectors have zero variance; correlation undefined")]
    DegenerateVariance,
    #[error("invalid train/test split: {0}")]
    InvalidSplit(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario cv2 requires test-set secondary data")]
    MissingTestData,
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
