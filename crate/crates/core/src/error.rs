use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("displaced corners are degenerate (DLT rank < 8)")]
    DegenerateCorners,
    #[error("projective blow-up: denominator {denominator:e} at cell ({row}, {col})")]
    ProjectiveBlowup {
        row: usize,
        col: usize,
        denominator: f64,
    },
    #[error("matrix is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spatial size {0}x{1} cannot be halved down to 2x2")]
    NonPow2Spatial(usize, usize),
    #[error("correlation volume of {entries} entries exceeds the budget of {budget}")]
    MemoryBudgetExceeded { entries: usize, budget: usize },
    #[error("Gauss-Newton Hessian is rank deficient (condition number {0:e})")]
    RankDeficientHessian(f64),
    #[error("alignment diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("loss does not depend on any trainable parameter")]
    NoGradPath,
    /// Debug builds check every tape value and gradient.
    #[error("non-finite value at tape node {node}")]
    NonFiniteValue { node: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("base image {width}x{height} is too small, need at least {need}x{need}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        need: usize,
    },
    #[error("corrupt manifest at line {line}: {reason}")]
    CorruptManifest { line: usize, reason: String },
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// Strips any iteration context and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }
}
