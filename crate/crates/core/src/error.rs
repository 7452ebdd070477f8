use thiserror::Error;

use crate::netmodel::NodeEffectFitSpec;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// An edge of the pre-treatment graph is missing afterwards.
    #[error("edge ({i}, {j}) of G⁻ is absent from G⁺; edges cannot be deleted")]
    SupergraphViolation { i: usize, j: usize },

    #[error("perfect separation: coefficient norm {norm:.3e} after {iterations} iterations")]
    Separation { iterations: usize, norm: f64 },

    #[error("degenerate response: {0}")]
    Degenerate(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("GLM did not converge in {iterations} iterations")]
    GlmNonConvergence { iterations: usize, coefficients: Vec<f64> },

    #[error("node-effect fit did not converge: gradient norm {gradient_norm:.3e} after {iterations} iterations")]
    FitNonConvergence {
        iterations: usize,
        gradient_norm: f64,
        last: Box<NodeEffectFitSpec>,
    },

    #[error("{dyads} free dyads exceed the enumeration limit of {limit}")]
    Capacity { dyads: usize, limit: usize },

    #[error("class {class} lacks treated or control units")]
    OneArmedClass { class: usize },

    #[error("effect not estimable: {0}")]
    EstimationImpossible(String),

    #[error("similarity undefined: every sample point has a zero gradient")]
    UndefinedSimilarity,

    #[error("link value at sample {index} is within 1e-12 of the boundary")]
    NumericalBoundary { index: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
