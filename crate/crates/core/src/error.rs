use thiserror::Error;

/// Errors raised by the solvers, test procedures, simulations and loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("null value lies outside the interior of the convex hull of kernel values")]
    ConstraintInfeasible,

    #[error("solver did not converge after {iterations} iterations (best residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("sum of kernel outer products is rank deficient")]
    SingularHessian,

    #[error("multiplier gives a non-positive weight denominator (1 + λᵀψ = {denominator:e})")]
    InfeasibleLambda { denominator: f64 },

    #[error("zero variance in statistic scaling")]
    ZeroVariance,

    #[error("variance estimate is zero: configuration is untestable")]
    DegenerateVariance,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("censoring flags are required for this statistic")]
    MissingCensorFlags,

    #[error("H matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularH { condition: f64 },

    #[error("all mixture weights are zero")]
    AllZeroWeights,

    #[error("covariance matrix is not positive definite: {0:?}")]
    InvalidCovariance(Vec<Vec<f64>>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step {step}: {source}")]
    Step {
        step: String,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("group {0} has no observations")]
    EmptyGroup(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Strips [`Error::Step`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }

    /// Short stable name of the variant, used to tally failures.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::ConstraintInfeasible => "constraint_infeasible",
            Error::NonConvergence { .. } => "non_convergence",
            Error::SingularHessian => "singular_hessian",
            Error::InfeasibleLambda { .. } => "infeasible_lambda",
            Error::ZeroVariance => "zero_variance",
            Error::DegenerateVariance => "degenerate_variance",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::MissingCensorFlags => "missing_censor_flags",
            Error::SingularH { .. } => "singular_h",
            Error::AllZeroWeights => "all_zero_weights",
            Error::InvalidCovariance(_) => "invalid_covariance",
            Error::InvalidInput(_) => "invalid_input",
            Error::Step { .. } => unreachable!("root strips step wrappers"),
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::EmptyGroup(_) => "empty_group",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    /// True for failures that come from the data or configuration rather than
    /// from the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Parse { .. }
                | Error::Schema(_)
                | Error::EmptyGroup(_)
                | Error::MissingCensorFlags
                | Error::DimensionMismatch { .. }
                | Error::InvalidInput(_)
                | Error::Config(_)
                | Error::InvalidCovariance(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
