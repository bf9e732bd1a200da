use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("parameter length {got} does not match layout length {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("target dimension {0} exceeds the exact-trace limit of {limit}", limit = crate::flow::MAX_EXACT_TRACE_DIM)]
    DimensionLimit(usize),
    #[error("numerical blow-up during integration at step {step} (t = {t}); reduce the step size or learning rate")]
    NumericalBlowUp { step: usize, t: f64 },
    #[error("non-finite loss at pair {index}")]
    NonFiniteLoss { index: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config line {line}, field `{field}`: {message}")]
    Config {
        line: usize,
        field: String,
        message: String,
    },
    #[error("x range is not covered by any branch on [{lo}, {hi}]")]
    CoverageGap { lo: f64, hi: f64 },
    #[error("unknown metric `{0}`; valid metrics are nll, emd, demd")]
    UnknownMetric(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
