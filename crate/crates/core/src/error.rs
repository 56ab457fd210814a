use thiserror::Error;

/// Errors raised across the library. Each variant maps to a stable CLI exit
/// code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("syntax error in expression {expr:?} at offset {offset}: {message}")]
    Syntax {
        expr: String,
        offset: usize,
        message: String,
    },

    #[error("configuration error{}: {message}", location(*line, *column))]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown variable `{name}` in expression {expr:?}")]
    UnknownVariable { name: String, expr: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("vector field does not vanish at the origin: |f(0,0,0)| = {0:e}")]
    NonZeroEquilibrium(f64),

    #[error("non-finite value while evaluating the vector field: {0}")]
    NumericDomain(String),

    #[error("trajectory blew up at t = {time} (state no longer finite)")]
    BlowUp { time: f64 },

    #[error("degenerate disturbance class: {0}")]
    DegenerateClass(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("invalid disturbance signal: {0}")]
    InvalidSignal(String),

    #[error("size cap exceeded: {what} would need about {estimate} elements (cap {cap})")]
    CapExceeded {
        what: String,
        estimate: f64,
        cap: f64,
    },

    #[error("search did not converge: {0}")]
    NoConvergence(String),

    #[error("synthesis failed: no winning strategy in mode {mode} ({detail})")]
    SynthesisFailure { mode: String, detail: String },

    #[error("controller undefined at step {step} (state {state}, mode {mode})")]
    Refinement {
        step: usize,
        state: usize,
        mode: String,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn location(line: usize, column: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" at line {line}, column {column}")
    }
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json(_) => 2,
            Error::InvalidInput(_)
            | Error::Syntax { .. }
            | Error::UnknownVariable { .. }
            | Error::DimensionMismatch(_)
            | Error::NonZeroEquilibrium(_)
            | Error::DegenerateClass(_)
            | Error::Infeasible(_)
            | Error::InvalidSignal(_) => 3,
            Error::NumericDomain(_) | Error::BlowUp { .. } | Error::NoConvergence(_) => 4,
            Error::CapExceeded { .. } => 5,
            Error::SynthesisFailure { .. } => 6,
            Error::Refinement { .. } => 7,
            Error::Format(_) | Error::Io(_) => 8,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Configuration error without a source position.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config {
            line: 0,
            column: 0,
            message: msg.into(),
        }
    }
}
