use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("invalid scenario parameter: {0}")]
    Scenario(String),

    #[error("point {point:?} outside domain on axis {axis}")]
    OutOfDomain { point: Vec<f64>, axis: usize },

    #[error("non-finite field value at {point:?} (t = {time})")]
    NonFinite { point: Vec<f64>, time: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid measure: {0}")]
    Measure(String),

    #[error("problem hypotheses violated: {0}")]
    Hypotheses(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}
