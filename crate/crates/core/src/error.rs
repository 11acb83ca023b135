use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("inadmissible kappa {kappa}: {reason}")]
    InadmissibleKappa { kappa: f64, reason: String },

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("non-finite evaluation ({what}) at state {state:?}")]
    Evaluation { state: Vec<f64>, what: String },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
