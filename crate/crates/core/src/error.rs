use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("displacement is zero; spring constant undefined")]
    ZeroDisplacement,

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("singular normal equations in fit")]
    DegenerateFit,

    #[error("target force {target_zn} zN is not reachable (asymptote {asymptote_zn} zN)")]
    UnreachableForce { target_zn: f64, asymptote_zn: f64 },

    #[error("width {width_nm} nm is below the model minimum {minimum_nm} nm")]
    OutOfModel { width_nm: f64, minimum_nm: f64 },

    #[error("ill-conditioned calibration: {0}")]
    IllConditioned(String),

    #[error("frame has no signal above background")]
    NoSignal,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("oracle unreliable: {failed} of {trials} fits failed")]
    OracleUnreliable { failed: usize, trials: usize },

    #[error("frame format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
