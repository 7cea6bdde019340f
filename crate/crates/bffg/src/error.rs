//! Error type shared by every module of the engine.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("graph contains a cycle through vertex {0}")]
    CycleDetected(u64),
    #[error("vertex {0} has no kernel attached")]
    MissingKernel(u64),
    #[error("vertex {0} is latent but carries an observation")]
    ObservationOnLatent(u64),
    #[error("state space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("no closed-form rule for kernel `{kernel}` with h-function `{hfun}`")]
    UnsupportedPair {
        kernel: &'static str,
        hfun: &'static str,
    },
    #[error("pullback is singular: {0}")]
    SingularPullback(String),
    #[error("message denominator vanishes at the current state")]
    ZeroDenominator,
    #[error("guided transition carries no mass at the current state")]
    ImpossibleState,
    #[error("h-functions tagged `{0}` cannot be fused")]
    UnsupportedFusion(&'static str),
    #[error("no closed-form marginalisation for `{0}`")]
    UnsupportedTag(&'static str),

    #[error("covariance Q is not positive definite")]
    SingularQ,
    #[error("precision H is singular")]
    SingularH,
    #[error("matrix C = Q + H^-1 is singular")]
    SingularC,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("h vector vanished identically")]
    ZeroVector,

    #[error("state {state} is not below the target {target}")]
    StateBeyondTarget { state: f64, target: f64 },

    #[error("time {t} is not before the horizon {horizon}")]
    PastHorizon { t: f64, horizon: f64 },
    #[error("thinning bound {bound} exceeded by rate {rate}")]
    BoundExceeded { rate: f64, bound: f64 },
    #[error("guided process entered a state where h vanishes")]
    ZeroH,

    #[error("all importance weights are zero")]
    AllWeightsZero,

    #[error("enumeration would visit {0} paths")]
    TooLarge(u128),
    #[error("covariance matrix is singular")]
    SingularCovariance,
    #[error("rejection acceptance rate {0} is too low")]
    AcceptanceTooLow(f64),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("parse failure: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures that mean "this proposal has zero target density"
    /// rather than a bug or a configuration problem.
    pub fn is_zero_weight(&self) -> bool {
        matches!(
            self,
            Error::ZeroDenominator | Error::ImpossibleState | Error::ZeroH
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
