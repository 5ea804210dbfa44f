use thiserror::Error;

pub type Result<T, E = BirdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BirdError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("product space has {cardinality} complete assignments, above the cap of {cap}")]
    SpaceTooLarge { cardinality: u128, cap: u64 },

    #[error("probability {0} is outside the open interval (0, 1)")]
    Domain(f64),

    #[error("unknown factor `{0}`")]
    UnknownFactor(String),

    #[error("unknown value `{value}` for factor `{factor}`")]
    UnknownValue { factor: String, value: String },

    #[error("factor `{0}` is already observed")]
    AlreadyObserved(String),

    #[error("every factor is observed, nothing to ask")]
    NothingToAsk,

    #[error("conditions are not comparable: {0}")]
    NotComparable(String),

    #[error("no fixture recording for digest {0}")]
    FixtureMiss(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("malformed provider payload: {0}")]
    MalformedPayload(String),

    #[error("could not parse model output after {attempts} attempts: {message}")]
    Parse { attempts: usize, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("no bundle for scenario `{0}`")]
    MissingBundle(String),

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BirdError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        BirdError::Validation(msg.into())
    }
}
