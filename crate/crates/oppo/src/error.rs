use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("row not stochastic: step {h}, state {s}, action {a} sums to {sum}")]
    RowNotStochastic { h: usize, s: usize, a: usize, sum: f64 },

    #[error("negative transition probability {value} at step {h}, state {s}, action {a}")]
    NegativeProbability { h: usize, s: usize, a: usize, value: f64 },

    #[error("invalid linear MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid hyperparameter: {0}")]
    Hyper(String),

    #[error("unknown {what} kind `{name}`")]
    UnknownKind { what: &'static str, name: String },

    #[error("reward {value} outside [0, 1] at step {h}, state {s}, action {a}")]
    RewardRange { h: usize, s: usize, a: usize, value: f64 },

    #[error("out-of-order episode: expected {expected}, got {got}")]
    EpisodeOrder { expected: usize, got: usize },

    #[error("covariance lost positive definiteness at step {0}")]
    NotPositiveDefinite(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("not enough points for a fit: {0} usable, need 3")]
    TooFewPoints(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
