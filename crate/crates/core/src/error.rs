use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("plaintext overflow: magnitude bound {bound} does not fit below N/2")]
    PlaintextOverflow { bound: String },

    #[error("ciphertext was produced under a different key")]
    WrongKey,

    #[error("weight decomposition has no factor for {from}->{to}")]
    IncompleteDecomposition { from: usize, to: usize },

    #[error("topology is not connected")]
    Disconnected,

    #[error("value {value} outside admissible range: {reason}")]
    OutOfRange { value: f64, reason: String },

    #[error("linear system is rank deficient")]
    RankDeficient,

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("degenerate stepsize at iteration {k}")]
    DegenerateStepsize { k: usize },

    #[error("agent {agent} exceeded the state clamp at iteration {k} (|Q(x)| = {magnitude} > {clamp})")]
    StateClamp {
        agent: usize,
        k: usize,
        magnitude: f64,
        clamp: i64,
    },

    #[error("trial {trial} aborted: {source}")]
    TrialAborted {
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
