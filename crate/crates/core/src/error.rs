use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {}x{}, right is {}x{}", .left.0, .left.1, .right.0, .right.1)]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("svd did not converge after {sweeps} sweeps (input {rows}x{cols}, column-norm ratio {condition:e})")]
    NoConvergence {
        sweeps: usize,
        rows: usize,
        cols: usize,
        condition: f64,
    },

    #[error("rank-deficient input: smallest singular value {smallest:e} vs largest {largest:e}")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate scalar alignment: coefficient {c:e} is too close to zero")]
    DegenerateAlignment { c: f64 },

    #[error("alignment gain undefined: reference dispersion is zero")]
    UndefinedGain,

    #[error("protocol error: expected {expected} client reports, got {got}")]
    Protocol { expected: usize, got: usize },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("client {client} diverged in round {round} at step {step} (loss {loss:e})")]
    Divergence {
        client: usize,
        round: usize,
        step: usize,
        loss: f64,
    },

    #[error("cannot estimate {quantity}: {reason}")]
    Estimation { quantity: &'static str, reason: String },

    #[error("dataset io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
