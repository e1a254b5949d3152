use thiserror::Error;

use crate::chain::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rate model: {0}")]
    InvalidModel(Violation),

    #[error("state index {state} out of range for a {num_states}-state chain")]
    StateOutOfRange { state: usize, num_states: usize },

    #[error("time {time} outside [{lower}, {upper}]")]
    TimeOutOfRange { time: f64, lower: f64, upper: f64 },

    #[error("time {0} is not a grid point")]
    OffGrid(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value produced at t = {time} (state {state})")]
    NonFinite { time: f64, state: usize },

    #[error("path is inconsistent with the model: {0}")]
    InconsistentPath(String),

    #[error("jump update I + a psi+ (e_j - x) g* is singular at piece {piece}, state {state}, target {target} (det = {det:e})")]
    NotInvertible {
        piece: usize,
        state: usize,
        target: usize,
        det: f64,
    },

    #[error("driver flags do not hold: {0}")]
    DriverFlags(String),

    #[error("property hypothesis not met: {0}")]
    Hypothesis(String),

    #[error("terminal-condition sampler exhausted after {0} samples")]
    SamplerExhausted(usize),

    #[error("event is empty")]
    EmptyEvent,

    #[error("model shape not supported here: {0}")]
    ModelShape(String),
}
