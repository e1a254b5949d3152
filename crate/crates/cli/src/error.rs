use chainbsde::Error;
use thiserror::Error as ThisError;

use crate::config::describe;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Io(_) | CliError::Runtime(_) => 1,
        }
    }
}

/// Library errors with states, pieces and targets numbered from 1.
fn render(e: &Error) -> String {
    match e {
        Error::InvalidModel(v) => format!("invalid rate model: {}", describe(v)),
        Error::StateOutOfRange { state, num_states } => {
            format!("state {} is not in 1..={num_states}", state + 1)
        }
        Error::NonFinite { time, state } => {
            format!("non-finite value produced at t = {time} (state {})", state + 1)
        }
        Error::NotInvertible {
            piece,
            state,
            target,
            det,
        } => format!(
            "jump update I + a psi+ (e_j - x) g* is singular at piece {}, state {}, target {} (det = {det:e})",
            piece + 1,
            state + 1,
            target + 1
        ),
        other => other.to_string(),
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = render(&e);
        match e {
            Error::InvalidModel(_)
            | Error::StateOutOfRange { .. }
            | Error::TimeOutOfRange { .. }
            | Error::OffGrid(_)
            | Error::Dimension { .. }
            | Error::InvalidParameter { .. } => CliError::Config(msg),
            Error::NotInvertible { .. }
            | Error::DriverFlags(_)
            | Error::Hypothesis(_)
            | Error::SamplerExhausted(_)
            | Error::EmptyEvent
            | Error::ModelShape(_) => CliError::Precondition(msg),
            Error::NonFinite { .. } | Error::InconsistentPath(_) => CliError::Runtime(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
