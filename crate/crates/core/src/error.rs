use thiserror::Error;

use crate::model::{Action, State};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("retransmission count {r} exceeds r_max = {r_max}")]
    InadmissibleQuery { r: u32, r_max: u32 },

    #[error("state ({}, {}) is outside the admissible state set", .0.delta, .0.r)]
    InadmissibleState(State),

    #[error("action {action:?} is not admissible in state ({}, {})", .state.delta, .state.r)]
    InadmissibleAction { state: State, action: Action },

    #[error("relative value iteration did not converge in {iterations} sweeps (residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("policy never transmits from some reachable state: age drifts without bound")]
    NoStationaryAoi,

    #[error("stationary distribution residual {0:e} above tolerance")]
    StationaryResidual(f64),

    #[error("bracketing violation: c_max = {c_max} not in [{c_high}, {c_low}]")]
    Bracketing { c_low: f64, c_high: f64, c_max: f64 },

    #[error("multiplier search failed after {} steps without bracketing C_max", .trace.len())]
    SearchFailure { trace: Vec<(f64, f64)> },

    #[error("protocol violation at slot {slot}: {action:?} in state ({}, {})", .state.delta, .state.r)]
    ProtocolViolation { slot: u64, state: State, action: Action },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
