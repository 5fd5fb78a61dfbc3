use thiserror::Error;

/// Topology and data problems found while assembling a [`crate::network::Feeder`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeederError {
    #[error("duplicate bus id {0}")]
    DuplicateId(u32),
    #[error("line {from}-{to} references unknown bus {missing}")]
    UnknownBus { from: u32, to: u32, missing: u32 },
    #[error("slack bus {0} is not listed among the buses")]
    MissingSlack(u32),
    #[error("cycle detected at line {from}-{to}")]
    CycleDetected { from: u32, to: u32 },
    #[error("bus {0} is not connected to the slack bus")]
    Disconnected(u32),
    #[error("line {from}-{to} has non-positive impedance (r = {r}, x = {x})")]
    NonPositiveImpedance { from: u32, to: u32, r: f64, x: f64 },
    #[error("slack bus {0} must not carry load, generation or an inverter")]
    SlackInjection(u32),
    #[error("inverter at bus {bus}: {reason}")]
    InvalidInverter { bus: u32, reason: String },
    #[error("invalid control curve: {0}")]
    InvalidCurve(String),
    #[error("bus {0} has non-positive nominal voltage")]
    InvalidNominalVoltage(u32),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("DistFlow sweep did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("squared voltage at bus {bus} became non-positive ({value})")]
    NegativeSquaredVoltage { bus: u32, value: f64 },
    #[error("the slack bus must have exactly one child for this operation (found {0})")]
    RootDegreeNotOne(usize),
    #[error("no convergence within {0} iterations")]
    MaxIterations(usize),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(
        "inverter at bus {0} has no control curve (pass --alpha or add a curve to the feeder file)"
    )]
    MissingCurve(u32),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
