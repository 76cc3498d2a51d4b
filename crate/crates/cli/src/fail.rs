//! Process exit codes.

use wayfind::world::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Code {
    Runtime = 1,
    Usage = 2,
    Parse = 3,
    Scenario = 4,
    Backend = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub source: anyhow::Error,
}

impl Failure {
    pub fn new(code: Code, source: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            source: source.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(source: anyhow::Error) -> Self {
        Self::new(Code::Runtime, source)
    }
}

impl From<std::io::Error> for Failure {
    fn from(source: std::io::Error) -> Self {
        Self::new(Code::Runtime, source)
    }
}

/// Malformed documents are parse failures; well-formed but impossible
/// worlds are scenario failures.
pub fn scenario_failure(err: WorldError) -> Failure {
    let code = match err {
        WorldError::Parse { .. } => Code::Parse,
        _ => Code::Scenario,
    };
    Failure::new(code, err)
}

pub type Outcome = Result<(), Failure>;
