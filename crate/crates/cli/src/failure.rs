use std::fmt;

/// Validation problems exit with 1, everything that goes wrong after the
/// inputs were accepted exits with 2.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(e) => write!(f, "invalid input: {e:#}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(anyhow::anyhow!(msg.into()))
}

/// Runtime error to validation error, for checks on user input that the
/// library performs.
pub trait OrInvalid<T> {
    fn or_invalid(self, what: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrInvalid<T> for Result<T, E> {
    fn or_invalid(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into().context(what.to_string())))
    }
}
