use auction_uh::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_IDENTIFICATION: u8 = 4;

/// An error message with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn identification(message: impl Into<String>) -> Self {
        Self { code: EXIT_IDENTIFICATION, message: message.into() }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_)
        | Error::Index(_)
        | Error::Domain(_)
        | Error::Config(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => EXIT_CONFIG,
        Error::AmbiguousDecomposition { .. }
        | Error::Conditioning { .. }
        | Error::CutoffPlacement(_)
        | Error::OrderingAmbiguity(..)
        | Error::DecompositionQuality(_) => EXIT_IDENTIFICATION,
        Error::DegenerateSupport(_)
        | Error::DegenerateConditioning { .. }
        | Error::Numeric { .. }
        | Error::Estimation(_)
        | Error::NonUniqueQuantile { .. }
        | Error::DerivativeBlowup { .. } => EXIT_NUMERIC,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_by_family() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Estimation("x".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::CutoffPlacement("x".into())), EXIT_IDENTIFICATION);
    }
}
