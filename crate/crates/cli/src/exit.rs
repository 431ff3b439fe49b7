use std::fmt;

use mmcl::MmclError;

pub const CONFIG: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERIC: u8 = 3;

/// A failed command: the process exit code and the message for stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Default code for a library error raised outside any loading step.
pub fn code_of(e: &MmclError) -> u8 {
    match e {
        MmclError::Config(_) | MmclError::Checkpoint(_) | MmclError::Json(_) => CONFIG,
        MmclError::Data(_) | MmclError::Format(_) | MmclError::Io { .. } => DATA,
        MmclError::NonFinite(_) | MmclError::NotScalar(_) => NUMERIC,
        MmclError::Shape { .. } | MmclError::Invalid(_) => CONFIG,
    }
}

impl From<MmclError> for CliError {
    fn from(e: MmclError) -> Self {
        CliError::new(code_of(&e), e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags every error from a loading step with one fixed code.
pub trait Stage<T> {
    fn stage(self, code: u8, what: &str) -> CliResult<T>;
}

impl<T, E: fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, code: u8, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::new(code, format!("{what}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_documented_codes() {
        assert_eq!(code_of(&MmclError::Config("x".into())), 1);
        assert_eq!(code_of(&MmclError::Checkpoint("x".into())), 1);
        assert_eq!(code_of(&MmclError::Data("x".into())), 2);
        assert_eq!(code_of(&MmclError::NonFinite("x".into())), 3);
    }

    #[test]
    fn stage_overrides_the_code() {
        let r: Result<(), MmclError> = Err(MmclError::NonFinite("x".into()));
        assert_eq!(r.stage(DATA, "loading").unwrap_err().code, DATA);
    }
}
