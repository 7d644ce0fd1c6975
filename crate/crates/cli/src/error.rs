use std::path::Path;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable inputs, malformed files, invalid parameters.
    #[error("{0}")]
    Validation(String),
    /// Anything that fails after the inputs were accepted.
    #[error("{0}")]
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }

    /// Wraps a core error, prefixing the flag or file it came from.
    pub fn core(context: &str, err: espo_core::Error) -> Self {
        use espo_core::Error as E;
        let message = format!("{context}: {err}");
        match err {
            E::InvalidCmdp(_)
            | E::ShapeMismatch { .. }
            | E::InvalidParameter { .. }
            | E::BudgetTooSmall { .. }
            | E::Parse(_)
            | E::MismatchedRuns => CliError::Validation(message),
            _ => CliError::Runtime(message),
        }
    }
}

pub fn read_input(flag: &str, path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{flag}: cannot read `{}`: {e}", path.display())))
}

pub fn write_output(flag: &str, path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{flag}: cannot create `{}`: {e}", dir.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("{flag}: cannot write `{}`: {e}", path.display())))
}
