use std::path::Path;

use sfm_core::SfmError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or flag combinations.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Core(#[from] SfmError),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Run(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) | CliError::Core(_) => 1,
        }
    }
}

/// Config validation failures come from flags, so they are usage errors.
pub fn usage(e: SfmError) -> CliError {
    CliError::Usage(e.to_string())
}
