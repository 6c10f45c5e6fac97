use std::path::PathBuf;

/// Exit code 2: the run was refused before computing anything useful.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code 3: the run finished but its check failed.
pub const EXIT_CHECK: i32 = 3;
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Check(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] pmp_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Parse { .. } => EXIT_CONFIG,
            Self::Check(_) => EXIT_CHECK,
            Self::Io { .. } => EXIT_RUNTIME,
            Self::Core(e) => core_exit_code(e),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn core_exit_code(e: &pmp_core::Error) -> i32 {
    use pmp_core::Error as E;
    match e {
        E::InvalidArgument(_) | E::InvalidProblem(_) | E::DimensionMismatch { .. } | E::GridMismatch { .. } => EXIT_CONFIG,
        E::Iteration { source, .. } => core_exit_code(source),
        E::NonFinite(_) => EXIT_RUNTIME,
    }
}
