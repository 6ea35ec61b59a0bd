use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] ionlock::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{0}")]
    NonConvergence(String),

    #[error("self-test failed: {0}")]
    Selftest(String),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for bad input, 2 for numerical failure, 3 for non-convergence.
    pub fn exit_code(&self) -> i32 {
        use ionlock::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::InvalidParameter { .. }
                | E::Resonance { .. }
                | E::Schema(_)
                | E::Io(_)
                | E::Json(_)
                | E::Csv(_) => 1,
                E::NonConvergence(_) => 3,
                _ => 2,
            },
            CliError::NonConvergence(_) => 3,
            CliError::Selftest(_) => 2,
        }
    }
}
