use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Numerical(#[from] torus_clt::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for module failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}
