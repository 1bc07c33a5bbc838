use thiserror::Error;

/// Failures that stop an experiment before verdicts exist (exit code 2).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: stochrkhs::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<stochrkhs::Error> for CliError {
    fn from(source: stochrkhs::Error) -> Self {
        CliError::Core { context: "numerical core".into(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the module that raised an upstream error.
pub(crate) trait Context<T> {
    fn context(self, what: &str) -> CliResult<T>;
}

impl<T> Context<T> for stochrkhs::Result<T> {
    fn context(self, what: &str) -> CliResult<T> {
        self.map_err(|source| CliError::Core { context: what.to_string(), source })
    }
}
