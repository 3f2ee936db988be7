use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Solver(_) | CliError::Io(_) => 4,
        })
    }
}

impl From<pqlearn::Error> for CliError {
    fn from(e: pqlearn::Error) -> Self {
        use pqlearn::Error as E;
        let mut root = &e;
        while let E::Stage { source, .. } | E::Bootstrap { source, .. } = root {
            root = source;
        }
        match root {
            E::InvalidArgument(_) => CliError::Config(e.to_string()),
            E::SubjectDimension { .. } | E::Dimension { .. } | E::Report(_) => CliError::Data(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
