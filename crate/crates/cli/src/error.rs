use std::io::ErrorKind;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] eventdepth::Error),
    #[error(transparent)]
    Nn(#[from] eventdepth_nn::NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

fn io_code(e: &std::io::Error) -> i32 {
    match e.kind() {
        ErrorKind::NotFound | ErrorKind::InvalidData | ErrorKind::UnexpectedEof => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use eventdepth::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Json(_) => EXIT_DATA,
            CliError::Io { source, .. } => io_code(source),
            CliError::Nn(e) => nn_code(e),
            CliError::Core(e) => match e {
                E::Config(_) => EXIT_CONFIG,
                E::Range(_) | E::Geometry(_) | E::Parse { .. } | E::Data(_) | E::Json(_) => EXIT_DATA,
                E::Io(io) => io_code(io),
                E::Nn(nn) => nn_code(nn),
                E::Overflow { .. } | E::State(_) => EXIT_RUNTIME,
            },
        }
    }
}

fn nn_code(e: &eventdepth_nn::NnError) -> i32 {
    use eventdepth_nn::NnError as N;
    match e {
        N::Format { .. } => EXIT_DATA,
        N::Io(io) => io_code(io),
        _ => EXIT_RUNTIME,
    }
}
