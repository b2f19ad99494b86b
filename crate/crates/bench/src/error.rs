use std::path::PathBuf;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] raqr::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

impl BenchError {
    /// 2 for bad input (flags, config files, incompatible checkpoints), 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use raqr::Error as E;
        match self {
            BenchError::Config(_) => EXIT_CONFIG,
            BenchError::Core(
                E::InvalidConfig(_)
                | E::Incompatible(_)
                | E::InvalidArgument { .. }
                | E::UnderdeterminedPilots { .. }
                | E::Format { .. },
            ) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}
