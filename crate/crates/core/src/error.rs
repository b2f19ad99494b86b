use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{pilots} pilot slots cannot resolve {users} users (need P >= K)")]
    UnderdeterminedPilots { pilots: usize, users: usize },

    #[error("transposed pilot matrix is rank deficient (rank {rank}, need {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("noiseless channel has zero signal power; SNR is undefined")]
    ZeroSignalPower,

    #[error("reference channel has zero Frobenius norm; NMSE is undefined")]
    ZeroReference,

    #[error("EM-GS needs a positive noise variance; use gs_solve for the noiseless (R = 1) limit")]
    ZeroNoiseVariance,

    #[error("solver diverged: non-finite values at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("backward needs a scalar loss, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("incompatible model: {0}")]
    Incompatible(String),

    #[error("malformed container {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}
