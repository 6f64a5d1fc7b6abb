use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("metric is not Lorentzian at node {node} (g00 = {g00}, min eigenvalue of g^ij = {min_eig})")]
    NonLorentzian { node: usize, g00: f64, min_eig: f64 },

    #[error("incoming null contraction is undefined at the spatial origin")]
    DegeneratePoint,

    #[error("annulus of radius {radius} needs radius + 2 < half extent {half_extent}")]
    AnnulusOutOfDomain { radius: f64, half_extent: f64 },

    #[error("solution blew up at step {step} (t = {t}): norm {norm:e}")]
    Instability { step: usize, t: f64, norm: f64 },

    #[error("waves would wrap the periodic box: need half extent >= {required}, have {half_extent}")]
    WrapExclusion { required: f64, half_extent: f64 },

    #[error("initial energy is zero")]
    ZeroInitialEnergy,

    #[error("bound overflows f64: log(bound) = {log_bound}")]
    Overflow { log_bound: f64 },

    #[error("kernel radius {radius} exceeds the admissible limit {limit}")]
    KernelTooLarge { radius: f64, limit: f64 },

    #[error("trajectory lasts {available} but {required} is needed")]
    DurationTooShort { required: f64, available: f64 },

    #[error("checksum mismatch in {path}")]
    ChecksumMismatch { path: PathBuf },

    #[error("time {t} is not aligned with the stored snapshots")]
    Misaligned { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures map to exit status 2 in the CLI, everything else to 1.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Instability { .. } | Error::Overflow { .. } | Error::NonLorentzian { .. }
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
