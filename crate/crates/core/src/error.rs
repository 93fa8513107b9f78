use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "scaling undefined for sigma_c = 0: the threshold-free model is only scaled by T0 and L, \
         use the zero-threshold (Maxwell) path instead"
    )]
    ScalingUndefined,

    #[error("initial data rejected: {0}")]
    Validation(String),

    #[error("advection CFL violated: courant number {courant:.6} + relaxation {relaxation:.6} > 1 (dt = {dt}); sub-cycle the step")]
    Cfl { courant: f64, relaxation: f64, dt: f64 },

    #[error("scheme instability: density {value:e} at sigma cell {cell} before clipping")]
    Instability { cell: usize, value: f64 },

    #[error("a priori bound violated: {0}")]
    BoundViolation(String),

    #[error(
        "Picard iteration did not converge in {iterations} iterations at t = {t} \
         (last relative change {last_change:e}, contraction ratio {ratio:.4}); reduce dt"
    )]
    NonContraction {
        t: f64,
        iterations: usize,
        last_change: f64,
        ratio: f64,
    },

    #[error("hard diagnostic failure: {0}")]
    Diagnostic(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("malformed data in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
