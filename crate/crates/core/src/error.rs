use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate bone: parent and child coincide (|d| = {length:e} m)")]
    DegenerateBone { length: f64 },

    #[error("skeleton topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("inverse kinematics did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        best: Box<crate::kinematics::IkSolution>,
    },

    #[error("sequence too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("task has {0} trajectories; at least 2 are required for a support/query split")]
    TooFewTrajectories(usize),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("normalization scale must be positive and finite, got {0}")]
    ZeroScale(f64),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value detected {0}")]
    NaNDetected(String),

    #[error("inertia must be positive, got {0}")]
    NonPositiveInertia(f64),

    #[error("simulation diverged at t = {t:.4} s (|qd_r| = {velocity:.3} rad/s)")]
    Divergence { t: f64, velocity: f64 },

    #[error("Lyapunov check failed at sample {sample}: {reason}")]
    LyapunovViolation { sample: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
