use std::io;

use thiserror::Error;

/// Errors produced by the beamforming toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sample out of range [-1, 1]: {0}")]
    Clipped(f64),

    #[error("sample rate {found} Hz not supported here (expected {expected} Hz)")]
    SampleRate { expected: u32, found: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate target covariance (trace magnitude {0:e})")]
    DegenerateTarget(f64),

    #[error("permutation search supports at most 4 sources, got {0}")]
    TooManySources(usize),

    #[error("silent reference signal for source {0}")]
    SilentReference(usize),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("incompatible combination: {0}")]
    Incompatible(String),

    #[error("bad binary format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
