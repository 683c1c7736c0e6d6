//! Mask-based multichannel beamforming.
//!
//! Time-frequency masks are turned into per-frequency spatial covariance
//! matrices, from which MVDR, GEV and multichannel Wiener filters are built.
//! The [`loss`] module provides the phase-sensitive baseline loss and two
//! multichannel Itakura-Saito losses that score those covariances directly,
//! with gradients for training a mask estimator.

pub mod beamformer;
pub mod binfmt;
pub mod error;
pub mod estimator;
pub mod hermitian;
pub mod loss;
pub mod mask_cov;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod signal_io;
pub mod stft;

pub use beamformer::{BeamformerBank, BeamformerKind, TimeVaryingFilter};
pub use error::{Error, Result};
pub use estimator::{EstimatorModel, ModelSpec, TrainConfig};
pub use hermitian::{CMatrix, ComplexVector, HermitianMatrix};
pub use loss::{LossGradient, LossKind, LossValue, ModelOutputs, Permutation};
pub use mask_cov::{ActivationTensor, CovarianceSet, FeatureTensor, MaskTensor};
pub use metrics::MetricReport;
pub use pipeline::{Method, PipelineConfig, SceneResult};
pub use scene::{Scene, SceneConfig};
pub use signal_io::{Waveform, WavEncoding};
pub use stft::{ComplexSpectrogram, StftConfig, Window};

pub use num_complex::Complex64;
