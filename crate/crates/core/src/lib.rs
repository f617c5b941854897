//! Audio-visual speech enhancement by time-frequency masking.
//!
//! The library covers the full desk-scale pipeline: deterministic signal
//! transforms (resampling, STFT/ISTFT, power-law compression, per-speaker
//! normalization), oracle mask computation (target binary masks from LTASS
//! thresholds, clipped amplitude masks), face-landmark motion features,
//! mixture construction with speaker-disjoint splits, BLSTM mask estimators
//! trained from scratch with exact backpropagation through time, and
//! SDR-based evaluation.
//!
//! All numeric kernels are generic over the scalar type via [`Scalar`]
//! (`f32` or `f64`); the concrete aliases below fix `f64` as the pipeline
//! default.

pub mod dsp;
pub mod error;
pub mod eval;
pub mod grid;
pub mod landmarks;
pub mod mask;
pub mod mixture;
pub mod neural;
pub mod scalar;
pub mod seeds;
pub mod trainer;

pub use error::CoreError;
pub use scalar::Scalar;

/// Scalar type used by the command-line pipeline.
pub type PipelineFloat = f64;

/// Concrete aliases for the pipeline scalar type.
pub type Waveform = dsp::Waveform<PipelineFloat>;
pub type ComplexSpectrogram = dsp::ComplexSpectrogram<PipelineFloat>;
pub type MagSpectrogram = dsp::MagSpectrogram<PipelineFloat>;
pub type SpeakerStats = dsp::SpeakerStats<PipelineFloat>;
pub type LtassThreshold = mask::LtassThreshold<PipelineFloat>;
pub type AmplitudeMask = mask::AmplitudeMask<PipelineFloat>;
pub type LandmarkTrack = landmarks::LandmarkTrack<PipelineFloat>;
pub type FeatureSeq = landmarks::FeatureSeq<PipelineFloat>;
pub type FeatureStats = landmarks::FeatureStats<PipelineFloat>;
pub type ModelGraph = neural::ModelGraph<PipelineFloat>;
pub type SdrReport = eval::SdrReport<PipelineFloat>;
