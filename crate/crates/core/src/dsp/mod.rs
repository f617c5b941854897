//! Deterministic signal transforms: resampling, STFT/ISTFT, power-law
//! compression, normalization statistics, and noisy-phase reconstruction.

mod spec;
mod stft;
mod wave;

pub use spec::{
    compute_speaker_stats, reconstruct_with_noisy_phase, MagSpectrogram, SpeakerStats,
};
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, WindowKind};
pub use wave::{read_wav, resample, wav_duration_secs, write_wav, Waveform};
