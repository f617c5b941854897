//! Magnitude spectrograms: power-law compression, per-speaker statistics,
//! normalization, and noisy-phase waveform reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

use super::stft::{istft, ComplexSpectrogram, StftConfig};
use super::wave::Waveform;

/// Standard-deviation floor for dead frequency bins.
pub const STD_FLOOR: f64 = 1e-8;

/// T x d nonnegative real grid with domain flags tracking whether power-law
/// compression and per-speaker normalization have been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct MagSpectrogram<T> {
    grid: Grid<T>,
    compressed: bool,
    normalized: bool,
}

impl<T: Scalar> MagSpectrogram<T> {
    /// Wraps a linear-domain magnitude grid (no compression, no normalization).
    pub fn linear(grid: Grid<T>) -> Self {
        MagSpectrogram {
            grid,
            compressed: false,
            normalized: false,
        }
    }

    /// Wraps a grid with explicit domain flags.
    pub fn with_flags(grid: Grid<T>, compressed: bool, normalized: bool) -> Self {
        MagSpectrogram {
            grid,
            compressed,
            normalized,
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut Grid<T> {
        &mut self.grid
    }

    pub fn into_grid(self) -> Grid<T> {
        self.grid
    }

    pub fn compressed(&self) -> bool {
        self.compressed
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn frames(&self) -> usize {
        self.grid.rows()
    }

    pub fn bins(&self) -> usize {
        self.grid.cols()
    }

    /// Entrywise `x^p` with 0 < p <= 1; requires nonnegative entries.
    pub fn power_compress(&self, p: T) -> Result<MagSpectrogram<T>> {
        check_exponent(p)?;
        if self.normalized {
            return Err(CoreError::InvalidArgument(
                "cannot compress a normalized spectrogram".into(),
            ));
        }
        let mut data = Vec::with_capacity(self.grid.len());
        for &x in self.grid.as_slice() {
            if x < T::zero() {
                return Err(CoreError::InvalidArgument(
                    "negative entry in magnitude spectrogram".into(),
                ));
            }
            data.push(x.powf(p));
        }
        Ok(MagSpectrogram {
            grid: Grid::from_vec(self.grid.rows(), self.grid.cols(), data),
            compressed: true,
            normalized: false,
        })
    }

    /// Inverse of [`power_compress`]: entrywise `x^(1/p)`.
    pub fn power_expand(&self, p: T) -> Result<MagSpectrogram<T>> {
        check_exponent(p)?;
        if self.normalized {
            return Err(CoreError::InvalidArgument(
                "cannot expand a normalized spectrogram".into(),
            ));
        }
        let inv = T::one() / p;
        let mut data = Vec::with_capacity(self.grid.len());
        for &x in self.grid.as_slice() {
            if x < T::zero() {
                return Err(CoreError::InvalidArgument(
                    "negative entry in magnitude spectrogram".into(),
                ));
            }
            data.push(x.powf(inv));
        }
        Ok(MagSpectrogram {
            grid: Grid::from_vec(self.grid.rows(), self.grid.cols(), data),
            compressed: false,
            normalized: false,
        })
    }

    /// Per-bin z-scoring with the given speaker statistics.
    pub fn normalize(&self, stats: &SpeakerStats<T>) -> Result<MagSpectrogram<T>> {
        if !self.compressed {
            return Err(CoreError::InvalidArgument(
                "normalize expects a compressed spectrogram".into(),
            ));
        }
        if self.normalized {
            return Err(CoreError::InvalidArgument(
                "spectrogram is already normalized".into(),
            ));
        }
        if self.bins() != stats.bins() {
            return Err(CoreError::dims("normalize bins", self.bins(), stats.bins()));
        }
        let floor = T::from_f64_lossy(STD_FLOOR);
        let mut grid = self.grid.clone();
        for r in 0..grid.rows() {
            let row = grid.row_mut(r);
            for (f, v) in row.iter_mut().enumerate() {
                *v = (*v - stats.mean[f]) / stats.std[f].max(floor);
            }
        }
        Ok(MagSpectrogram {
            grid,
            compressed: true,
            normalized: true,
        })
    }

    /// Inverse of [`normalize`].
    pub fn denormalize(&self, stats: &SpeakerStats<T>) -> Result<MagSpectrogram<T>> {
        if !self.normalized {
            return Err(CoreError::InvalidArgument(
                "spectrogram is not normalized".into(),
            ));
        }
        if self.bins() != stats.bins() {
            return Err(CoreError::dims(
                "denormalize bins",
                self.bins(),
                stats.bins(),
            ));
        }
        let floor = T::from_f64_lossy(STD_FLOOR);
        let mut grid = self.grid.clone();
        for r in 0..grid.rows() {
            let row = grid.row_mut(r);
            for (f, v) in row.iter_mut().enumerate() {
                *v = *v * stats.std[f].max(floor) + stats.mean[f];
            }
        }
        Ok(MagSpectrogram {
            grid,
            compressed: true,
            normalized: false,
        })
    }
}

fn check_exponent<T: Scalar>(p: T) -> Result<()> {
    if p > T::zero() && p <= T::one() {
        Ok(())
    } else {
        Err(CoreError::InvalidArgument(format!(
            "compression exponent must be in (0, 1], got {p}"
        )))
    }
}

/// Per-frequency-bin mean and population standard deviation pooled over
/// all frames a speaker produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + serde::de::DeserializeOwned")]
pub struct SpeakerStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub n_frames: usize,
}

impl<T: Scalar> SpeakerStats<T> {
    pub fn bins(&self) -> usize {
        self.mean.len()
    }
}

/// Pooled per-bin statistics over all frames of all input spectrograms.
/// Uses the population (biased) standard deviation.
pub fn compute_speaker_stats<T: Scalar>(
    specs: &[MagSpectrogram<T>],
) -> Result<SpeakerStats<T>> {
    let first = specs
        .first()
        .ok_or_else(|| CoreError::InvalidArgument("empty spectrogram list".into()))?;
    let bins = first.bins();
    let mut n_frames = 0usize;
    for s in specs {
        if s.bins() != bins {
            return Err(CoreError::dims("speaker stats bins", s.bins(), bins));
        }
        n_frames += s.frames();
    }
    if n_frames == 0 {
        return Err(CoreError::InvalidArgument(
            "no frames in spectrogram list".into(),
        ));
    }

    let count = T::from_usize_lossy(n_frames);
    let mut mean = vec![T::zero(); bins];
    for s in specs {
        for row in s.grid().iter_rows() {
            for (f, &v) in row.iter().enumerate() {
                mean[f] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }

    let mut var = vec![T::zero(); bins];
    for s in specs {
        for row in s.grid().iter_rows() {
            for (f, &v) in row.iter().enumerate() {
                let d = v - mean[f];
                var[f] += d * d;
            }
        }
    }
    let std = var.iter().map(|&v| (v / count).sqrt()).collect();

    Ok(SpeakerStats {
        mean,
        std,
        n_frames,
    })
}

/// Rebuilds a waveform from an estimated linear magnitude and the phase of
/// the noisy mixture.
pub fn reconstruct_with_noisy_phase<T: Scalar>(
    est_mag: &MagSpectrogram<T>,
    noisy: &ComplexSpectrogram<T>,
    cfg: &StftConfig,
) -> Result<Waveform<T>> {
    if est_mag.compressed() || est_mag.normalized() {
        return Err(CoreError::InvalidArgument(
            "estimated magnitude must be linear (expanded and denormalized)".into(),
        ));
    }
    noisy
        .grid()
        .check_same_shape(est_mag.grid(), "reconstruct dims")?;
    let spec = noisy.with_magnitude(est_mag.grid())?;
    istft(&spec, cfg)
}
