//! Oracle time-frequency masks: target binary masks from LTASS thresholds
//! and clipped amplitude masks, plus mask application and a binary grid
//! cache format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::{MagSpectrogram, SpeakerStats};
use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Division guard: mixture cells below this magnitude are treated as an
/// unbounded ratio and take the clip value.
pub const IAM_EPS: f64 = 1e-8;

/// Default clip for amplitude masks.
pub const IAM_CLIP: f64 = 10.0;

/// Default LTASS multiplier.
pub const LTASS_ALPHA: f64 = 0.6;

/// Per-bin threshold tau[f] = mean[f] + alpha * std[f].
#[derive(Debug, Clone, PartialEq)]
pub struct LtassThreshold<T> {
    pub tau: Vec<T>,
    pub alpha: T,
    pub source_stats: SpeakerStats<T>,
}

impl<T: Scalar> LtassThreshold<T> {
    pub fn bins(&self) -> usize {
        self.tau.len()
    }
}

pub fn ltass_threshold<T: Scalar>(stats: &SpeakerStats<T>, alpha: T) -> LtassThreshold<T> {
    let tau = stats
        .mean
        .iter()
        .zip(&stats.std)
        .map(|(&m, &s)| m + alpha * s)
        .collect();
    LtassThreshold {
        tau,
        alpha,
        source_stats: stats.clone(),
    }
}

/// Binary T x d mask; every cell is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid<u8>,
}

impl BinaryMask {
    pub fn from_grid(grid: Grid<u8>) -> Self {
        debug_assert!(grid.as_slice().iter().all(|&v| v <= 1));
        BinaryMask { grid }
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.grid
    }

    pub fn frames(&self) -> usize {
        self.grid.rows()
    }

    pub fn bins(&self) -> usize {
        self.grid.cols()
    }

    /// Fraction of cells set to 1.
    pub fn density(&self) -> f64 {
        if self.grid.is_empty() {
            return 0.0;
        }
        let ones: usize = self.grid.as_slice().iter().map(|&v| v as usize).sum();
        ones as f64 / self.grid.len() as f64
    }

    pub fn to_scalar_grid<T: Scalar>(&self) -> Grid<T> {
        self.grid.map(|v| T::from_usize_lossy(v as usize))
    }
}

/// Amplitude T x d mask with entries in [0, clip].
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeMask<T> {
    grid: Grid<T>,
    clip: T,
}

impl<T: Scalar> AmplitudeMask<T> {
    pub fn from_grid(grid: Grid<T>, clip: T) -> Result<Self> {
        if grid
            .as_slice()
            .iter()
            .any(|&v| v < T::zero() || v > clip || !v.is_finite())
        {
            return Err(CoreError::InvalidArgument(
                "amplitude mask entry out of [0, clip]".into(),
            ));
        }
        Ok(AmplitudeMask { grid, clip })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn clip(&self) -> T {
        self.clip
    }

    pub fn frames(&self) -> usize {
        self.grid.rows()
    }

    pub fn bins(&self) -> usize {
        self.grid.cols()
    }
}

/// Target binary mask: cell (t, f) is 1 iff clean[t][f] >= tau[f].
/// Ties count as 1. The clean spectrogram must be in the same domain as
/// the statistics behind the threshold (compressed, un-normalized).
pub fn compute_tbm<T: Scalar>(
    clean: &MagSpectrogram<T>,
    thr: &LtassThreshold<T>,
) -> Result<BinaryMask> {
    if clean.bins() != thr.bins() {
        return Err(CoreError::dims("tbm bins", clean.bins(), thr.bins()));
    }
    if clean.normalized() {
        return Err(CoreError::InvalidArgument(
            "tbm expects an un-normalized spectrogram".into(),
        ));
    }
    let mut data = Vec::with_capacity(clean.grid().len());
    for row in clean.grid().iter_rows() {
        for (f, &v) in row.iter().enumerate() {
            data.push(u8::from(v >= thr.tau[f]));
        }
    }
    Ok(BinaryMask {
        grid: Grid::from_vec(clean.frames(), clean.bins(), data),
    })
}

/// Ideal amplitude mask: entrywise clean/noisy clamped to [0, clip].
/// Noisy cells below [`IAM_EPS`] take the clip value. Both spectrograms
/// must be compressed and un-normalized.
pub fn compute_iam<T: Scalar>(
    clean: &MagSpectrogram<T>,
    noisy: &MagSpectrogram<T>,
    clip: T,
) -> Result<AmplitudeMask<T>> {
    clean.grid().check_same_shape(noisy.grid(), "iam dims")?;
    if clip <= T::zero() {
        return Err(CoreError::InvalidArgument("clip must be positive".into()));
    }
    if clean.normalized() || noisy.normalized() {
        return Err(CoreError::InvalidArgument(
            "iam expects un-normalized spectrograms".into(),
        ));
    }
    let eps = T::from_f64_lossy(IAM_EPS);
    let grid = clean.grid().zip_map(noisy.grid(), |s, y| {
        if y.abs() < eps {
            clip
        } else {
            (s / y).max(T::zero()).min(clip)
        }
    });
    Ok(AmplitudeMask { grid, clip })
}

/// Entrywise product of a binary mask with a spectrogram; domain flags are
/// inherited from the spectrogram.
pub fn apply_binary_mask<T: Scalar>(
    mask: &BinaryMask,
    spec: &MagSpectrogram<T>,
) -> Result<MagSpectrogram<T>> {
    mask.grid().check_same_shape(spec.grid(), "apply mask dims")?;
    let grid = spec
        .grid()
        .zip_map(mask.grid(), |v, m| if m == 1 { v } else { T::zero() });
    Ok(MagSpectrogram::with_flags(
        grid,
        spec.compressed(),
        spec.normalized(),
    ))
}

/// Entrywise product of an amplitude mask with a spectrogram.
pub fn apply_amplitude_mask<T: Scalar>(
    mask: &AmplitudeMask<T>,
    spec: &MagSpectrogram<T>,
) -> Result<MagSpectrogram<T>> {
    mask.grid().check_same_shape(spec.grid(), "apply mask dims")?;
    let grid = spec.grid().zip_map(mask.grid(), |v, m| v * m);
    Ok(MagSpectrogram::with_flags(
        grid,
        spec.compressed(),
        spec.normalized(),
    ))
}

/// Applies an estimated mask grid (values from a network head) to a
/// spectrogram, without range checks beyond shape.
pub fn apply_mask_grid<T: Scalar>(mask: &Grid<T>, spec: &MagSpectrogram<T>) -> Result<MagSpectrogram<T>> {
    mask.check_same_shape(spec.grid(), "apply mask dims")?;
    let grid = spec.grid().zip_map(mask, |v, m| v * m);
    Ok(MagSpectrogram::with_flags(
        grid,
        spec.compressed(),
        spec.normalized(),
    ))
}

// ---------------------------------------------------------------------------
// Mask cache file format
// ---------------------------------------------------------------------------

const MASK_MAGIC: &[u8; 4] = b"AVSM";
const MASK_VERSION: u16 = 1;
const DTYPE_BINARY: u8 = 0;
const DTYPE_AMPLITUDE: u8 = 1;

fn write_header(w: &mut impl Write, dtype: u8, rows: usize, cols: usize) -> Result<()> {
    w.write_all(MASK_MAGIC)?;
    w.write_all(&MASK_VERSION.to_le_bytes())?;
    w.write_all(&[dtype])?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(u8, usize, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MASK_MAGIC {
        return Err(CoreError::InvalidArgument("bad mask file magic".into()));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != MASK_VERSION {
        return Err(CoreError::InvalidArgument(format!(
            "unsupported mask file version {version}"
        )));
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    let mut dim = [0u8; 4];
    r.read_exact(&mut dim)?;
    let rows = u32::from_le_bytes(dim) as usize;
    r.read_exact(&mut dim)?;
    let cols = u32::from_le_bytes(dim) as usize;
    Ok((dtype[0], rows, cols))
}

pub fn write_binary_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write_header(&mut out, DTYPE_BINARY, mask.frames(), mask.bins())?;
    out.write_all(mask.grid().as_slice())?;
    out.flush()?;
    Ok(())
}

pub fn read_binary_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let mut input = BufReader::new(File::open(path.as_ref())?);
    let (dtype, rows, cols) = read_header(&mut input)?;
    if dtype != DTYPE_BINARY {
        return Err(CoreError::InvalidArgument("not a binary mask file".into()));
    }
    let mut data = vec![0u8; rows * cols];
    input.read_exact(&mut data)?;
    if data.iter().any(|&v| v > 1) {
        return Err(CoreError::InvalidArgument(
            "binary mask cell out of {0,1}".into(),
        ));
    }
    Ok(BinaryMask {
        grid: Grid::from_vec(rows, cols, data),
    })
}

pub fn write_amplitude_mask<T: Scalar>(
    mask: &AmplitudeMask<T>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write_header(&mut out, DTYPE_AMPLITUDE, mask.frames(), mask.bins())?;
    out.write_all(&mask.clip().to_f64_lossy().to_le_bytes())?;
    for &v in mask.grid().as_slice() {
        out.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_amplitude_mask<T: Scalar>(path: impl AsRef<Path>) -> Result<AmplitudeMask<T>> {
    let mut input = BufReader::new(File::open(path.as_ref())?);
    let (dtype, rows, cols) = read_header(&mut input)?;
    if dtype != DTYPE_AMPLITUDE {
        return Err(CoreError::InvalidArgument(
            "not an amplitude mask file".into(),
        ));
    }
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    let clip = T::from_f64_lossy(f64::from_le_bytes(b));
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        input.read_exact(&mut b)?;
        data.push(T::from_f64_lossy(f64::from_le_bytes(b)));
    }
    AmplitudeMask::from_grid(Grid::from_vec(rows, cols, data), clip)
}
