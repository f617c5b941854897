//! Grayscale PNG rendering of spectrograms and masks: time runs left to
//! right, frequency bottom to top, magnitudes on a dB scale with an 80 dB
//! floor below the peak.

use std::path::Path;

use anyhow::{Context, Result};
use image::{GrayImage, Luma};

use avse_core::grid::Grid;

pub const DB_FLOOR: f64 = 80.0;

/// Renders a linear-magnitude spectrogram (frames x bins).
pub fn spectrogram_png(mag: &Grid<f64>, path: &Path) -> Result<()> {
    let frames = mag.rows();
    let bins = mag.cols();
    let peak = mag.as_slice().iter().fold(0.0f64, |m, &v| m.max(v));
    let mut img = GrayImage::new(frames.max(1) as u32, bins.max(1) as u32);
    for t in 0..frames {
        for f in 0..bins {
            let v = mag.at(t, f);
            let db = if peak > 0.0 && v > 0.0 {
                20.0 * (v / peak).log10()
            } else {
                -DB_FLOOR
            };
            let norm = ((db + DB_FLOOR) / DB_FLOOR).clamp(0.0, 1.0);
            let pixel = (norm * 255.0).round() as u8;
            // Low frequencies at the bottom of the image.
            img.put_pixel(t as u32, (bins - 1 - f) as u32, Luma([pixel]));
        }
    }
    img.save(path)
        .with_context(|| format!("write {}", path.display()))?;
    Ok(())
}

/// Renders a mask grid on a linear scale from 0 to its maximum.
pub fn mask_png(mask: &Grid<f64>, path: &Path) -> Result<()> {
    let frames = mask.rows();
    let bins = mask.cols();
    let peak = mask.as_slice().iter().fold(0.0f64, |m, &v| m.max(v));
    let mut img = GrayImage::new(frames.max(1) as u32, bins.max(1) as u32);
    for t in 0..frames {
        for f in 0..bins {
            let norm = if peak > 0.0 {
                (mask.at(t, f) / peak).clamp(0.0, 1.0)
            } else {
                0.0
            };
            img.put_pixel(
                t as u32,
                (bins - 1 - f) as u32,
                Luma([(norm * 255.0).round() as u8]),
            );
        }
    }
    img.save(path)
        .with_context(|| format!("write {}", path.display()))?;
    Ok(())
}
