//! STFT analysis and weighted overlap-add synthesis.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

use super::wave::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    /// Periodic Hann window.
    Hann,
}

/// Analysis configuration. Defaults match a 16 kHz pipeline: FFT 512,
/// 25 ms window (400 samples), 10 ms hop (160 samples).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            fft_size: 512,
            win_length: 400,
            hop_length: 160,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    /// Frequency bin count d = fft_size/2 + 1.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.win_length == 0 || self.fft_size == 0 {
            return Err(CoreError::InvalidArgument("zero stft dimension".into()));
        }
        if !(self.hop_length <= self.win_length && self.win_length <= self.fft_size) {
            return Err(CoreError::InvalidArgument(format!(
                "need hop <= win <= fft, got {}/{}/{}",
                self.hop_length, self.win_length, self.fft_size
            )));
        }
        Ok(())
    }

    fn window_values<T: Scalar>(&self) -> Vec<T> {
        match self.window {
            WindowKind::Hann => {
                let n = self.win_length;
                (0..n)
                    .map(|i| {
                        let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                        T::from_f64_lossy(0.5 * (1.0 - x.cos()))
                    })
                    .collect()
            }
        }
    }
}

/// T x d complex time-frequency grid together with everything needed to
/// invert it (analysis config, source rate, source length).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    grid: Grid<Complex<T>>,
    config: StftConfig,
    sample_rate: u32,
    sample_len: usize,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn grid(&self) -> &Grid<Complex<T>> {
        &self.grid
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn sample_len(&self) -> usize {
        self.sample_len
    }

    pub fn frames(&self) -> usize {
        self.grid.rows()
    }

    pub fn bins(&self) -> usize {
        self.grid.cols()
    }

    /// Entrywise magnitude as a linear-domain spectrogram.
    pub fn magnitude(&self) -> super::MagSpectrogram<T> {
        super::MagSpectrogram::linear(self.grid.map(|c| (c.re * c.re + c.im * c.im).sqrt()))
    }

    /// Replaces each cell's magnitude, keeping this spectrogram's phase.
    /// Zero-magnitude cells take phase 0.
    pub fn with_magnitude(&self, mag: &Grid<T>) -> Result<ComplexSpectrogram<T>> {
        self.grid.check_same_shape(mag, "with_magnitude")?;
        let grid = self.grid.zip_map(mag, |c, m| {
            let norm = (c.re * c.re + c.im * c.im).sqrt();
            if norm > T::zero() {
                Complex::new(c.re / norm * m, c.im / norm * m)
            } else {
                Complex::new(m, T::zero())
            }
        });
        Ok(ComplexSpectrogram {
            grid,
            config: self.config,
            sample_rate: self.sample_rate,
            sample_len: self.sample_len,
        })
    }
}

/// Reflection padding of `pad` samples on both ends (edge sample not
/// repeated), so analysis frames are centered on the signal.
fn reflect_pad<T: Scalar>(x: &[T], pad: usize) -> Vec<T> {
    let n = x.len();
    debug_assert!(n > pad);
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 2..=(pad + 1) {
        out.push(x[n - i]);
    }
    out
}

/// Forward STFT. The signal is reflection-padded win/2 on both ends, then
/// framed every `hop` samples; each frame is Hann-windowed and zero-padded
/// to `fft_size`. Only the d = fft/2+1 non-redundant bins are kept.
pub fn stft<T: Scalar>(w: &Waveform<T>, cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    cfg.validate()?;
    if w.len() < cfg.win_length {
        return Err(CoreError::SignalTooShort {
            len: w.len(),
            min: cfg.win_length,
        });
    }

    let pad = cfg.win_length / 2;
    let padded = reflect_pad(w.samples(), pad);
    let frames = 1 + (padded.len() - cfg.win_length) / cfg.hop_length;
    let bins = cfg.bins();
    let window = cfg.window_values::<T>();

    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];

    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * cfg.hop_length;
        for i in 0..cfg.fft_size {
            buf[i] = if i < cfg.win_length {
                Complex::new(padded[start + i] * window[i], T::zero())
            } else {
                Complex::new(T::zero(), T::zero())
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend_from_slice(&buf[..bins]);
    }

    Ok(ComplexSpectrogram {
        grid: Grid::from_vec(frames, bins, out),
        config: *cfg,
        sample_rate: w.sample_rate(),
        sample_len: w.len(),
    })
}

/// Inverse STFT by weighted overlap-add with the analysis window as
/// synthesis window, normalized by the running sum of squared windows.
/// Exact inverse of [`stft`] wherever the normalizer is nonzero.
pub fn istft<T: Scalar>(spec: &ComplexSpectrogram<T>, cfg: &StftConfig) -> Result<Waveform<T>> {
    cfg.validate()?;
    if spec.config != *cfg {
        return Err(CoreError::InvalidArgument(
            "spectrogram config does not match istft config".into(),
        ));
    }
    let frames = spec.frames();
    if frames == 0 {
        return Err(CoreError::InvalidArgument("zero-frame spectrogram".into()));
    }
    let bins = cfg.bins();
    if spec.bins() != bins {
        return Err(CoreError::dims("istft bins", spec.bins(), bins));
    }

    let window = cfg.window_values::<T>();
    let pad = cfg.win_length / 2;
    let padded_len = spec.sample_len + 2 * pad;

    let mut planner = FftPlanner::<T>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); ifft.get_inplace_scratch_len()];

    let mut ola = vec![T::zero(); padded_len];
    let mut wsum = vec![T::zero(); padded_len];
    let inv_n = T::one() / T::from_usize_lossy(cfg.fft_size);

    for f in 0..frames {
        let row = spec.grid.row(f);
        buf[..bins].copy_from_slice(row);
        // Hermitian completion of the upper half.
        for i in bins..cfg.fft_size {
            buf[i] = row[cfg.fft_size - i].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);

        let start = f * cfg.hop_length;
        for i in 0..cfg.win_length {
            let pos = start + i;
            if pos >= padded_len {
                break;
            }
            ola[pos] += buf[i].re * inv_n * window[i];
            wsum[pos] += window[i] * window[i];
        }
    }

    let floor = T::from_f64_lossy(1e-12);
    let mut samples = Vec::with_capacity(spec.sample_len);
    for pos in pad..pad + spec.sample_len {
        let v = if wsum[pos] > floor {
            ola[pos] / wsum[pos]
        } else {
            T::zero()
        };
        samples.push(v);
    }

    Waveform::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> Waveform<f64> {
        let n = (rate as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    fn interior_rel_error(a: &Waveform<f64>, b: &Waveform<f64>, edge: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in edge..a.len() - edge {
            let d = a.samples()[i] - b.samples()[i];
            num += d * d;
            den += a.samples()[i] * a.samples()[i];
        }
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn silence_maps_to_zero_grid() {
        let w = Waveform::<f64>::silence(16000, 16000);
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert_eq!(s.frames(), 101); // 1 + floor(16000/160)
        assert_eq!(s.bins(), 257);
        assert!(s.grid().as_slice().iter().all(|c| c.norm_sqr() == 0.0));
    }

    #[test]
    fn sine_peaks_at_analytic_bin() {
        // 1 kHz at 16 kHz with FFT 512: bin 1000*512/16000 = 32 exactly.
        let w = tone(1000.0, 16000, 0.5);
        let s = stft(&w, &StftConfig::default()).unwrap();
        for row in s.grid().iter_rows().skip(2).take(s.frames() - 4) {
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm_sqr().partial_cmp(&b.1.norm_sqr()).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, 32);
        }
    }

    #[test]
    fn round_trip_recovers_interior() {
        let cfg = StftConfig::default();
        let w = tone(731.0, 16000, 0.7);
        let back = istft(&stft(&w, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(back.len(), w.len());
        assert!(interior_rel_error(&w, &back, cfg.win_length / 2) < 1e-6);
    }

    #[test]
    fn all_zero_spectrogram_inverts_to_silence() {
        let cfg = StftConfig::default();
        let w = Waveform::<f64>::silence(8000, 16000);
        let back = istft(&stft(&w, &cfg).unwrap(), &cfg).unwrap();
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_nonzero_frame_is_time_localized() {
        let cfg = StftConfig::default();
        let w = tone(500.0, 16000, 0.5);
        let mut s = stft(&w, &cfg).unwrap();
        let frames = s.frames();
        let keep = frames / 2;
        for f in 0..frames {
            if f != keep {
                for c in s.grid.row_mut(f) {
                    *c = Complex::new(0.0, 0.0);
                }
            }
        }
        let back = istft(&s, &cfg).unwrap();
        // The kept frame covers padded positions [keep*hop, keep*hop + win),
        // i.e. signal positions shifted left by the pad amount.
        let pad = cfg.win_length / 2;
        let lo = (keep * cfg.hop_length).saturating_sub(pad);
        let hi = keep * cfg.hop_length + cfg.win_length - pad;
        for (i, &v) in back.samples().iter().enumerate() {
            if i < lo || i >= hi {
                assert_eq!(v, 0.0, "leakage at {i}");
            }
        }
        assert!(back.samples()[lo..hi].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn too_short_signal_errors() {
        let w = Waveform::<f64>::silence(399, 16000);
        assert!(matches!(
            stft(&w, &StftConfig::default()),
            Err(CoreError::SignalTooShort { .. })
        ));
    }

    #[test]
    fn istft_rejects_mismatched_config() {
        let cfg = StftConfig::default();
        let w = tone(500.0, 16000, 0.2);
        let s = stft(&w, &cfg).unwrap();
        let other = StftConfig {
            hop_length: 80,
            ..cfg
        };
        assert!(istft(&s, &other).is_err());
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let cfg = StftConfig::default();
        let w = tone(871.0, 16000, 0.2);
        let a = stft(&w, &cfg).unwrap();
        let b = stft(&w, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            istft(&a, &cfg).unwrap().samples(),
            istft(&b, &cfg).unwrap().samples()
        );
    }

    #[test]
    fn scaling_commutes_with_stft_for_pow2_factor() {
        let cfg = StftConfig::default();
        let w = tone(620.0, 16000, 0.3);
        let mut scaled = w.clone();
        scaled.scale(2.0);
        let a = stft(&scaled, &cfg).unwrap();
        let b = stft(&w, &cfg).unwrap();
        for (x, y) in a.grid().as_slice().iter().zip(b.grid().as_slice()) {
            // Power-of-two scaling is exact in binary floating point.
            assert_eq!(x.re, 2.0 * y.re);
            assert_eq!(x.im, 2.0 * y.im);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn prop_round_trip(len in 1600usize..8000, seed in 0u64..1000) {
            let mut rng_state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            };
            let samples: Vec<f64> = (0..len).map(|_| next()).collect();
            let w = Waveform::new(samples, 16000).unwrap();
            let cfg = StftConfig::default();
            let back = istft(&stft(&w, &cfg).unwrap(), &cfg).unwrap();
            prop_assert!(interior_rel_error(&w, &back, cfg.win_length / 2) < 1e-6);
        }
    }
}
