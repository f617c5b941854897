//! Time-domain signals, RIFF PCM i/o, and band-limited resampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Mono waveform: amplitude samples in nominal range [-1, 1] plus rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(CoreError::InvalidSampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(CoreError::NonFinite("waveform sample".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Waveform {
            samples: vec![T::zero(); len],
            sample_rate,
        }
    }

    #[inline]
    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    #[inline]
    pub fn samples_mut(&mut self) -> &mut [T] {
        &mut self.samples
    }

    #[inline]
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    /// Peak absolute amplitude (0 for an empty signal).
    pub fn peak(&self) -> T {
        self.samples
            .iter()
            .fold(T::zero(), |acc, &s| acc.max(s.abs()))
    }

    pub fn scale(&mut self, factor: T) {
        for s in &mut self.samples {
            *s *= factor;
        }
    }
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

const KAISER_BETA: f64 = 8.6;
const HALF_TAPS: i64 = 32; // 64 taps total

/// Zeroth-order modified Bessel function of the first kind (series form).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x = x / 2.0;
    for k in 1..64 {
        term *= (half_x / k as f64) * (half_x / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64) -> f64 {
    let s = u / HALF_TAPS as f64;
    if s.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - s * s).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Windowed-sinc resampling (Kaiser β=8.6, 64 taps around each output
/// point). Tap weights are renormalized over the in-range samples, which
/// makes DC signals and the equal-rate case exact.
pub fn resample<T: Scalar>(w: &Waveform<T>, target_rate: u32) -> Result<Waveform<T>> {
    if w.is_empty() {
        return Err(CoreError::EmptyWaveform);
    }
    if target_rate == 0 {
        return Err(CoreError::InvalidSampleRate(target_rate));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }

    let in_len = w.len() as u64;
    let out_len = ((in_len * target_rate as u64 + w.sample_rate as u64 / 2)
        / w.sample_rate as u64) as usize;
    let step = w.sample_rate as f64 / target_rate as f64;
    // Downsampling narrows the filter to the output Nyquist band.
    let cutoff = (target_rate as f64 / w.sample_rate as f64).min(1.0);

    let mut out = Vec::with_capacity(out_len);
    let n = w.len() as i64;
    for k in 0..out_len {
        let t = k as f64 * step;
        let center = t.floor() as i64;
        let mut acc = 0.0f64;
        let mut wsum = 0.0f64;
        for j in (center - HALF_TAPS + 1)..=(center + HALF_TAPS) {
            if j < 0 || j >= n {
                continue;
            }
            let u = t - j as f64;
            let h = cutoff * sinc(cutoff * u) * kaiser(u);
            acc += w.samples[j as usize].to_f64_lossy() * h;
            wsum += h;
        }
        let v = if wsum.abs() > 0.0 { acc / wsum } else { 0.0 };
        out.push(T::from_f64_lossy(v));
    }

    Ok(Waveform {
        samples: out,
        sample_rate: target_rate,
    })
}

// ---------------------------------------------------------------------------
// RIFF PCM (16-bit signed little-endian, mono)
// ---------------------------------------------------------------------------

const PCM_SCALE: f64 = 32768.0;

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

struct WavInfo {
    sample_rate: u32,
    data: Vec<u8>,
}

fn parse_wav(r: &mut impl Read) -> Result<WavInfo> {
    let mut riff = [0u8; 4];
    r.read_exact(&mut riff)?;
    if &riff != b"RIFF" {
        return Err(CoreError::WavFormat("missing RIFF header".into()));
    }
    let _riff_size = read_u32(r)?;
    let mut wave = [0u8; 4];
    r.read_exact(&mut wave)?;
    if &wave != b"WAVE" {
        return Err(CoreError::WavFormat("missing WAVE tag".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut id = [0u8; 4];
        match r.read_exact(&mut id) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let size = read_u32(r)? as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(CoreError::WavFormat("fmt chunk too small".into()));
                }
                let audio_format = read_u16(r)?;
                let channels = read_u16(r)?;
                let sample_rate = read_u32(r)?;
                let _byte_rate = read_u32(r)?;
                let _block_align = read_u16(r)?;
                let bits = read_u16(r)?;
                let mut rest = vec![0u8; size - 16];
                r.read_exact(&mut rest)?;
                fmt = Some((audio_format, channels, sample_rate, bits));
            }
            b"data" => {
                let mut bytes = vec![0u8; size];
                r.read_exact(&mut bytes)?;
                data = Some(bytes);
            }
            _ => {
                let mut skip = vec![0u8; size];
                r.read_exact(&mut skip)?;
            }
        }
        if size % 2 == 1 {
            let mut pad = [0u8; 1];
            let _ = r.read_exact(&mut pad);
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let (audio_format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| CoreError::WavFormat("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| CoreError::WavFormat("missing data chunk".into()))?;

    if audio_format != 1 {
        return Err(CoreError::WavFormat(format!(
            "unsupported audio format {audio_format} (want PCM)"
        )));
    }
    if channels != 1 {
        return Err(CoreError::WavFormat(format!(
            "expected mono, got {channels} channels"
        )));
    }
    if bits != 16 {
        return Err(CoreError::WavFormat(format!(
            "unsupported bit depth {bits} (want 16)"
        )));
    }
    Ok(WavInfo { sample_rate, data })
}

/// Reads a 16-bit signed mono PCM WAV; samples map to [-1, 1) via /32768.
pub fn read_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let info = parse_wav(&mut reader)?;
    let samples = info
        .data
        .chunks_exact(2)
        .map(|b| {
            let v = i16::from_le_bytes([b[0], b[1]]);
            T::from_f64_lossy(v as f64 / PCM_SCALE)
        })
        .collect();
    Waveform::new(samples, info.sample_rate)
}

/// Duration in seconds without decoding samples to floats.
pub fn wav_duration_secs(path: impl AsRef<Path>) -> Result<f64> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let info = parse_wav(&mut reader)?;
    Ok(info.data.len() as f64 / 2.0 / info.sample_rate as f64)
}

/// Writes a 16-bit signed mono PCM WAV; out-of-range samples clamp.
pub fn write_wav<T: Scalar>(w: &Waveform<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    let data_len = (w.len() * 2) as u32;

    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?; // PCM
    out.write_all(&1u16.to_le_bytes())?; // mono
    out.write_all(&w.sample_rate.to_le_bytes())?;
    out.write_all(&(w.sample_rate * 2).to_le_bytes())?;
    out.write_all(&2u16.to_le_bytes())?;
    out.write_all(&16u16.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    for &s in w.samples() {
        let v = (s.to_f64_lossy() * PCM_SCALE).round();
        let v = v.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64, amp: f64) -> Waveform<f64> {
        let n = (rate as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    fn fft_peak_bin(w: &Waveform<f64>) -> usize {
        // Crude DFT magnitude argmax; only used as an oracle on short signals.
        let n = w.len().min(4096);
        let mut best = (0usize, -1.0f64);
        for bin in 0..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &s) in w.samples()[..n].iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * bin as f64 * i as f64 / n as f64;
                re += s * ang.cos();
                im += s * ang.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (bin, mag);
            }
        }
        best.0
    }

    #[test]
    fn resample_identity_rate_returns_identical_samples() {
        let w = sine(440.0, 16000, 0.1, 0.5);
        let r = resample(&w, 16000).unwrap();
        assert_eq!(w.samples(), r.samples());
    }

    #[test]
    fn resample_preserves_dc() {
        let w = Waveform::new(vec![0.5f64; 4800], 48000).unwrap();
        let r = resample(&w, 16000).unwrap();
        assert_eq!(r.sample_rate(), 16000);
        let expected = 4800 / 3;
        assert!((r.len() as i64 - expected as i64).abs() <= 1);
        for &s in r.samples() {
            assert!((s - 0.5).abs() < 1e-9, "dc sample {s}");
        }
    }

    #[test]
    fn resample_keeps_sine_frequency() {
        // 440 Hz at 48 kHz downsampled to 16 kHz: the dominant DFT bin of the
        // output must sit where an analytically generated 440 Hz tone of the
        // same length sits.
        let w = sine(440.0, 48000, 0.3, 0.8);
        let r = resample(&w, 16000).unwrap();
        let direct = sine(440.0, 16000, 0.3, 0.8);
        assert_eq!(r.len(), direct.len());
        assert_eq!(fft_peak_bin(&r), fft_peak_bin(&direct));
    }

    #[test]
    fn resample_rejects_empty() {
        let w = Waveform::<f64>::silence(0, 16000);
        assert!(matches!(
            resample(&w, 8000),
            Err(CoreError::EmptyWaveform)
        ));
    }

    #[test]
    fn wav_round_trip_is_exact_at_pcm_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        // Use amplitudes on the PCM lattice so the round trip is bit exact.
        let samples: Vec<f64> = (-8..8).map(|i| i as f64 * 1024.0 / PCM_SCALE).collect();
        let w = Waveform::new(samples, 16000).unwrap();
        write_wav(&w, &path).unwrap();
        let back: Waveform<f64> = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.samples(), w.samples());
        assert!((wav_duration_secs(&path).unwrap() - w.duration_secs()).abs() < 1e-12);
    }

    #[test]
    fn read_wav_rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&64000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, bytes).unwrap();
        let err = read_wav::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("mono"), "{err}");
    }

    #[test]
    fn waveform_rejects_non_finite() {
        assert!(Waveform::new(vec![0.0, f64::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }
}
