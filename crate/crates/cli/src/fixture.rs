//! Synthetic desk-scale corpus: a few "speakers" with distinct spectral
//! signatures, speech-like burst envelopes, and landmark tracks whose mouth
//! points move with the acoustic envelope. Useful for demos and for
//! verifying the pipeline without a licensed audio-visual corpus.

use std::path::Path;

use anyhow::{Context, Result};
use rand::Rng;

use avse_core::dsp::{write_wav, Waveform};
use avse_core::grid::Grid;
use avse_core::landmarks::{write_landmarks, LandmarkTrack, LANDMARK_POINTS};
use avse_core::seeds::rng_for;

pub struct FixtureParams {
    pub speakers: usize,
    pub utterances: usize,
    pub seed: u64,
    pub min_dur: f64,
    pub max_dur: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            speakers: 3,
            utterances: 12,
            seed: 7,
            min_dur: 0.6,
            max_dur: 1.2,
        }
    }
}

const SAMPLE_RATE: u32 = 16000;
const VIDEO_FPS: f64 = 25.0;

/// Disjoint frequency bands per speaker index.
fn band(speaker: usize, total: usize) -> (f64, f64) {
    // Spread bands log-evenly between 200 Hz and 6 kHz.
    let lo_edge = 200.0f64;
    let hi_edge = 6000.0f64;
    let step = (hi_edge / lo_edge).powf(1.0 / total as f64);
    let lo = lo_edge * step.powi(speaker as i32);
    let hi = lo * step * 0.72; // gap between adjacent bands
    (lo, hi)
}

/// Speech-like amplitude envelope: bursts with raised-cosine ramps
/// separated by short silences.
struct Envelope {
    // (start, end, amplitude) in seconds
    segments: Vec<(f64, f64, f64)>,
}

impl Envelope {
    fn generate(duration: f64, rng: &mut impl Rng) -> Envelope {
        let mut segments = Vec::new();
        let mut t = 0.02 + rng.random::<f64>() * 0.05;
        while t < duration {
            let voiced = 0.12 + rng.random::<f64>() * 0.2;
            let amp = 0.5 + rng.random::<f64>() * 0.5;
            segments.push((t, (t + voiced).min(duration), amp));
            t += voiced + 0.04 + rng.random::<f64>() * 0.1;
        }
        if segments.is_empty() {
            segments.push((0.05, duration.max(0.2), 0.8));
        }
        Envelope { segments }
    }

    fn at(&self, t: f64) -> f64 {
        const RAMP: f64 = 0.02;
        let mut v: f64 = 0.0;
        for &(start, end, amp) in &self.segments {
            if t < start - RAMP || t > end + RAMP {
                continue;
            }
            let rise = ((t - (start - RAMP)) / RAMP).clamp(0.0, 1.0);
            let fall = (((end + RAMP) - t) / RAMP).clamp(0.0, 1.0);
            let shape = 0.5 * (1.0 - (std::f64::consts::PI * rise).cos())
                * 0.5
                * (1.0 - (std::f64::consts::PI * fall).cos());
            v = v.max(amp * shape.min(1.0));
        }
        v
    }
}

fn synthesize_utterance(
    speaker: usize,
    total_speakers: usize,
    duration: f64,
    rng: &mut impl Rng,
) -> (Waveform<f64>, Envelope) {
    let (lo, hi) = band(speaker, total_speakers);
    let envelope = Envelope::generate(duration, rng);

    // Three partials inside the speaker's band.
    let partials: Vec<(f64, f64, f64)> = (0..3)
        .map(|i| {
            let f = lo + (hi - lo) * (i as f64 + rng.random::<f64>()) / 3.0;
            let a = [1.0, 0.6, 0.4][i];
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            (f, a, phase)
        })
        .collect();

    let n = (duration * SAMPLE_RATE as f64).round() as usize;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / SAMPLE_RATE as f64;
        let env = envelope.at(t);
        let mut v = 0.0;
        for &(f, a, phase) in &partials {
            v += a * (std::f64::consts::TAU * f * t + phase).sin();
        }
        samples.push(env * v);
    }
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.0 {
        let scale = 0.45 / peak;
        for s in &mut samples {
            *s *= scale;
        }
    }
    (
        Waveform::new(samples, SAMPLE_RATE).expect("finite fixture audio"),
        envelope,
    )
}

/// Neutral 68-point face layout (pixel coordinates).
fn base_face() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(LANDMARK_POINTS);
    // Jaw line 0-16.
    for i in 0..17 {
        let a = std::f64::consts::PI * (i as f64 / 16.0);
        pts.push((160.0 - 60.0 * a.cos(), 140.0 + 55.0 * a.sin()));
    }
    // Brows 17-26.
    for i in 0..10 {
        pts.push((115.0 + 9.0 * i as f64, 105.0));
    }
    // Nose 27-35.
    for i in 0..9 {
        pts.push((160.0, 115.0 + 4.0 * i as f64));
    }
    // Eyes 36-47.
    for i in 0..12 {
        let side = if i < 6 { 130.0 } else { 190.0 };
        let a = std::f64::consts::TAU * (i % 6) as f64 / 6.0;
        pts.push((side + 8.0 * a.cos(), 118.0 + 4.0 * a.sin()));
    }
    // Mouth 48-67.
    for i in 0..20 {
        let a = std::f64::consts::TAU * (i as f64 / 20.0);
        pts.push((160.0 + 18.0 * a.cos(), 172.0 + 6.0 * a.sin()));
    }
    pts
}

fn landmarks_for(envelope: &Envelope, duration: f64, rng: &mut impl Rng) -> LandmarkTrack<f64> {
    let frames = (duration * VIDEO_FPS).ceil() as usize + 1;
    let face = base_face();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(frames);
    for k in 0..frames {
        let t = k as f64 / VIDEO_FPS;
        let env = envelope.at(t.min(duration));
        let bob = 0.8 * (std::f64::consts::TAU * 0.5 * t).sin();
        let mut row = Vec::with_capacity(2 * LANDMARK_POINTS);
        for (idx, &(x, y)) in face.iter().enumerate() {
            let jitter_x = (rng.random::<f64>() - 0.5) * 0.04;
            let jitter_y = (rng.random::<f64>() - 0.5) * 0.04;
            // Mouth points open with the acoustic envelope.
            let mouth = if (48..68).contains(&idx) {
                let lower = if (idx as f64 - 48.0) / 20.0 > 0.5 { 1.0 } else { 0.35 };
                4.5 * env * lower
            } else {
                0.0
            };
            row.push(x + jitter_x);
            row.push(y + bob + mouth + jitter_y);
        }
        rows.push(row);
    }
    LandmarkTrack::new(Grid::from_rows(&rows), VIDEO_FPS).expect("fixture landmarks")
}

/// Generates `speakers x utterances` WAV + landmark CSV pairs under
/// `dir/s<k>/u<j>.{wav,csv}`.
pub fn generate_corpus(dir: &Path, params: &FixtureParams) -> Result<usize> {
    let mut written = 0;
    for s in 0..params.speakers {
        let speaker_dir = dir.join(format!("s{s:02}"));
        std::fs::create_dir_all(&speaker_dir)
            .with_context(|| format!("create {}", speaker_dir.display()))?;
        for u in 0..params.utterances {
            let mut rng = rng_for(params.seed, &format!("fixture/s{s:02}/u{u:03}"));
            let duration =
                params.min_dur + rng.random::<f64>() * (params.max_dur - params.min_dur);
            let (wave, envelope) = synthesize_utterance(s, params.speakers, duration, &mut rng);
            let track = landmarks_for(&envelope, duration, &mut rng);
            write_wav(&wave, speaker_dir.join(format!("u{u:03}.wav")))?;
            write_landmarks(&track, speaker_dir.join(format!("u{u:03}.csv")))?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic_and_band_limited() {
        let dir = tempfile::tempdir().unwrap();
        let params = FixtureParams {
            speakers: 3,
            utterances: 2,
            seed: 5,
            min_dur: 0.5,
            max_dur: 0.7,
        };
        let a_dir = dir.path().join("a");
        let b_dir = dir.path().join("b");
        std::fs::create_dir_all(&a_dir).unwrap();
        std::fs::create_dir_all(&b_dir).unwrap();
        assert_eq!(generate_corpus(&a_dir, &params).unwrap(), 6);
        assert_eq!(generate_corpus(&b_dir, &params).unwrap(), 6);

        let a = std::fs::read(a_dir.join("s00/u000.wav")).unwrap();
        let b = std::fs::read(b_dir.join("s00/u000.wav")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(a_dir.join("s02/u001.csv")).unwrap();
        let b = std::fs::read(b_dir.join("s02/u001.csv")).unwrap();
        assert_eq!(a, b);

        // Speakers occupy disjoint bands.
        for s in 0..3 {
            let (lo, hi) = band(s, 3);
            assert!(lo < hi);
            if s > 0 {
                let (_, prev_hi) = band(s - 1, 3);
                assert!(prev_hi < lo, "bands overlap at speaker {s}");
            }
        }
    }
}
