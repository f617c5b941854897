//! Multi-talker mixture construction: duration matching, gain policies,
//! speaker-disjoint splits, and reproducible dataset manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::seeds::rng_for;

pub const MANIFEST_SCHEMA: &str = "avse.manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Peak ceiling applied after summation.
pub const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub speaker_id: String,
    pub utterance_id: String,
    pub audio_path: String,
    pub landmark_path: String,
    pub duration: f64,
}

/// One materialized (or to-be-materialized) mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub id: String,
    pub target: UtteranceRecord,
    pub interferers: Vec<UtteranceRecord>,
    pub rng_seed: u64,
    pub gain_policy: String,
    /// Scale factor applied to the summed mixture (1.0 when no peak
    /// protection was needed); references must be scaled identically.
    pub rescale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema: String,
    pub version: u32,
    pub style: String,
    pub seed: u64,
    pub gain_policy: String,
    pub n_interferers: usize,
    /// Targets skipped because no eligible interferer existed.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<MixtureEntry>,
}

/// Speakers with their utterances, ordered for determinism.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    speakers: BTreeMap<String, Vec<UtteranceRecord>>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn add(&mut self, record: UtteranceRecord) {
        self.speakers
            .entry(record.speaker_id.clone())
            .or_default()
            .push(record);
    }

    /// Sorts utterances and drops excluded speakers; call once after adding.
    pub fn finalize(&mut self, exclude: &[String]) {
        for spk in exclude {
            self.speakers.remove(spk);
        }
        for utts in self.speakers.values_mut() {
            utts.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        }
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        self.speakers.keys().cloned().collect()
    }

    pub fn speakers(&self) -> &BTreeMap<String, Vec<UtteranceRecord>> {
        &self.speakers
    }

    pub fn utterances(&self, speaker: &str) -> &[UtteranceRecord] {
        self.speakers.get(speaker).map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    /// Sub-corpus restricted to the given speakers.
    pub fn subset(&self, speakers: &[String]) -> Corpus {
        let mut out = Corpus::new();
        for spk in speakers {
            if let Some(utts) = self.speakers.get(spk) {
                out.speakers.insert(spk.clone(), utts.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

// ---------------------------------------------------------------------------
// Waveform-level operations
// ---------------------------------------------------------------------------

/// Forces the interferer to `target_len` samples: longer signals are cut at
/// the end; shorter ones get silence split evenly, with the odd sample
/// going to the front.
pub fn fit_duration<T: Scalar>(interferer: &Waveform<T>, target_len: usize) -> Waveform<T> {
    let len = interferer.len();
    if len == target_len {
        return interferer.clone();
    }
    if len > target_len {
        let samples = interferer.samples()[..target_len].to_vec();
        return Waveform::new(samples, interferer.sample_rate()).expect("truncated waveform");
    }
    let diff = target_len - len;
    let front = diff.div_ceil(2);
    let mut samples = vec![T::zero(); target_len];
    samples[front..front + len].copy_from_slice(interferer.samples());
    Waveform::new(samples, interferer.sample_rate()).expect("padded waveform")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainPolicy {
    /// Straight samplewise addition.
    Unit,
    /// Interferers scaled so the target-to-each-interferer energy ratio is
    /// the given SNR in dB.
    FixedSnr(f64),
}

impl GainPolicy {
    pub fn label(&self) -> String {
        match self {
            GainPolicy::Unit => "unit".into(),
            GainPolicy::FixedSnr(db) => format!("snr{db}"),
        }
    }

    pub fn parse(s: &str) -> Result<GainPolicy> {
        if s == "unit" {
            return Ok(GainPolicy::Unit);
        }
        if let Some(db) = s.strip_prefix("snr") {
            if let Ok(v) = db.parse::<f64>() {
                return Ok(GainPolicy::FixedSnr(v));
            }
        }
        Err(CoreError::InvalidArgument(format!("unknown gain policy '{s}'")))
    }
}

pub struct MixResult<T> {
    pub mixture: Waveform<T>,
    /// Global factor applied after summation to keep |peak| <= 0.99.
    pub rescale: f64,
}

fn energy<T: Scalar>(w: &Waveform<T>) -> f64 {
    w.samples()
        .iter()
        .map(|&s| {
            let v = s.to_f64_lossy();
            v * v
        })
        .sum()
}

/// Samplewise sum of the target and already duration-fitted interferers,
/// followed by a global peak rescale iff |peak| > 0.99.
pub fn mix<T: Scalar>(
    target: &Waveform<T>,
    fitted_interferers: &[Waveform<T>],
    policy: GainPolicy,
) -> Result<MixResult<T>> {
    for i in fitted_interferers {
        if i.len() != target.len() {
            return Err(CoreError::dims("mix length", i.len(), target.len()));
        }
        if i.sample_rate() != target.sample_rate() {
            return Err(CoreError::dims(
                "mix sample rate",
                i.sample_rate(),
                target.sample_rate(),
            ));
        }
    }

    let mut sum: Vec<T> = target.samples().to_vec();
    for interferer in fitted_interferers {
        let gain = match policy {
            GainPolicy::Unit => T::one(),
            GainPolicy::FixedSnr(db) => {
                let et = energy(target);
                let ei = energy(interferer);
                if ei <= 0.0 {
                    T::zero()
                } else {
                    T::from_f64_lossy((et / (ei * 10f64.powf(db / 10.0))).sqrt())
                }
            }
        };
        for (acc, &s) in sum.iter_mut().zip(interferer.samples()) {
            *acc += s * gain;
        }
    }

    let mut mixture = Waveform::new(sum, target.sample_rate())?;
    let peak = mixture.peak().to_f64_lossy();
    let rescale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    if rescale != 1.0 {
        mixture.scale(T::from_f64_lossy(rescale));
    }
    Ok(MixResult { mixture, rescale })
}

// ---------------------------------------------------------------------------
// Manifest construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ManifestParams {
    /// Target utterances drawn per speaker (None = all).
    pub n_utt_per_speaker: Option<usize>,
    /// Mixtures created per target utterance.
    pub mixes_per_utt: usize,
    /// Competing utterances per mixture (1 = two-talker condition).
    pub n_interferers: usize,
    pub gain_policy: GainPolicy,
    /// Maximum |duration gap| in seconds; None disables the constraint.
    pub max_dur_gap: Option<f64>,
}

impl Default for ManifestParams {
    fn default() -> Self {
        ManifestParams {
            n_utt_per_speaker: Some(200),
            mixes_per_utt: 3,
            n_interferers: 1,
            gain_policy: GainPolicy::Unit,
            max_dur_gap: None,
        }
    }
}

/// Draws `k` distinct items from `pool` by partial Fisher-Yates shuffle.
fn sample_distinct<E: Clone>(pool: &[E], k: usize, rng: &mut impl Rng) -> Vec<E> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..k].iter().map(|&i| pool[i].clone()).collect()
}

/// GRID-style protocol: per speaker, choose target utterances at random,
/// then mix each with `mixes_per_utt` distinct interferer utterances from
/// other speakers (speaker drawn uniformly, then one of its utterances).
pub fn build_manifest_grid_style(
    corpus: &Corpus,
    params: &ManifestParams,
    seed: u64,
) -> Result<Manifest> {
    build_manifest(corpus, params, seed, "grid")
}

/// TCD-TIMIT-style protocol: as GRID-style, plus interferers are eligible
/// only when their original duration is within `max_dur_gap` seconds of the
/// target's (inclusive). Targets with no eligible partner are skipped and
/// counted in the header.
pub fn build_manifest_timit_style(
    corpus: &Corpus,
    params: &ManifestParams,
    seed: u64,
) -> Result<Manifest> {
    if params.max_dur_gap.is_none() {
        return Err(CoreError::Manifest(
            "timit-style manifest requires max_dur_gap".into(),
        ));
    }
    build_manifest(corpus, params, seed, "timit")
}

fn build_manifest(
    corpus: &Corpus,
    params: &ManifestParams,
    seed: u64,
    style: &str,
) -> Result<Manifest> {
    if corpus.len() < params.n_interferers + 1 {
        return Err(CoreError::Manifest(format!(
            "need at least {} speakers, corpus has {}",
            params.n_interferers + 1,
            corpus.len()
        )));
    }
    if params.mixes_per_utt == 0 || params.n_interferers == 0 {
        return Err(CoreError::Manifest(
            "mixes_per_utt and n_interferers must be >= 1".into(),
        ));
    }

    let mut entries = Vec::new();
    let mut skipped = 0usize;

    for (speaker, utterances) in corpus.speakers() {
        let mut rng = rng_for(seed, &format!("manifest/{style}/{speaker}"));
        let targets: Vec<UtteranceRecord> = match params.n_utt_per_speaker {
            Some(n) => {
                if utterances.len() < n {
                    return Err(CoreError::Manifest(format!(
                        "speaker {speaker} has {} utterances, need {n}",
                        utterances.len()
                    )));
                }
                sample_distinct(utterances, n, &mut rng)
            }
            None => utterances.to_vec(),
        };

        for target in targets {
            // Eligible interferer pool grouped by speaker.
            let mut eligible: Vec<(String, Vec<UtteranceRecord>)> = Vec::new();
            for (other, other_utts) in corpus.speakers() {
                if other == speaker {
                    continue;
                }
                let utts: Vec<UtteranceRecord> = other_utts
                    .iter()
                    .filter(|u| match params.max_dur_gap {
                        Some(gap) => (u.duration - target.duration).abs() <= gap,
                        None => true,
                    })
                    .cloned()
                    .collect();
                if !utts.is_empty() {
                    eligible.push((other.clone(), utts));
                }
            }
            if eligible.len() < params.n_interferers {
                skipped += 1;
                continue;
            }

            let mut used: Vec<(String, String)> = Vec::new();
            for k in 0..params.mixes_per_utt {
                let mut interferers: Vec<UtteranceRecord> = Vec::new();
                let mut attempts = 0;
                while interferers.len() < params.n_interferers {
                    attempts += 1;
                    if attempts > 10_000 {
                        break;
                    }
                    let (spk, utts) = &eligible[rng.random_range(0..eligible.len())];
                    if interferers.iter().any(|i| &i.speaker_id == spk) {
                        continue;
                    }
                    let cand = &utts[rng.random_range(0..utts.len())];
                    let key = (cand.speaker_id.clone(), cand.utterance_id.clone());
                    // Distinct interferer utterances across this target's mixes.
                    if used.contains(&key) {
                        continue;
                    }
                    used.push(key);
                    interferers.push(cand.clone());
                }
                if interferers.len() < params.n_interferers {
                    skipped += 1;
                    continue;
                }
                let id = format!("{}_{}_mix{:02}", speaker, target.utterance_id, k);
                let entry_seed = rng_for(seed, &format!("entry/{id}"))
                    .random::<u64>();
                entries.push(MixtureEntry {
                    id,
                    target: target.clone(),
                    interferers,
                    rng_seed: entry_seed,
                    gain_policy: params.gain_policy.label(),
                    rescale: 1.0,
                });
            }
        }
    }

    if entries.is_empty() {
        return Err(CoreError::Manifest(
            "no eligible target/interferer pair in corpus".into(),
        ));
    }

    Ok(Manifest {
        header: ManifestHeader {
            schema: MANIFEST_SCHEMA.into(),
            version: MANIFEST_VERSION,
            style: style.into(),
            seed,
            gain_policy: params.gain_policy.label(),
            n_interferers: params.n_interferers,
            skipped,
        },
        entries,
    })
}

/// Shuffled speaker-disjoint split, deterministic under the seed.
pub fn split_speakers(
    corpus: &Corpus,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<SplitPlan> {
    let (n_train, n_val, n_test) = counts;
    let mut ids = corpus.speaker_ids();
    if ids.len() < n_train + n_val + n_test {
        return Err(CoreError::Manifest(format!(
            "split needs {} speakers, corpus has {}",
            n_train + n_val + n_test,
            ids.len()
        )));
    }
    let mut rng = rng_for(seed, "split");
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let train = ids[..n_train].to_vec();
    let val = ids[n_train..n_train + n_val].to_vec();
    let test = ids[n_train + n_val..n_train + n_val + n_test].to_vec();
    Ok(SplitPlan { train, val, test })
}

// ---------------------------------------------------------------------------
// Manifest i/o (line-delimited JSON, header line first)
// ---------------------------------------------------------------------------

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer(&mut out, &manifest.header)?;
    out.write_all(b"\n")?;
    for entry in &manifest.entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CoreError::Manifest("empty manifest".into()))??;
    let header: ManifestHeader = serde_json::from_str(&header_line)?;
    if header.schema != MANIFEST_SCHEMA {
        return Err(CoreError::Manifest(format!(
            "unexpected schema '{}'",
            header.schema
        )));
    }
    if header.version != MANIFEST_VERSION {
        return Err(CoreError::Manifest(format!(
            "unsupported manifest version {}",
            header.version
        )));
    }
    let mut entries = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok(Manifest { header, entries })
}
