//! Shared plumbing between subcommands: corpus scanning, spectrogram and
//! feature extraction, per-speaker statistics caches, and the enhancement
//! path from a mask estimate back to a waveform.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use avse_core::dsp::{
    compute_speaker_stats, istft, read_wav, reconstruct_with_noisy_phase, resample, stft,
    wav_duration_secs,
};
use avse_core::grid::Grid;
use avse_core::landmarks::{
    align_lengths, compute_feature_stats, motion_vectors, normalize_features, parse_landmarks,
    upsample_track, TARGET_FPS,
};
use avse_core::mask::{compute_tbm, ltass_threshold};
use avse_core::mixture::{Manifest, MixtureEntry, UtteranceRecord};
use avse_core::trainer::TrainSample;
use avse_core::{
    ComplexSpectrogram, FeatureSeq, FeatureStats, MagSpectrogram, SpeakerStats, Waveform,
};

use crate::config::{PipelineConfig, StatsScope};

/// Cached per-speaker normalization statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeakerCache {
    pub spec: SpeakerStats,
    pub feat: FeatureStats,
}

pub fn write_speaker_cache(cache: &SpeakerCache, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string(cache)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_speaker_cache(path: &Path) -> Result<SpeakerCache> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("missing stats cache {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Scans `corpus_dir/<speaker>/<utt>.wav` (+ `.csv` landmarks). Utterances
/// without a landmark file are skipped and counted.
pub fn scan_corpus(cfg: &PipelineConfig) -> Result<(avse_core::mixture::Corpus, usize)> {
    let mut corpus = avse_core::mixture::Corpus::new();
    let mut skipped = 0usize;
    let mut speaker_dirs: Vec<_> = std::fs::read_dir(&cfg.corpus_dir)
        .with_context(|| format!("read corpus dir {}", cfg.corpus_dir.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    speaker_dirs.sort();

    for speaker_dir in speaker_dirs {
        let speaker_id = speaker_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| anyhow!("bad speaker dir name"))?
            .to_string();
        let mut wavs: Vec<_> = std::fs::read_dir(&speaker_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "wav"))
            .collect();
        wavs.sort();
        for wav in wavs {
            let csv = wav.with_extension("csv");
            if !csv.is_file() {
                skipped += 1;
                eprintln!("warning: no landmarks for {}, skipped", wav.display());
                continue;
            }
            let duration = wav_duration_secs(&wav)
                .with_context(|| format!("read {}", wav.display()))?;
            let utterance_id = wav
                .file_stem()
                .and_then(|n| n.to_str())
                .ok_or_else(|| anyhow!("bad utterance name"))?
                .to_string();
            corpus.add(UtteranceRecord {
                speaker_id: speaker_id.clone(),
                utterance_id,
                audio_path: wav.to_string_lossy().into_owned(),
                landmark_path: csv.to_string_lossy().into_owned(),
                duration,
            });
        }
    }
    corpus.finalize(&cfg.dataset.exclude_speakers);
    Ok((corpus, skipped))
}

/// Loads a waveform and brings it to the pipeline sample rate.
pub fn load_wave(path: &str, cfg: &PipelineConfig) -> Result<Waveform> {
    let w: Waveform = read_wav(path).with_context(|| format!("read {path}"))?;
    Ok(resample(&w, cfg.sample_rate)?)
}

/// STFT + magnitude + power-law compression (un-normalized domain).
pub fn compressed_spec(
    wave: &Waveform,
    cfg: &PipelineConfig,
) -> Result<(MagSpectrogram, ComplexSpectrogram)> {
    let spec = stft(wave, &cfg.stft_config())?;
    let comp = spec.magnitude().power_compress(cfg.compression_p)?;
    Ok((comp, spec))
}

/// Raw (un-normalized) motion-vector features of one landmark file.
pub fn utterance_features(landmark_path: &str) -> Result<FeatureSeq> {
    let track = parse_landmarks(landmark_path)
        .with_context(|| format!("parse landmarks {landmark_path}"))?;
    let up = upsample_track(&track, TARGET_FPS)?;
    Ok(motion_vectors(&up)?)
}

/// Computes spectrogram and feature statistics for every speaker. The
/// scope selects which utterances feed the statistics: all of the
/// speaker's corpus utterances, or only those appearing as manifest
/// targets.
pub fn compute_speaker_caches(
    corpus: &avse_core::mixture::Corpus,
    manifests: &[&Manifest],
    cfg: &PipelineConfig,
) -> Result<BTreeMap<String, SpeakerCache>> {
    let mut selected: BTreeMap<String, Vec<UtteranceRecord>> = BTreeMap::new();
    match cfg.dataset.stats_scope {
        StatsScope::All => {
            for (speaker, utts) in corpus.speakers() {
                selected.insert(speaker.clone(), utts.clone());
            }
        }
        StatsScope::Targets => {
            for manifest in manifests {
                for entry in &manifest.entries {
                    let list = selected.entry(entry.target.speaker_id.clone()).or_default();
                    if !list
                        .iter()
                        .any(|u| u.utterance_id == entry.target.utterance_id)
                    {
                        list.push(entry.target.clone());
                    }
                }
            }
        }
    }

    let mut caches = BTreeMap::new();
    for (speaker, utterances) in selected {
        let mut specs = Vec::new();
        let mut feats = Vec::new();
        for utt in &utterances {
            let wave = load_wave(&utt.audio_path, cfg)?;
            let (comp, _) = compressed_spec(&wave, cfg)?;
            specs.push(comp);
            feats.push(utterance_features(&utt.landmark_path)?);
        }
        let spec = compute_speaker_stats(&specs)?;
        let feat = compute_feature_stats(&feats)?;
        caches.insert(speaker, SpeakerCache { spec, feat });
    }
    Ok(caches)
}

/// Everything the model and the losses need for one mixture entry.
pub struct EntryTensors {
    /// Compressed un-normalized mixture spectrogram.
    pub y_comp: MagSpectrogram,
    /// Normalized mixture spectrogram (network input).
    pub y_norm: MagSpectrogram,
    /// Complex mixture spectrogram (phase source).
    pub noisy: ComplexSpectrogram,
    /// Normalized, length-aligned motion features.
    pub features: FeatureSeq,
    /// Clean target, compressed, scaled into the mixture domain.
    pub s_comp_scaled: MagSpectrogram,
    /// Clean target, compressed, in the speaker's own domain.
    pub s_comp: MagSpectrogram,
    /// Mixture waveform (noisy baseline for evaluation).
    pub mixture: Waveform,
    /// Clean reference waveform at the pipeline rate.
    pub reference: Waveform,
}

pub fn mixture_wav_path(mixtures_dir: &Path, entry: &MixtureEntry) -> std::path::PathBuf {
    mixtures_dir.join(format!("{}.wav", entry.id))
}

/// Loads and transforms one manifest entry.
pub fn load_entry_tensors(
    entry: &MixtureEntry,
    mixtures_dir: &Path,
    cache: &SpeakerCache,
    cfg: &PipelineConfig,
) -> Result<EntryTensors> {
    let mix_path = mixture_wav_path(mixtures_dir, entry);
    let mixture: Waveform = read_wav(&mix_path)
        .with_context(|| format!("read mixture {}", mix_path.display()))?;
    let (y_comp, noisy) = compressed_spec(&mixture, cfg)?;
    let y_norm = y_comp.normalize(&cache.spec)?;

    let reference = load_wave(&entry.target.audio_path, cfg)?;
    let (s_comp, clean_spec) = compressed_spec(&reference, cfg)?;
    if clean_spec.frames() != noisy.frames() {
        return Err(anyhow!(
            "entry {}: clean/mixture frame mismatch ({} vs {})",
            entry.id,
            clean_spec.frames(),
            noisy.frames()
        ));
    }
    // The rendered mixture was rescaled after summation; scale the linear
    // magnitude identically before compressing so the oracle ratio holds.
    let s_comp_scaled = if entry.rescale != 1.0 {
        let scaled = clean_spec.magnitude().into_grid().map(|v| v * entry.rescale);
        MagSpectrogram::linear(scaled).power_compress(cfg.compression_p)?
    } else {
        s_comp.clone()
    };

    let raw_features = utterance_features(&entry.target.landmark_path)?;
    let normalized = normalize_features(&raw_features, &cache.feat)?;
    let features = align_lengths(&normalized, noisy.frames())?;

    Ok(EntryTensors {
        y_comp,
        y_norm,
        noisy,
        features,
        s_comp_scaled,
        s_comp,
        mixture,
        reference,
    })
}

/// Oracle binary mask for the entry's target, thresholded in the speaker's
/// statistics domain (independent of interferers and mixture gain).
pub fn entry_tbm(tensors: &EntryTensors, cache: &SpeakerCache, cfg: &PipelineConfig) -> Result<Grid<f64>> {
    let thr = ltass_threshold(&cache.spec, cfg.mask.alpha);
    let tbm = compute_tbm(&tensors.s_comp, &thr)?;
    Ok(tbm.to_scalar_grid())
}

/// Builds the training sample for one entry.
pub fn entry_train_sample(
    tensors: &EntryTensors,
    cache: &SpeakerCache,
    cfg: &PipelineConfig,
) -> Result<TrainSample<f64>> {
    let tbm = entry_tbm(tensors, cache, cfg)?;
    Ok(TrainSample {
        features: tensors.features.grid().clone(),
        y_norm: tensors.y_norm.grid().clone(),
        y_comp: tensors.y_comp.grid().clone(),
        s_comp: tensors.s_comp_scaled.grid().clone(),
        tbm,
    })
}

/// Applies an estimated mask grid to the compressed mixture and rebuilds
/// the waveform with the mixture phase.
pub fn mask_to_waveform(
    mask: &Grid<f64>,
    tensors: &EntryTensors,
    cfg: &PipelineConfig,
) -> Result<Waveform> {
    let masked = avse_core::mask::apply_mask_grid(mask, &tensors.y_comp)?;
    let linear = masked.power_expand(cfg.compression_p)?;
    Ok(reconstruct_with_noisy_phase(
        &linear,
        &tensors.noisy,
        &cfg.stft_config(),
    )?)
}

/// Round-trip reconstruction of the mixture itself (the "noisy" baseline
/// passed through the same analysis/synthesis chain).
pub fn mixture_resynthesized(tensors: &EntryTensors, cfg: &PipelineConfig) -> Result<Waveform> {
    Ok(istft(&tensors.noisy, &cfg.stft_config())?)
}
