//! `prepare`: split speakers, build mixture manifests, render mixture
//! WAVs, and cache per-speaker normalization statistics.

use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;

use avse_core::dsp::write_wav;
use avse_core::mixture::{
    build_manifest_grid_style, build_manifest_timit_style, fit_duration, mix, split_speakers,
    write_manifest, Manifest, ManifestParams, MixtureEntry,
};

use crate::config::{DatasetStyle, PipelineConfig};
use crate::pipeline::{
    compute_speaker_caches, load_wave, scan_corpus, write_speaker_cache,
};

use super::{EXIT_OK, EXIT_PARTIAL};

pub fn run(cfg: &PipelineConfig) -> Result<i32> {
    cfg.require_corpus()?;
    let (corpus, skipped_landmarks) = scan_corpus(cfg)?;
    if corpus.is_empty() {
        anyhow::bail!("corpus at {} contains no usable utterances", cfg.corpus_dir.display());
    }

    let plan = split_speakers(&corpus, cfg.dataset.split, cfg.seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::create_dir_all(cfg.out_dir.join("manifests"))?;

    let params = ManifestParams {
        n_utt_per_speaker: cfg.dataset.n_utt_per_speaker,
        mixes_per_utt: cfg.dataset.mixes_per_utt,
        n_interferers: cfg.dataset.n_interferers,
        gain_policy: cfg.gain_policy(),
        max_dur_gap: match cfg.dataset.style {
            DatasetStyle::Grid => None,
            DatasetStyle::Timit => Some(cfg.dataset.max_dur_gap),
        },
    };

    let mut manifests: Vec<(String, Manifest)> = Vec::new();
    for (name, speakers) in [
        ("train", &plan.train),
        ("val", &plan.val),
        ("test", &plan.test),
    ] {
        if speakers.is_empty() {
            continue;
        }
        let subset = corpus.subset(speakers);
        let manifest = match cfg.dataset.style {
            DatasetStyle::Grid => build_manifest_grid_style(&subset, &params, cfg.seed)?,
            DatasetStyle::Timit => build_manifest_timit_style(&subset, &params, cfg.seed)?,
        };
        manifests.push((name.to_string(), manifest));
    }

    // Render mixtures; the applied rescale factors go back into the
    // manifest before it is written.
    let mut render_failures = 0usize;
    for (name, manifest) in &mut manifests {
        let dir = cfg.mixtures_dir(name);
        std::fs::create_dir_all(&dir)?;
        let results: Vec<Result<f64>> = manifest
            .entries
            .par_iter()
            .map(|entry| render_entry(entry, &dir, cfg))
            .collect();
        for (entry, result) in manifest.entries.iter_mut().zip(results) {
            match result {
                Ok(rescale) => entry.rescale = rescale,
                Err(e) => {
                    eprintln!("warning: entry {} failed to render: {e:#}", entry.id);
                    render_failures += 1;
                }
            }
        }
        write_manifest(manifest, cfg.manifest_path(name))?;
    }

    // Per-speaker statistics caches.
    let manifest_refs: Vec<&Manifest> = manifests.iter().map(|(_, m)| m).collect();
    let caches = compute_speaker_caches(&corpus, &manifest_refs, cfg)?;
    for (speaker, cache) in &caches {
        write_speaker_cache(cache, &cfg.stats_path(speaker))?;
    }

    std::fs::write(cfg.split_path(), serde_json::to_string_pretty(&plan)?)
        .context("write split plan")?;

    for (name, manifest) in &manifests {
        println!(
            "{name}: {} mixtures ({} targets skipped)",
            manifest.entries.len(),
            manifest.header.skipped
        );
    }
    println!(
        "speakers: {} (stats cached), utterances without landmarks: {skipped_landmarks}",
        caches.len()
    );

    Ok(if render_failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn render_entry(entry: &MixtureEntry, dir: &Path, cfg: &PipelineConfig) -> Result<f64> {
    let target = load_wave(&entry.target.audio_path, cfg)?;
    let fitted: Vec<_> = entry
        .interferers
        .iter()
        .map(|i| -> Result<_> {
            let w = load_wave(&i.audio_path, cfg)?;
            Ok(fit_duration(&w, target.len()))
        })
        .collect::<Result<_>>()?;
    let result = mix(&target, &fitted, cfg.gain_policy())?;
    write_wav(&result.mixture, dir.join(format!("{}.wav", entry.id)))
        .with_context(|| format!("write mixture {}", entry.id))?;
    Ok(result.rescale)
}
