//! `enhance`: run a trained checkpoint over a mixture and reconstruct the
//! enhanced waveform (single-file mode or whole-manifest batch mode).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use avse_core::dsp::{read_wav, write_wav};
use avse_core::grid::Grid;
use avse_core::landmarks::{align_lengths, normalize_features};
use avse_core::mixture::read_manifest;
use avse_core::neural::checkpoint::load;
use avse_core::neural::ModelGraph;
use avse_core::{ModelGraph as PipelineGraph, Waveform};

use crate::config::PipelineConfig;
use crate::pipeline::{
    compressed_spec, load_entry_tensors, read_speaker_cache, utterance_features, EntryTensors,
    SpeakerCache,
};
use crate::render;

use super::{EXIT_OK, EXIT_PARTIAL};

pub struct SingleArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub landmarks: PathBuf,
    pub speaker: String,
    pub output: PathBuf,
    pub png: bool,
}

pub struct BatchArgs {
    pub checkpoint: PathBuf,
    pub split: String,
    pub manifest: Option<PathBuf>,
    pub mixtures_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub png: bool,
}

fn load_graph(cfg: &PipelineConfig, path: &Path) -> Result<PipelineGraph> {
    let (graph, _) = load::<f64>(path).with_context(|| format!("load {}", path.display()))?;
    let bins = cfg.stft_config().bins();
    if graph.config().spec_bins != bins {
        anyhow::bail!(
            "checkpoint expects {} spectrogram bins, config produces {bins}",
            graph.config().spec_bins
        );
    }
    Ok(graph)
}

/// The full enhancement path from tensors to the output waveform, shared
/// by both modes and the acceptance tests.
pub fn enhance_tensors(
    graph: &ModelGraph<f64>,
    tensors: &EntryTensors,
    cfg: &PipelineConfig,
) -> Result<(Waveform, Grid<f64>)> {
    let (mask, _) = graph.forward(tensors.features.grid(), tensors.y_norm.grid(), None)?;
    let wave = crate::pipeline::mask_to_waveform(&mask, tensors, cfg)?;
    Ok((wave, mask))
}

fn emit_pngs(
    output: &Path,
    tensors: &EntryTensors,
    mask: &Grid<f64>,
    cfg: &PipelineConfig,
) -> Result<()> {
    let stem = output.with_extension("");
    let stem = stem.to_string_lossy();
    let mix_mag = tensors.noisy.magnitude();
    render::spectrogram_png(mix_mag.grid(), Path::new(&format!("{stem}.mix.png")))?;
    render::mask_png(mask, Path::new(&format!("{stem}.mask.png")))?;
    let enhanced = avse_core::mask::apply_mask_grid(mask, &tensors.y_comp)?
        .power_expand(cfg.compression_p)?;
    render::spectrogram_png(enhanced.grid(), Path::new(&format!("{stem}.enh.png")))?;
    Ok(())
}

pub fn run_single(cfg: &PipelineConfig, args: &SingleArgs) -> Result<i32> {
    let graph = load_graph(cfg, &args.checkpoint)?;
    let cache = read_speaker_cache(&cfg.stats_path(&args.speaker))?;
    let tensors = single_tensors(&args.input, &args.landmarks, &cache, cfg)?;
    let (wave, mask) = enhance_tensors(&graph, &tensors, cfg)?;
    if let Some(parent) = args.output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_wav(&wave, &args.output)?;
    if args.png {
        emit_pngs(&args.output, &tensors, &mask, cfg)?;
    }
    println!("wrote {}", args.output.display());
    Ok(EXIT_OK)
}

/// Builds tensors for a standalone mixture file (no manifest entry). The
/// reference fields are filled with the mixture itself.
fn single_tensors(
    input: &Path,
    landmarks: &Path,
    cache: &SpeakerCache,
    cfg: &PipelineConfig,
) -> Result<EntryTensors> {
    let raw: Waveform = read_wav(input).with_context(|| format!("read {}", input.display()))?;
    let mixture = avse_core::dsp::resample(&raw, cfg.sample_rate)?;
    let (y_comp, noisy) = compressed_spec(&mixture, cfg)?;
    let y_norm = y_comp.normalize(&cache.spec)?;
    let raw_features = utterance_features(landmarks.to_string_lossy().as_ref())?;
    let normalized = normalize_features(&raw_features, &cache.feat)?;
    let features = align_lengths(&normalized, noisy.frames())?;
    Ok(EntryTensors {
        y_comp: y_comp.clone(),
        y_norm,
        noisy,
        features,
        s_comp_scaled: y_comp.clone(),
        s_comp: y_comp,
        reference: mixture.clone(),
        mixture,
    })
}

pub fn run_batch(cfg: &PipelineConfig, args: &BatchArgs) -> Result<i32> {
    let graph = load_graph(cfg, &args.checkpoint)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| cfg.manifest_path(&args.split));
    let mixtures_dir = args
        .mixtures_dir
        .clone()
        .unwrap_or_else(|| cfg.mixtures_dir(&args.split));
    let output_dir = args
        .output_dir
        .clone()
        .unwrap_or_else(|| cfg.enhanced_dir(&args.split));
    let manifest = read_manifest(&manifest_path)
        .with_context(|| format!("read manifest {}", manifest_path.display()))?;
    std::fs::create_dir_all(&output_dir)?;

    let results: Vec<Result<()>> = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<()> {
            let cache = read_speaker_cache(&cfg.stats_path(&entry.target.speaker_id))?;
            let tensors = load_entry_tensors(entry, &mixtures_dir, &cache, cfg)?;
            let (wave, mask) = enhance_tensors(&graph, &tensors, cfg)?;
            let out = output_dir.join(format!("{}.wav", entry.id));
            write_wav(&wave, &out)?;
            if args.png {
                emit_pngs(&out, &tensors, &mask, cfg)?;
            }
            Ok(())
        })
        .collect();

    let mut failures = 0usize;
    for (entry, result) in manifest.entries.iter().zip(results) {
        if let Err(e) = result {
            eprintln!("warning: enhance entry {} failed: {e:#}", entry.id);
            failures += 1;
        }
    }
    println!(
        "enhanced {} mixtures -> {} ({failures} failures)",
        manifest.entries.len() - failures,
        output_dir.display()
    );
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}
