//! `evaluate`: SDR tables for enhanced outputs against the clean
//! references, with the unprocessed mixture as the "noisy" baseline,
//! grouped by talker count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use avse_core::dsp::read_wav;
use avse_core::eval::{sdr_bss, si_sdr, SdrVariant};
use avse_core::mixture::read_manifest;
use avse_core::Waveform;

use crate::config::PipelineConfig;
use crate::pipeline::load_wave;

use super::{EXIT_OK, EXIT_PARTIAL};

#[derive(Debug, Clone, Serialize)]
struct EvalRecord {
    id: String,
    speakers: usize,
    variant: SdrVariant,
    sdr_db: f64,
    baseline_sdr_db: f64,
}

pub struct EvalSummary {
    /// (condition speaker count, variant) -> (mean enhanced, mean noisy, n)
    pub by_condition: BTreeMap<(usize, String), (f64, f64, usize)>,
    pub failures: Vec<String>,
}

pub fn run(
    cfg: &PipelineConfig,
    split: &str,
    manifest_override: Option<PathBuf>,
    mixtures_override: Option<PathBuf>,
    enhanced_override: Option<PathBuf>,
) -> Result<i32> {
    let summary = evaluate_split(cfg, split, manifest_override, mixtures_override, enhanced_override)?;
    Ok(if summary.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    })
}

pub fn evaluate_split(
    cfg: &PipelineConfig,
    split: &str,
    manifest_override: Option<PathBuf>,
    mixtures_override: Option<PathBuf>,
    enhanced_override: Option<PathBuf>,
) -> Result<EvalSummary> {
    let manifest_path = manifest_override.unwrap_or_else(|| cfg.manifest_path(split));
    let mixtures_dir = mixtures_override.unwrap_or_else(|| cfg.mixtures_dir(split));
    let enhanced_dir = enhanced_override.unwrap_or_else(|| cfg.enhanced_dir(split));
    let manifest = read_manifest(&manifest_path)
        .with_context(|| format!("read manifest {}", manifest_path.display()))?;
    if manifest.entries.is_empty() {
        anyhow::bail!("manifest {} has no entries", manifest_path.display());
    }

    let taps = cfg.sdr.filter_taps;
    let results: Vec<Result<Vec<EvalRecord>>> = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<Vec<EvalRecord>> {
            let enhanced_path = enhanced_dir.join(format!("{}.wav", entry.id));
            if !enhanced_path.is_file() {
                anyhow::bail!("missing enhanced file {}", enhanced_path.display());
            }
            let enhanced: Waveform = read_wav(&enhanced_path)?;
            let mixture: Waveform = read_wav(mixtures_dir.join(format!("{}.wav", entry.id)))?;
            let reference = load_wave(&entry.target.audio_path, cfg)?;
            if enhanced.len() != reference.len() {
                anyhow::bail!(
                    "enhanced length {} does not match reference {}",
                    enhanced.len(),
                    reference.len()
                );
            }
            let speakers = entry.interferers.len() + 1;
            Ok(vec![
                EvalRecord {
                    id: entry.id.clone(),
                    speakers,
                    variant: SdrVariant::BssProj,
                    sdr_db: sdr_bss(&enhanced, &reference, taps)?.sdr_db,
                    baseline_sdr_db: sdr_bss(&mixture, &reference, taps)?.sdr_db,
                },
                EvalRecord {
                    id: entry.id.clone(),
                    speakers,
                    variant: SdrVariant::SiSdr,
                    sdr_db: si_sdr(&enhanced, &reference)?.sdr_db,
                    baseline_sdr_db: si_sdr(&mixture, &reference)?.sdr_db,
                },
            ])
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(mut r) => records.append(&mut r),
            Err(e) => {
                eprintln!("warning: evaluate entry {} failed: {e:#}", entry.id);
                failures.push(entry.id.clone());
            }
        }
    }
    if records.is_empty() {
        anyhow::bail!("every evaluation entry failed");
    }

    let results_dir = cfg.results_dir();
    std::fs::create_dir_all(&results_dir)?;
    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(
        results_dir.join(format!("eval_{split}.jsonl")),
    )?);
    for rec in &records {
        serde_json::to_writer(&mut jsonl, rec)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;

    // Aggregate per (condition, variant).
    let mut by_condition: BTreeMap<(usize, String), (f64, f64, usize)> = BTreeMap::new();
    for rec in &records {
        let key = (
            rec.speakers,
            match rec.variant {
                SdrVariant::BssProj => "sdr".to_string(),
                SdrVariant::SiSdr => "si_sdr".to_string(),
            },
        );
        let slot = by_condition.entry(key).or_insert((0.0, 0.0, 0));
        slot.0 += rec.sdr_db;
        slot.1 += rec.baseline_sdr_db;
        slot.2 += 1;
    }
    for value in by_condition.values_mut() {
        value.0 /= value.2 as f64;
        value.1 /= value.2 as f64;
    }

    let mut table = String::new();
    table.push_str(&format!(
        "{:<12} {:<8} {:>8} {:>10} {:>10} {:>10}\n",
        "condition", "variant", "entries", "noisy", "enhanced", "delta"
    ));
    for ((speakers, variant), (enh, noisy, n)) in &by_condition {
        table.push_str(&format!(
            "{:<12} {:<8} {:>8} {:>10.2} {:>10.2} {:>10.2}\n",
            format!("{speakers} speakers"),
            variant,
            n,
            noisy,
            enh,
            enh - noisy
        ));
    }
    if !failures.is_empty() {
        table.push_str(&format!("failed entries: {}\n", failures.join(", ")));
    }
    std::fs::write(results_dir.join(format!("eval_{split}.txt")), &table)?;
    print!("{table}");

    Ok(EvalSummary {
        by_condition,
        failures,
    })
}
