//! `oracle`: upper-bound evaluation of the two oracle masks against the
//! noisy baseline, per manifest entry and on average.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use avse_core::eval::sdr_bss;
use avse_core::mask::{apply_amplitude_mask, apply_binary_mask, compute_iam, compute_tbm, ltass_threshold};
use avse_core::mixture::read_manifest;

use crate::config::PipelineConfig;
use crate::pipeline::{load_entry_tensors, read_speaker_cache};

use super::{EXIT_OK, EXIT_PARTIAL};

#[derive(Debug, Serialize)]
struct OracleRow {
    id: String,
    speakers: usize,
    noisy_sdr_db: f64,
    tbm_sdr_db: f64,
    iam_sdr_db: f64,
}

pub struct OracleSummary {
    pub rows: usize,
    pub mean_noisy: f64,
    pub mean_tbm: f64,
    pub mean_iam: f64,
}

pub fn run(
    cfg: &PipelineConfig,
    split: &str,
    manifest_override: Option<PathBuf>,
    mixtures_override: Option<PathBuf>,
) -> Result<i32> {
    let (summary, failures) = evaluate_oracles(cfg, split, manifest_override, mixtures_override)?;
    println!(
        "oracle[{split}]: {} entries | noisy {:.2} dB | tbm {:.2} dB | iam {:.2} dB",
        summary.rows, summary.mean_noisy, summary.mean_tbm, summary.mean_iam
    );
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

/// Shared by the CLI and the acceptance suite.
pub fn evaluate_oracles(
    cfg: &PipelineConfig,
    split: &str,
    manifest_override: Option<PathBuf>,
    mixtures_override: Option<PathBuf>,
) -> Result<(OracleSummary, usize)> {
    let manifest_path = manifest_override.unwrap_or_else(|| cfg.manifest_path(split));
    let mixtures_dir = mixtures_override.unwrap_or_else(|| cfg.mixtures_dir(split));
    let manifest = read_manifest(&manifest_path)
        .with_context(|| format!("read manifest {}", manifest_path.display()))?;
    if manifest.entries.is_empty() {
        anyhow::bail!("manifest {} has no entries", manifest_path.display());
    }

    let results: Vec<Result<OracleRow>> = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<OracleRow> {
            let cache = read_speaker_cache(&cfg.stats_path(&entry.target.speaker_id))?;
            let tensors = load_entry_tensors(entry, &mixtures_dir, &cache, cfg)?;

            let thr = ltass_threshold(&cache.spec, cfg.mask.alpha);
            let tbm = compute_tbm(&tensors.s_comp, &thr)?;
            let tbm_masked = apply_binary_mask(&tbm, &tensors.y_comp)?;
            let tbm_linear = tbm_masked.power_expand(cfg.compression_p)?;
            let tbm_out = avse_core::dsp::reconstruct_with_noisy_phase(
                &tbm_linear,
                &tensors.noisy,
                &cfg.stft_config(),
            )?;

            let iam = compute_iam(&tensors.s_comp_scaled, &tensors.y_comp, cfg.mask.clip)?;
            let iam_masked = apply_amplitude_mask(&iam, &tensors.y_comp)?;
            let iam_linear = iam_masked.power_expand(cfg.compression_p)?;
            let iam_out = avse_core::dsp::reconstruct_with_noisy_phase(
                &iam_linear,
                &tensors.noisy,
                &cfg.stft_config(),
            )?;

            let taps = cfg.sdr.filter_taps;
            let noisy_sdr = sdr_bss(&tensors.mixture, &tensors.reference, taps)?.sdr_db;
            let tbm_sdr = sdr_bss(&tbm_out, &tensors.reference, taps)?.sdr_db;
            let iam_sdr = sdr_bss(&iam_out, &tensors.reference, taps)?.sdr_db;

            Ok(OracleRow {
                id: entry.id.clone(),
                speakers: entry.interferers.len() + 1,
                noisy_sdr_db: noisy_sdr,
                tbm_sdr_db: tbm_sdr,
                iam_sdr_db: iam_sdr,
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = 0usize;
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => {
                eprintln!("warning: oracle entry {} failed: {e:#}", entry.id);
                failures += 1;
            }
        }
    }
    if rows.is_empty() {
        anyhow::bail!("every oracle entry failed");
    }

    let results_dir = cfg.results_dir();
    std::fs::create_dir_all(&results_dir)?;
    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(
        results_dir.join(format!("oracle_{split}.jsonl")),
    )?);
    for row in &rows {
        serde_json::to_writer(&mut jsonl, row)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;

    let mut table = String::new();
    table.push_str(&format!(
        "{:<28} {:>4} {:>10} {:>10} {:>10}\n",
        "entry", "spk", "noisy", "tbm", "iam"
    ));
    for row in &rows {
        table.push_str(&format!(
            "{:<28} {:>4} {:>10.2} {:>10.2} {:>10.2}\n",
            row.id, row.speakers, row.noisy_sdr_db, row.tbm_sdr_db, row.iam_sdr_db
        ));
    }
    let n = rows.len() as f64;
    let mean_noisy = rows.iter().map(|r| r.noisy_sdr_db).sum::<f64>() / n;
    let mean_tbm = rows.iter().map(|r| r.tbm_sdr_db).sum::<f64>() / n;
    let mean_iam = rows.iter().map(|r| r.iam_sdr_db).sum::<f64>() / n;
    table.push_str(&format!(
        "{:<28} {:>4} {:>10.2} {:>10.2} {:>10.2}\n",
        "mean", "", mean_noisy, mean_tbm, mean_iam
    ));
    std::fs::write(results_dir.join(format!("oracle_{split}.txt")), &table)?;
    print!("{table}");

    Ok((
        OracleSummary {
            rows: rows.len(),
            mean_noisy,
            mean_tbm,
            mean_iam,
        },
        failures,
    ))
}
