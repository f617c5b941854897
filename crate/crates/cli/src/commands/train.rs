//! `train`: builds training tensors from the prepared dataset and runs the
//! optimization loop for the requested architecture.

use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;

use avse_core::mixture::read_manifest;
use avse_core::neural::checkpoint::{save, CheckpointMeta};
use avse_core::neural::{ModelGraph, ModelKind};
use avse_core::trainer::{fit, fit_two_stage, write_history, TrainSample, TrainStage};

use crate::config::PipelineConfig;
use crate::pipeline::{entry_train_sample, load_entry_tensors, read_speaker_cache};

use super::EXIT_OK;

pub fn load_split_samples(cfg: &PipelineConfig, split: &str) -> Result<Vec<TrainSample<f64>>> {
    let manifest = read_manifest(cfg.manifest_path(split))
        .with_context(|| format!("read {split} manifest (run `avse prepare` first)"))?;
    let mixtures_dir = cfg.mixtures_dir(split);
    let samples: Vec<Result<TrainSample<f64>>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let cache = read_speaker_cache(&cfg.stats_path(&entry.target.speaker_id))?;
            let tensors = load_entry_tensors(entry, &mixtures_dir, &cache, cfg)?;
            entry_train_sample(&tensors, &cache, cfg)
        })
        .collect();
    samples.into_iter().collect()
}

pub fn run(
    cfg: &PipelineConfig,
    kind_label: &str,
    vl2m_checkpoint: Option<PathBuf>,
) -> Result<i32> {
    let kind = ModelKind::parse(kind_label)?;
    let train_set = load_split_samples(cfg, "train")?;
    let val_set = load_split_samples(cfg, "val")?;
    println!(
        "training {} on {} sequences (val {})",
        kind.label(),
        train_set.len(),
        val_set.len()
    );

    std::fs::create_dir_all(cfg.out_dir.join("checkpoints"))?;
    let model_config = cfg.model_config();

    let (model, best_epoch, best_val) = if kind.is_two_stage() {
        let ckpt = vl2m_checkpoint.unwrap_or_else(|| cfg.checkpoint_path("vl2m"));
        if !ckpt.is_file() {
            anyhow::bail!(
                "two-stage training needs a trained vl2m checkpoint at {} (train vl2m first or pass --vl2m-checkpoint)",
                ckpt.display()
            );
        }
        let stage_cfg = cfg.train_config(TrainStage::PretrainOracle);
        let refine_cfg = cfg.train_config(TrainStage::Refine);
        let result = fit_two_stage(
            kind,
            model_config,
            &train_set,
            &val_set,
            &stage_cfg,
            &refine_cfg,
            Some(&ckpt),
            cfg.train.skip_pretrain,
        )?;
        if let Some(stage1) = &result.stage1 {
            write_history(
                &stage1.history,
                cfg.out_dir
                    .join("checkpoints")
                    .join(format!("{}.stage1.history.jsonl", kind.label())),
            )?;
        }
        write_history(&result.stage2.history, cfg.history_path(kind.label()))?;
        (
            result.model,
            result.stage2.best_epoch,
            result.stage2.best_val_loss,
        )
    } else {
        let train_cfg = cfg.train_config(TrainStage::Single);
        let model = ModelGraph::<f64>::new(kind, model_config, cfg.seed);
        let result = fit(model, &train_set, &val_set, &train_cfg)?;
        if result.diverged {
            eprintln!("warning: validation loss diverged; keeping last good checkpoint");
        }
        write_history(&result.history, cfg.history_path(kind.label()))?;
        (result.model, result.best_epoch, result.best_val_loss)
    };

    let meta = CheckpointMeta {
        epoch: best_epoch as u32,
        val_loss: best_val,
        seed: cfg.seed,
    };
    let path = cfg.checkpoint_path(kind.label());
    save(&model, &meta, &path)?;
    println!(
        "saved {} (best epoch {best_epoch}, val loss {best_val:.6})",
        path.display()
    );
    Ok(EXIT_OK)
}
