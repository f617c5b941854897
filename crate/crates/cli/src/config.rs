//! Pipeline configuration: one JSON file, fully validated before any
//! command touches its outputs. Environment variables `AVSE_CORPUS_DIR`
//! and `AVSE_OUT_DIR` override the two path fields.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use avse_core::dsp::StftConfig;
use avse_core::mixture::GainPolicy;
use avse_core::neural::ModelConfig;
use avse_core::trainer::{TrainConfig, TrainStage};

/// Error category that maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StftSection {
    #[serde(default = "default_fft_size")]
    pub fft_size: usize,
    #[serde(default = "default_win_length")]
    pub win_length: usize,
    #[serde(default = "default_hop_length")]
    pub hop_length: usize,
}

fn default_fft_size() -> usize {
    512
}
fn default_win_length() -> usize {
    400
}
fn default_hop_length() -> usize {
    160
}

impl Default for StftSection {
    fn default() -> Self {
        StftSection {
            fft_size: 512,
            win_length: 400,
            hop_length: 160,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaskSection {
    /// LTASS threshold multiplier.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Amplitude-mask clip.
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn default_alpha() -> f64 {
    0.6
}
fn default_clip() -> f64 {
    10.0
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection {
            alpha: 0.6,
            clip: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_units")]
    pub units: usize,
    #[serde(default = "default_vl2m_layers")]
    pub vl2m_layers: usize,
    #[serde(default = "default_concat_layers")]
    pub concat_layers: usize,
    #[serde(default = "default_refine_layers")]
    pub refine_layers: usize,
}

fn default_units() -> usize {
    250
}
fn default_vl2m_layers() -> usize {
    5
}
fn default_concat_layers() -> usize {
    3
}
fn default_refine_layers() -> usize {
    1
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            units: 250,
            vl2m_layers: 5,
            concat_layers: 3,
            refine_layers: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Ablation: train refinement models without the oracle pretrain stage.
    #[serde(default)]
    pub skip_pretrain: bool,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch_size() -> usize {
    8
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    5
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            max_epochs: 100,
            patience: 5,
            grad_clip: None,
            skip_pretrain: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStyle {
    Grid,
    Timit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsScope {
    /// Statistics over all of a speaker's corpus utterances.
    All,
    /// Statistics over the utterances selected as targets in the split's
    /// manifest.
    Targets,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_style")]
    pub style: DatasetStyle,
    /// Target utterances per speaker; null uses every utterance.
    #[serde(default)]
    pub n_utt_per_speaker: Option<usize>,
    #[serde(default = "default_mixes_per_utt")]
    pub mixes_per_utt: usize,
    #[serde(default = "default_n_interferers")]
    pub n_interferers: usize,
    /// Duration-gap bound in seconds (TIMIT style).
    #[serde(default = "default_max_dur_gap")]
    pub max_dur_gap: f64,
    /// Speaker counts for train/val/test.
    #[serde(default = "default_split")]
    pub split: (usize, usize, usize),
    #[serde(default = "default_gain_policy")]
    pub gain_policy: String,
    #[serde(default)]
    pub exclude_speakers: Vec<String>,
    #[serde(default = "default_stats_scope")]
    pub stats_scope: StatsScope,
}

fn default_style() -> DatasetStyle {
    DatasetStyle::Grid
}
fn default_mixes_per_utt() -> usize {
    3
}
fn default_n_interferers() -> usize {
    1
}
fn default_max_dur_gap() -> f64 {
    2.0
}
fn default_split() -> (usize, usize, usize) {
    (25, 4, 4)
}
fn default_gain_policy() -> String {
    "unit".into()
}
fn default_stats_scope() -> StatsScope {
    StatsScope::All
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            style: DatasetStyle::Grid,
            n_utt_per_speaker: Some(200),
            mixes_per_utt: 3,
            n_interferers: 1,
            max_dur_gap: 2.0,
            split: (25, 4, 4),
            gain_policy: "unit".into(),
            exclude_speakers: Vec::new(),
            stats_scope: StatsScope::All,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SdrSection {
    #[serde(default = "default_filter_taps")]
    pub filter_taps: usize,
}

fn default_filter_taps() -> usize {
    512
}

impl Default for SdrSection {
    fn default() -> Self {
        SdrSection { filter_taps: 512 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Pipeline sample rate; inputs at other rates are resampled.
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_compression")]
    pub compression_p: f64,
    #[serde(default)]
    pub stft: StftSection,
    #[serde(default)]
    pub mask: MaskSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub sdr: SdrSection,
}

fn default_sample_rate() -> u32 {
    16000
}
fn default_compression() -> f64 {
    0.3
}

impl PipelineConfig {
    /// Loads, applies environment path overrides, and checks every value.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("cannot parse {}: {e}", path.display())))?;
        if let Ok(dir) = std::env::var("AVSE_CORPUS_DIR") {
            cfg.corpus_dir = PathBuf::from(dir);
        }
        if let Ok(dir) = std::env::var("AVSE_OUT_DIR") {
            cfg.out_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ConfigError(msg).into());
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        if !(self.compression_p > 0.0 && self.compression_p <= 1.0) {
            return fail(format!(
                "compression_p must be in (0, 1], got {}",
                self.compression_p
            ));
        }
        self.stft_config()
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if self.mask.clip <= 0.0 {
            return fail("mask.clip must be positive".into());
        }
        if self.model.units == 0
            || self.model.vl2m_layers == 0
            || self.model.concat_layers == 0
            || self.model.refine_layers == 0
        {
            return fail("model dims must be >= 1".into());
        }
        if self.train.patience == 0 || self.train.batch_size == 0 || self.train.max_epochs == 0 {
            return fail("train.patience, batch_size, max_epochs must be >= 1".into());
        }
        if self.dataset.mixes_per_utt == 0 || self.dataset.n_interferers == 0 {
            return fail("dataset.mixes_per_utt and n_interferers must be >= 1".into());
        }
        if self.dataset.max_dur_gap < 0.0 {
            return fail("dataset.max_dur_gap must be >= 0".into());
        }
        GainPolicy::parse(&self.dataset.gain_policy).map_err(|e| ConfigError(e.to_string()))?;
        if self.sdr.filter_taps == 0 {
            return fail("sdr.filter_taps must be >= 1".into());
        }
        Ok(())
    }

    /// Checks the paths a command is about to read.
    pub fn require_corpus(&self) -> Result<()> {
        if !self.corpus_dir.is_dir() {
            return Err(ConfigError(format!(
                "corpus_dir {} does not exist",
                self.corpus_dir.display()
            ))
            .into());
        }
        Ok(())
    }

    /// Canonical JSON echo of the parsed configuration.
    pub fn canonical(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn stft_config(&self) -> StftConfig {
        StftConfig {
            fft_size: self.stft.fft_size,
            win_length: self.stft.win_length,
            hop_length: self.stft.hop_length,
            window: avse_core::dsp::WindowKind::Hann,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feat_dim: avse_core::landmarks::FEATURE_DIM,
            spec_bins: self.stft_config().bins(),
            units: self.model.units,
            vl2m_layers: self.model.vl2m_layers,
            concat_layers: self.model.concat_layers,
            refine_layers: self.model.refine_layers,
            iam_clip: self.mask.clip,
        }
    }

    pub fn train_config(&self, stage: TrainStage) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.eps,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed: self.seed,
            stage,
            grad_clip: self.train.grad_clip,
        }
    }

    pub fn gain_policy(&self) -> GainPolicy {
        GainPolicy::parse(&self.dataset.gain_policy).expect("validated")
    }

    // Output layout.
    pub fn split_path(&self) -> PathBuf {
        self.out_dir.join("split.json")
    }
    pub fn manifest_path(&self, split: &str) -> PathBuf {
        self.out_dir.join("manifests").join(format!("{split}.jsonl"))
    }
    pub fn mixtures_dir(&self, split: &str) -> PathBuf {
        self.out_dir.join("mixtures").join(split)
    }
    pub fn stats_path(&self, speaker: &str) -> PathBuf {
        self.out_dir.join("stats").join(format!("{speaker}.json"))
    }
    pub fn checkpoint_path(&self, kind: &str) -> PathBuf {
        self.out_dir.join("checkpoints").join(format!("{kind}.ckpt"))
    }
    pub fn history_path(&self, kind: &str) -> PathBuf {
        self.out_dir
            .join("checkpoints")
            .join(format!("{kind}.history.jsonl"))
    }
    pub fn enhanced_dir(&self, split: &str) -> PathBuf {
        self.out_dir.join("enhanced").join(split)
    }
    pub fn results_dir(&self) -> PathBuf {
        self.out_dir.join("results")
    }
}

/// Writes a config with the given paths and defaults elsewhere (used by
/// tests and the fixture generator).
pub fn write_default_config(
    path: &Path,
    corpus_dir: &Path,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    let cfg = PipelineConfig {
        seed,
        corpus_dir: corpus_dir.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        sample_rate: 16000,
        compression_p: 0.3,
        stft: StftSection::default(),
        mask: MaskSection::default(),
        model: ModelSection::default(),
        train: TrainSection::default(),
        dataset: DatasetSection::default(),
        sdr: SdrSection::default(),
    };
    std::fs::write(path, cfg.canonical()).context("write config")?;
    Ok(())
}
