use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use avse_cli::commands::{self, enhance, evaluate, oracle, prepare, train};
use avse_cli::config::{ConfigError, PipelineConfig};
use avse_cli::fixture::{generate_corpus, FixtureParams};

#[derive(Parser)]
#[command(name = "avse", version, about = "Landmark-driven multi-talker speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Bound on per-entry parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build splits and manifests, render mixtures, cache speaker stats.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the oracle masks (upper bounds) on a split.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        mixtures_dir: Option<PathBuf>,
    },
    /// Train one of the four architectures.
    Train {
        #[command(flatten)]
        common: Common,
        /// vl2m | vl2m_ref | av_concat | av_concat_ref
        #[arg(long)]
        kind: String,
        /// VL2M checkpoint for two-stage training (defaults to the one
        /// under the output directory).
        #[arg(long)]
        vl2m_checkpoint: Option<PathBuf>,
    },
    /// Enhance a single mixture or a whole manifest.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Single-file mode: mixture WAV.
        #[arg(long, requires = "landmarks", requires = "speaker", requires = "output")]
        input: Option<PathBuf>,
        /// Single-file mode: landmark CSV of the target speaker.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Single-file mode: speaker id for the statistics cache.
        #[arg(long)]
        speaker: Option<String>,
        /// Single-file mode: output WAV path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Batch mode: split whose manifest is enhanced.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        mixtures_dir: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Also emit mixture/mask/enhanced spectrogram PNGs.
        #[arg(long)]
        png: bool,
    },
    /// SDR tables for enhanced outputs.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        mixtures_dir: Option<PathBuf>,
        #[arg(long)]
        enhanced_dir: Option<PathBuf>,
    },
    /// Generate a synthetic demo corpus (WAV + landmark CSV pairs).
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 12)]
        utterances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.6)]
        min_dur: f64,
        #[arg(long, default_value_t = 1.2)]
        max_dur: f64,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    eprintln!("{}", cfg.canonical());
    Ok(cfg)
}

fn install_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Prepare { common } => {
            let cfg = load_config(&common)?;
            install_pool(common.jobs)?;
            prepare::run(&cfg)
        }
        Command::Oracle {
            common,
            split,
            manifest,
            mixtures_dir,
        } => {
            let cfg = load_config(&common)?;
            install_pool(common.jobs)?;
            oracle::run(&cfg, &split, manifest, mixtures_dir)
        }
        Command::Train {
            common,
            kind,
            vl2m_checkpoint,
        } => {
            let cfg = load_config(&common)?;
            install_pool(common.jobs)?;
            train::run(&cfg, &kind, vl2m_checkpoint)
        }
        Command::Enhance {
            common,
            checkpoint,
            input,
            landmarks,
            speaker,
            output,
            split,
            manifest,
            mixtures_dir,
            output_dir,
            png,
        } => {
            let cfg = load_config(&common)?;
            install_pool(common.jobs)?;
            if let Some(input) = input {
                enhance::run_single(
                    &cfg,
                    &enhance::SingleArgs {
                        checkpoint,
                        input,
                        landmarks: landmarks.expect("clap enforces"),
                        speaker: speaker.expect("clap enforces"),
                        output: output.expect("clap enforces"),
                        png,
                    },
                )
            } else {
                enhance::run_batch(
                    &cfg,
                    &enhance::BatchArgs {
                        checkpoint,
                        split,
                        manifest,
                        mixtures_dir,
                        output_dir,
                        png,
                    },
                )
            }
        }
        Command::Evaluate {
            common,
            split,
            manifest,
            mixtures_dir,
            enhanced_dir,
        } => {
            let cfg = load_config(&common)?;
            install_pool(common.jobs)?;
            evaluate::run(&cfg, &split, manifest, mixtures_dir, enhanced_dir)
        }
        Command::Fixture {
            out,
            speakers,
            utterances,
            seed,
            min_dur,
            max_dur,
        } => {
            let params = FixtureParams {
                speakers,
                utterances,
                seed,
                min_dur,
                max_dur,
            };
            let written = generate_corpus(&out, &params)?;
            println!("wrote {written} utterances to {}", out.display());
            Ok(commands::EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            // Config and usage problems share exit code 1; per-entry
            // failures return 2 from the command itself.
            eprintln!("error: {e:#}");
            let _ = e.downcast_ref::<ConfigError>();
            ExitCode::from(commands::EXIT_CONFIG as u8)
        }
    }
}
