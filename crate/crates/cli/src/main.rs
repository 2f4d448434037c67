mod commands;
mod files;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Scene-graph dual encoder for image-text retrieval.
#[derive(Debug, Parser)]
#[command(name = "cora", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Root seed for every random stream [default: config value, else 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Joint embedding width D [default: config value, else 32]
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// File of `key = value` lines for training and model settings
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile CoNLL-U parses into scene graphs (JSON array)
    Parse {
        /// CoNLL-U input
        #[arg(long = "in")]
        input: PathBuf,
        /// Scene-graph JSON output
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint and loss log
    Train {
        /// CORF region features (ids in `<path>.ids`)
        #[arg(long)]
        regions: PathBuf,
        /// Scene-graph JSON; caption ids are array positions
        #[arg(long)]
        captions: PathBuf,
        /// Manifest of `image_id<TAB>caption_id` lines
        #[arg(long)]
        pairs: PathBuf,
        /// Checkpoint output (vocabulary written to `<path>.vocab`)
        #[arg(long)]
        out: PathBuf,
        /// Number of epochs [default: config value, else 50]
        #[arg(long)]
        epochs: Option<usize>,
        /// Batch size [default: config value, else 128]
        #[arg(long)]
        batch_size: Option<usize>,
        /// Loss log, one JSON record per step [default: `<out>.log.jsonl`]
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Embed images or captions into an embedding cache file
    Embed {
        /// Model checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// CORF region features to embed
        #[arg(long, conflicts_with = "graphs", required_unless_present = "graphs")]
        regions: Option<PathBuf>,
        /// Scene-graph JSON to embed (captions plus their entities)
        #[arg(long)]
        graphs: Option<PathBuf>,
        /// Embedding cache output
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall@K in both directions and RSUM for cached embeddings
    Eval {
        /// Image embedding cache
        #[arg(long)]
        image_index: PathBuf,
        /// Caption embedding cache (captions and entities)
        #[arg(long)]
        caption_index: PathBuf,
        /// Manifest of `image_id<TAB>caption_id` lines
        #[arg(long)]
        pairs: PathBuf,
        /// Entity reranking weight in [0,1]; also reports reranked metrics when below 1
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },
    /// Caption-encode and index-scan latency across index sizes
    Bench {
        /// Comma-separated index sizes
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000,100000")]
        sizes: Vec<usize>,
        /// Timed trials per size
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Checkpoint to time [default: fresh weights at --dim]
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Report output (JSON lines); a CSV copy goes next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic train/test corpus for experiments
    Synth {
        /// Output directory
        #[arg(long)]
        out_dir: PathBuf,
        /// Training pairs
        #[arg(long, default_value_t = 200)]
        train: usize,
        /// Test pairs
        #[arg(long, default_value_t = 50)]
        test: usize,
        /// Region feature width
        #[arg(long, default_value_t = 2048)]
        region_dim: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
