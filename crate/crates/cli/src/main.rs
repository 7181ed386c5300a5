// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "vipseval", version, about = "Video panoptic segmentation evaluation toolkit")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "VIPSEVAL_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ground-truth dataset manifest.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction dataset manifest.
    #[arg(long)]
    pred: PathBuf,
    /// JSON report destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run name recorded in the report and used by `report`.
    #[arg(long)]
    name: Option<String>,
    /// Resize gt and pred so the short side has this many pixels before
    /// evaluating.
    #[arg(long)]
    short_side: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tube-based VPQ over sliding windows.
    EvalVpq {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,6")]
        windows: Vec<usize>,
        /// Count unmatched predictions that lie mostly on void as false
        /// positives.
        #[arg(long)]
        no_ignore_void: bool,
    },
    /// Segmentation and Tracking Quality.
    EvalStq {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Derive semantic or instance annotations from a panoptic dataset.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: ConvertMode,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Average stuff logits from several sources and merge with instance masks.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        logits: Vec<PathBuf>,
        /// Instance mask file (run-length encoded JSON) for the same video.
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        categories: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Per-source weights; uniform when omitted.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        min_area: u64,
        #[arg(long, default_value_t = 0.5)]
        overlap_keep: f64,
    },
    /// Decode masks from query vectors and per-pixel features.
    Decode {
        /// Weight file holding `queries`, `query_category` and `query_kind`.
        #[arg(long)]
        queries: PathBuf,
        /// Feature volume in the logit file format.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        categories: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tau: f64,
        /// L2-normalise queries and features first.
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value = "decoded")]
        video_id: String,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Exponential moving average of weight snapshots, oldest first.
    Ema {
        #[arg(long, num_args = 1.., required = true)]
        snapshots: Vec<PathBuf>,
        #[arg(long, default_value_t = vipseval::ema::DEFAULT_DECAY)]
        decay: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic scene and its perturbed prediction.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_gt: PathBuf,
        #[arg(long)]
        out_pred: PathBuf,
    },
    /// Resize every frame so the short side has the given length.
    Resize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 720)]
        short_side: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a dataset and list every problem found.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Ranking table from evaluation reports and/or literal scores.
    Report {
        /// VPQ or STQ report files; reports sharing a name form one row.
        reports: Vec<PathBuf>,
        /// Literal row `name:VPQ1,VPQ2,...[:STQ]`, window scores in percent.
        #[arg(long)]
        entry: Vec<String>,
        /// Window sizes of the literal scores.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,6")]
        windows: Vec<usize>,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ConvertMode {
    Semantic,
    Instance,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n as usize);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
