//! `maskface`: mask faces in images and datasets, and run the verification
//! protocol over embeddings.
//!
//! Precedence for shared settings: command-line flags, then the `--config`
//! TOML file, then built-in defaults. The resolved settings are logged to
//! stderr as JSON on every run. Machine-readable results go to stdout as
//! JSON; files land under `--out`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maskface::embed::MiningMode;
use maskface::verifeval::FarDefinition;
use maskface::MaskType;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Invalid(String),
}

impl From<maskface::Error> for CliError {
    fn from(e: maskface::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        maskface::Error::from(e).into()
    }
}

#[derive(Parser, Debug)]
#[command(name = "maskface", version, about = "Synthetic face-mask augmentation and masked-face verification")]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML file with defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for dataset masking.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Style {
    /// Pattern name from the asset library.
    #[arg(long)]
    pattern: Option<String>,
    /// Color name from the asset library or #rrggbb.
    #[arg(long)]
    color: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mask every face of one image.
    Mask {
        image: PathBuf,
        /// cloth, surgical_green, surgical_blue, n95 or gas; random if omitted.
        #[arg(long)]
        mask_type: Option<MaskType>,
        #[command(flatten)]
        style: Style,
        /// Landmark JSON; defaults to the `<stem>.json` sidecar.
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Mask an image tree and write a manifest.
    MaskDir {
        root: PathBuf,
        /// Comma-separated candidate mask types.
        #[arg(long, value_delimiter = ',')]
        mask_types: Option<Vec<MaskType>>,
        #[arg(long)]
        pattern_probability: Option<f64>,
        #[arg(long)]
        pattern_intensity: Option<f64>,
        #[command(flatten)]
        style: Style,
        /// Do not copy the unmasked originals.
        #[arg(long)]
        no_originals: bool,
        #[arg(long)]
        max_residual: Option<f64>,
    },
    /// Sample verification pairs from embedding files.
    Pairs {
        /// Template side, `[tag=]path` (.bin or .csv).
        #[arg(long)]
        template: String,
        /// Unknown side, `[tag=]path`; omitted means pairs within the template set.
        #[arg(long)]
        unknown: Option<String>,
        #[arg(long)]
        n_pos: usize,
        #[arg(long)]
        n_neg: usize,
    },
    /// Train the toy encoder on synthetic identity features.
    TrainToy(commands::TrainArgs),
    /// Calibrate thresholds on a pair list and report metrics.
    Eval {
        #[arg(long)]
        pairs: PathBuf,
        /// `[tag=]path`; an untagged file serves every tag not bound otherwise.
        #[arg(long, required = true)]
        embeddings: Vec<String>,
        #[arg(long)]
        far: Option<f64>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value = "fpr")]
        far_definition: FarDefinition,
        /// Evaluate at the thresholds of this calibration JSON instead of calibrating.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Metrics for every (template tag, unknown tag) combination.
    Heatmap {
        /// `tag=path`, one per dataset variant.
        #[arg(long, required = true)]
        embeddings: Vec<String>,
        /// Comma-separated tag order; defaults to the order of --embeddings.
        #[arg(long, value_delimiter = ',')]
        tags: Option<Vec<String>>,
        /// Fixed thresholds from a calibration JSON; otherwise each cell is optimized.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        far: Option<f64>,
        #[arg(long, default_value_t = 300)]
        n_pos: usize,
        #[arg(long, default_value_t = 300)]
        n_neg: usize,
    },
    /// Group embeddings into identities.
    Cluster {
        #[arg(long)]
        embeddings: PathBuf,
        /// Largest mean squared distance at which clusters merge.
        #[arg(long)]
        threshold: f64,
    },
    /// Write the built-in mask library to a directory.
    ExportAssets { dir: PathBuf },
    /// Write a tree of synthetic face images with landmark sidecars.
    SynthFaces {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 160)]
        size: u32,
        /// Every n-th image gets no landmarks (0 disables).
        #[arg(long, default_value_t = 0)]
        no_face_every: usize,
    },
}

fn parse_mining(s: &str) -> Result<MiningMode, String> {
    s.parse().map_err(|e: maskface::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
