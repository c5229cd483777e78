//! `erpdepth`: synthetic data, warping, weight maps, cubemaps, metrics and
//! depth refinement from the command line.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 evaluation
//! error, 4 numerical divergence. Pixel parallelism follows
//! `RAYON_NUM_THREADS`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use erpdepth::Error;

#[derive(Parser)]
#[command(name = "erpdepth", version, about = "Equirectangular depth toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render box-room views (PNG image, PFM depth, pose JSON per view).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inverse-warp a source image into the target view.
    Warp(WarpArgs),
    /// Latitude weight map as a 16-bit PNG plus a CSV of row weights.
    Weightmap {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        /// Output path stem; `.png` and `.csv` are appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// ERP ↔ cubemap conversion.
    #[command(subcommand)]
    Cubemap(CubemapCommand),
    /// Depth metrics of a prediction against ground truth.
    Metrics(MetricsArgs),
    /// Joint depth/pose refinement on a synthetic pair.
    Refine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub source: PathBuf,
    /// Target-view depth (PFM).
    #[arg(long)]
    pub depth: PathBuf,
    /// Target → source pose (JSON).
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Valid-mask output; defaults to `<out>_valid.png`.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub bit_depth: u8,
}

#[derive(Subcommand)]
pub enum CubemapCommand {
    /// ERP image → six face PNGs named `<prefix>_{F,B,L,R,U,D}.png`.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        face_size: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "face")]
        prefix: String,
    },
    /// Six faces (F, B, L, R, U, D order) → ERP image.
    Merge {
        #[arg(long, num_args = 1.., required = true)]
        faces: Vec<PathBuf>,
        /// Output ERP height; the width is twice this.
        #[arg(long)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split then merge, reporting the PSNR against the input.
    Roundtrip {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        face_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Evaluation mask image; nonzero pixels are evaluated.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 80.0)]
    pub max_depth: f64,
    #[arg(long, default_value_t = 0.1)]
    pub min_depth: f64,
    #[arg(long)]
    pub median_scale: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Evaluation(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth { config, out } => commands::synth(&config, &out),
        Command::Warp(args) => commands::warp(&args),
        Command::Weightmap { height, width, out } => commands::weightmap(height, width, &out),
        Command::Cubemap(cmd) => commands::cubemap(&cmd),
        Command::Metrics(args) => commands::metrics(&args),
        Command::Refine { config, out } => commands::refine(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
