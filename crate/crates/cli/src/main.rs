//! Command-line pipeline for simulated bare-sensor imaging.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! dimension error, 3 numerical failure. Seed precedence: `--seed` flag,
//! then the `LENSLESS_SEED` environment variable, then the config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lensless::Error;

mod commands;

#[derive(Parser)]
#[command(name = "lensless", version, about = "Simulated lensless imaging with a bare sensor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every pipeline command. Flags override the config file.
#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON run configuration (desk-scale defaults when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed (overrides LENSLESS_SEED and the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Frames averaged per capture
    #[arg(long)]
    n_avg: Option<usize>,
    /// Object distance D in mm
    #[arg(long)]
    distance: Option<f64>,
    /// Source grid as ROWSxCOLS, e.g. 16x16
    #[arg(long)]
    grid: Option<String>,
    /// Sensor as WIDTHxHEIGHT pixels, e.g. 96x72
    #[arg(long)]
    sensor: Option<String>,
    /// Disable read and shot noise
    #[arg(long)]
    noiseless: bool,
    /// Output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Regularization strategy: fixed-fraction | l-curve | discrepancy
    #[arg(long)]
    alpha_strategy: Option<String>,
    /// Fraction for fixed-fraction, noise norm for discrepancy
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Acquire a calibration matrix and write it as LCAL1
    Calibrate {
        #[command(flatten)]
        common: CommonOpts,
        /// Output file (default <out_dir>/calibration.lcal)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invert a measurement (or a self-test pattern) against a calibration
    Reconstruct {
        #[command(flatten)]
        common: CommonOpts,
        /// Calibration file (LCAL1)
        #[arg(long)]
        calibration: PathBuf,
        /// Self-test pattern: letter-T, stickman, line-h(N), line-v(N),
        /// line-diag(N), full-on, single(R,C)
        #[arg(long, conflicts_with = "measurement")]
        pattern: Option<String>,
        /// Measurement image (LFR1 or PGM)
        #[arg(long)]
        measurement: Option<PathBuf>,
        /// Calibration-to-measurement exposure ratio for external measurements
        #[arg(long, default_value_t = 1.0)]
        exposure_ratio: f64,
        /// Binarization: otsu or fixed:<t>
        #[arg(long, default_value = "otsu")]
        threshold: String,
    },
    /// Reconstruct an animation frame by frame and report latency
    Video {
        #[command(flatten)]
        common: CommonOpts,
        /// Calibration file (LCAL1); a reconstructor is built once from it
        #[arg(long, required_unless_present = "reconstructor")]
        calibration: Option<PathBuf>,
        /// Precomputed reconstructor (LREC1)
        #[arg(long, conflicts_with = "calibration")]
        reconstructor: Option<PathBuf>,
        /// Animation name
        #[arg(long, default_value = "jumping-stickman")]
        animation: String,
        /// Number of frames
        #[arg(long, default_value_t = 76)]
        frames: usize,
        /// Also write the reconstructor as LREC1
        #[arg(long)]
        save_reconstructor: Option<PathBuf>,
    },
    /// Calibrate and analyze at several object distances
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated distances in mm
        #[arg(long, value_delimiter = ',', default_values_t = lensless::config::SWEEP_DISTANCES_MM)]
        distances: Vec<f64>,
    },
    /// Re-run the stickman reconstruction under an ablation
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        /// Delete the pixel regions around the central source's shadows
        #[arg(long)]
        mask_shadows: bool,
        /// Remove all dust scatterers
        #[arg(long)]
        no_scatterers: bool,
        /// Disable the cover-glass texture
        #[arg(long)]
        no_texture: bool,
    },
    /// Recompute a calibration from its config and compare byte-for-byte
    Verify {
        #[command(flatten)]
        common: CommonOpts,
        /// Calibration file (LCAL1)
        #[arg(long)]
        calibration: PathBuf,
    },
    /// Print the header of an LCAL1 or LREC1 file
    Info {
        /// File to inspect
        file: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::UnknownPattern(_)
        | Error::UnknownAnimation(_)
        | Error::UnknownStrategy(_)
        | Error::PatternTooLarge(_)
        | Error::SourceBehindScatterer { .. }
        | Error::Json(_) => 1,
        Error::DimensionMismatch { .. }
        | Error::ShapeMismatch { .. }
        | Error::GridMismatch { .. }
        | Error::OutOfBounds { .. }
        | Error::BadMagic { .. }
        | Error::BadVersion(_)
        | Error::Truncated { .. }
        | Error::MalformedFile { .. }
        | Error::MaskOutOfBounds(_)
        | Error::MaskCoversSensor
        | Error::Io(_) => 2,
        Error::NonFinite(_)
        | Error::ConstantInput
        | Error::DegenerateHistogram
        | Error::EmptyGrid
        | Error::EmptyStack
        | Error::UnsortedStack => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Calibrate { common, out } => commands::calibrate(&common, out.as_deref()),
        Command::Reconstruct { common, calibration, pattern, measurement, exposure_ratio, threshold } => {
            commands::reconstruct(
                &common,
                &calibration,
                pattern.as_deref(),
                measurement.as_deref(),
                exposure_ratio,
                &threshold,
            )
        }
        Command::Video { common, calibration, reconstructor, animation, frames, save_reconstructor } => {
            commands::video(
                &common,
                calibration.as_deref(),
                reconstructor.as_deref(),
                &animation,
                frames,
                save_reconstructor.as_deref(),
            )
        }
        Command::Sweep { common, distances } => commands::sweep(&common, &distances),
        Command::Ablate { common, mask_shadows, no_scatterers, no_texture } => {
            commands::ablate(&common, mask_shadows, no_scatterers, no_texture)
        }
        Command::Verify { common, calibration } => commands::verify(&common, &calibration),
        Command::Info { file } => commands::info(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
