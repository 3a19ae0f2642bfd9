use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use holecal::commands::{
    calibration_summary, cmd_calibrate, cmd_colorize, cmd_residual, cmd_simulate, residual_table, CalibrateArgs,
    ColorizeArgs, CommandError,
};

/// LiDAR-camera extrinsic calibration from a four-hole, four-marker board.
#[derive(Parser)]
#[command(name = "holecal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate T_CL from paired scenes.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write plane inliers, edge points and hole centers per scene here.
        #[arg(long)]
        emit_intermediate: Option<PathBuf>,
        /// Print per-stage wall times to stderr.
        #[arg(long)]
        timing: bool,
    },
    /// Generate a synthetic scene set with ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a given T_CL on the scenes of a calibration config.
    Residual {
        #[arg(long)]
        extrinsics: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Color a LiDAR cloud from a PPM image.
    Colorize {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        extrinsics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep points outside the image, black, with `projected = 0`.
        #[arg(long)]
        keep_unprojected: bool,
    },
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Calibrate {
            config,
            output,
            emit_intermediate,
            timing,
        } => {
            let run = cmd_calibrate(&CalibrateArgs {
                config,
                output,
                emit_intermediate,
            })?;
            print!("{}", calibration_summary(&run.result));
            if timing {
                eprint!("{}", run.timing.table());
            }
        }
        Command::Simulate { config, out } => {
            let manifest = cmd_simulate(&config, &out)?;
            println!("wrote {} scenes to {}", manifest.scenes.len(), out.display());
        }
        Command::Residual { extrinsics, config } => {
            print!("{}", residual_table(&cmd_residual(&extrinsics, &config)?));
        }
        Command::Colorize {
            cloud,
            image,
            intrinsics,
            extrinsics,
            out,
            keep_unprojected,
        } => {
            let colored = cmd_colorize(&ColorizeArgs {
                cloud,
                image,
                intrinsics,
                extrinsics,
                out: out.clone(),
                keep_unprojected,
            })?;
            let projected = colored.projected.iter().filter(|&&p| p).count();
            println!("{projected} of {} points colored, wrote {}", colored.points.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
