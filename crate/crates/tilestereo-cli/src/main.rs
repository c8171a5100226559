//! `tilestereo` binary: thin argument parsing over the library commands.
//! Exit codes: 0 success, 1 usage or configuration problems, 2 unreadable or
//! malformed data, 3 numerical aborts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use tilestereo::error::Error;
use tilestereo_cli::config::RunConfig;
use tilestereo_cli::{eval, infer, selftest, train};

#[derive(Parser)]
#[command(name = "tilestereo", about = "Train and run the tile-hypothesis stereo matcher", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a key=value config file.
    Train {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Extra key=value assignments applied after the file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Predict a disparity map for one rectified pair.
    Infer {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Output disparity PFM.
        #[arg(long)]
        out: PathBuf,
        /// Architecture preset matching the checkpoint.
        #[arg(long, default_value = "base")]
        preset: String,
        /// Optional run config file (overrides --preset).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra key=value assignments.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also write a color rendering here.
        #[arg(long)]
        viz: Option<PathBuf>,
        /// Also write slant maps as <prefix>.dx.pfm / <prefix>.dy.pfm.
        #[arg(long)]
        slants: Option<PathBuf>,
    },
    /// Score predicted disparity maps against ground truth.
    Eval {
        /// Directory of predicted .pfm files.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth .pfm files paired by stem.
        #[arg(long)]
        gt: PathBuf,
        /// Evaluation protocol: none or sceneflow.
        #[arg(long, default_value = "none")]
        protocol: String,
    },
    /// Run the built-in oracle and format diagnostics.
    Selftest,
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::Train { config, overrides } => {
            let mut cfg = RunConfig::from_file(&config)?;
            cfg.apply_overrides(&overrides)?;
            train::cmd_train(&cfg).map(|_| ())
        }
        Cmd::Infer { left, right, model, out, preset, config, overrides, viz, slants } => {
            let mut cfg = match config {
                Some(path) => RunConfig::from_file(&path)?,
                None => RunConfig { preset, ..RunConfig::default() },
            };
            cfg.apply_overrides(&overrides)?;
            infer::cmd_infer(&infer::InferArgs { left, right, model, out, viz, slants }, &cfg)
        }
        Cmd::Eval { pred, gt, protocol } => eval::cmd_eval(&eval::EvalArgs { pred, gt, protocol }).map(|_| ()),
        Cmd::Selftest => selftest::cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 1,
                Error::Numeric(_) => 3,
                Error::Shape(_) | Error::Io(_) | Error::Format(_) | Error::Checkpoint(_) => 2,
            };
            ExitCode::from(code)
        }
    }
}
