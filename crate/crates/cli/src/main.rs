//! `hafuse`: train, apply and evaluate the infrared/visible fusion GAN.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "hafuse", version, about = "Infrared and visible image fusion with a heterogeneous-discriminator GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a directory with ir/ and vi/ PGM pairs.
    Train(TrainArgs),
    /// Fuse one infrared/visible pair with a trained checkpoint.
    Fuse(FuseArgs),
    /// Compute EN, AG, SF, FMI, VIF and UIQI per image pair.
    Eval(EvalArgs),
    /// Check every backward rule against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate one ablation variant.
    Ablate(AblateArgs),
    /// Write a synthetic paired dataset.
    MakeSynth(SynthArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub vi: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of fused PGMs named like the pairs in --data-dir.
    #[arg(long, conflicts_with = "ckpt")]
    pub fused_dir: Option<PathBuf>,
    /// Fuse the pairs in --data-dir with this checkpoint first.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Also evaluate with Gaussian noise of this variance on the visible input.
    #[arg(long)]
    pub noise_variance: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Multiplier on the number of seeds per case.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Only run cases whose name contains this string.
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long, hide = true)]
    pub inject_sobel_fault: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub variant: String,
    /// TOML run configuration; defaults to the smoke preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::MakeSynth(a) => commands::make_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
