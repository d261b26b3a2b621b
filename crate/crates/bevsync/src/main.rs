use std::path::PathBuf;
use std::process::ExitCode;

use bevsync::commands::{DEFAULT_TRAIN_STEPS, DEFAULT_VARIANCE};
use bevsync::{cmd_correspond, cmd_demo, cmd_evaluate, cmd_generate, cmd_project, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bevsync", version, about = "Cross-view consistent generation from BEV semantics (toy scale)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Project the scene's BEV semantics into every camera
    Project,
    /// Write overlap masks, ground homographies and coverage statistics
    Correspond,
    /// Sample all views and write images plus a manifest
    Generate,
    /// Score images against the scene and write a metrics report
    Evaluate,
    /// Run every stage end to end, training the tiny denoiser briefly
    Demo,
}

#[derive(Args)]
struct Opts {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Rig file, or `default` for the built-in six-camera rig
    #[arg(long, global = true)]
    rig: Option<PathBuf>,
    /// Scene description (TOML); the default scene otherwise
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Rotate the whole rig about the vertical axis (degrees)
    #[arg(long, global = true, default_value_t = 0.0, allow_negative_numbers = true)]
    yaw: f64,
    /// Skip latent re-assignment during sampling
    #[arg(long, global = true)]
    no_reassign: bool,
    /// Draw independent initial noise per view
    #[arg(long, global = true)]
    no_sync: bool,
    /// Fraction of reverse steps followed by re-assignment
    #[arg(long, global = true, default_value_t = 0.6)]
    cutoff: f64,
    /// Attention window size K
    #[arg(long = "k-window", global = true, default_value_t = 3)]
    k_window: usize,
    /// Diffusion steps T
    #[arg(long, global = true, default_value_t = 50)]
    steps: usize,
    /// Also emit the metrics report as JSON
    #[arg(long, global = true)]
    json: bool,
    /// Directory of view_<m>.png images to evaluate
    #[arg(long, global = true)]
    images: Option<PathBuf>,
    /// Tiny-denoiser checkpoint to sample with
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Prior variance of the palette denoiser
    #[arg(long, global = true, default_value_t = DEFAULT_VARIANCE)]
    variance: f64,
    /// Optimization steps for the demo's training stage
    #[arg(long, global = true, default_value_t = DEFAULT_TRAIN_STEPS)]
    train_steps: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let o = cli.opts;
    let config = RunConfig {
        seed: o.seed,
        rig: o.rig,
        scene: o.scene,
        out: o.out,
        yaw: o.yaw,
        reassign: !o.no_reassign,
        synced_noise: !o.no_sync,
        cutoff: o.cutoff,
        window: o.k_window,
        steps: o.steps,
        json: o.json,
        images: o.images,
        checkpoint: o.checkpoint,
        variance: o.variance,
        train_steps: o.train_steps,
    };
    let result = match cli.command {
        Command::Project => cmd_project(&config),
        Command::Correspond => cmd_correspond(&config),
        Command::Generate => cmd_generate(&config),
        Command::Evaluate => cmd_evaluate(&config),
        Command::Demo => cmd_demo(&config),
    };
    match result {
        Ok(out) => {
            for line in &out.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bevsync: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
