//! Command-line interface.
//!
//! Subcommands: `train` (two-stage run with checkpoints, JSONL log and an
//! evaluation routing trace), `sample-frames` (voxel-coverage keyframe
//! selection), `analyze` (routing-trace reports), `gradcheck`
//! (finite-difference audit of the analytic gradients) and `synth`
//! (synthetic scene/token fixtures).
//!
//! Exit codes: 0 ok, 1 configuration/input error, 2 numeric divergence,
//! 3 verification failure. All randomness flows from the single seed in
//! the configuration; the `UNI3D_MOE_THREADS` environment variable caps
//! internal parallelism (default 1).

mod cmd_analyze;
mod cmd_frames;
mod cmd_gradcheck;
mod cmd_synth;
mod cmd_train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "moxel", version, about = "Desk-scale sparse MoE engine", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-stage training pipeline from a JSON config.
    Train(cmd_train::TrainArgs),
    /// Select keyframes from a scene by maximum voxel coverage.
    SampleFrames(cmd_frames::FramesArgs),
    /// Compute routing analytics from a trace file.
    Analyze(cmd_analyze::AnalyzeArgs),
    /// Audit analytic gradients against central finite differences.
    Gradcheck(cmd_gradcheck::GradcheckArgs),
    /// Emit synthetic fixtures (scenes or token blocks).
    Synth(cmd_synth::SynthArgs),
}

fn exit_for(err: &moxel::Error) -> u8 {
    match err {
        moxel::Error::NonFinite(_) => 2,
        _ => 1,
    }
}

/// Restore default SIGPIPE behavior so piping into `head` etc. terminates
/// the process instead of panicking on a closed stdout.
fn reset_sigpipe() {
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    let threads = match moxel::parallel::thread_cap_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train::run(args, threads),
        Command::SampleFrames(args) => cmd_frames::run(args, threads),
        Command::Analyze(args) => cmd_analyze::run(args),
        Command::Gradcheck(args) => cmd_gradcheck::run(args),
        Command::Synth(args) => cmd_synth::run(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
