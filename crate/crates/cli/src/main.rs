//! `ctxcal`: render few-shot prompts, probe content-free calibration,
//! run seeded evaluation sweeps, and diagnose prediction biases.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 backend failure,
//! 4 invalid data, 130 interrupted (resume a sweep with `--resume`).

mod commands;
mod config;

use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand};

/// Cooperative cancellation flag shared with the sweep loop; SIGINT
/// sets it and the in-flight cell drains before the run stops.
pub static CANCEL: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_sig: libc::c_int) {
    CANCEL.store(true, Ordering::SeqCst);
}

/// Routes SIGINT into [`CANCEL`]. Installed only by long-running
/// commands; everything else keeps the default kill behavior.
pub fn install_interrupt_handler() {
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
    }
}

/// A failure with its process exit code already classified.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    /// Bad flags, bad config, or misuse of an existing file (exit 2).
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    /// The backend failed or refused the request (exit 3).
    pub fn backend(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    /// Input data that parsed but is not usable (exit 4).
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ctxcal",
    version,
    about = "Few-shot prompt evaluation with content-free calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render one prompt exactly as a sweep would send it
    Render(commands::RenderArgs),
    /// Fit calibration parameters from content-free probes
    Calibrate(commands::CalibrateArgs),
    /// Run the configured evaluation sweep
    Sweep(commands::SweepArgs),
    /// Compute bias diagnostics over a records file
    Diagnose(commands::DiagnoseArgs),
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Render(args) => commands::cmd_render(args),
        Command::Calibrate(args) => commands::cmd_calibrate(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::Diagnose(args) => commands::cmd_diagnose(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
