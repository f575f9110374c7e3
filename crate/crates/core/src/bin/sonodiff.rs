//! Command-line front end: forward rendering, inverse optimization, and
//! gradient checking from plain-text configs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sonodiff::runner::{cmd_gradcheck, cmd_optimize, cmd_render, DEFAULT_CONFIG};

#[derive(Parser)]
#[command(
    name = "sonodiff",
    about = "Differentiable Monte Carlo ultrasound B-mode simulator",
    version
)]
struct Cli {
    /// Print the bundled default configuration and exit.
    #[arg(long)]
    dump_defaults: bool,

    /// Worker threads (default: SONODIFF_THREADS env var, else all cores).
    /// Results are identical for any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate channel data and write B-mode images.
    Render {
        /// Run configuration file.
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit scene/acquisition parameters to reference images.
    Optimize {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare replay gradients against finite differences.
    Gradcheck {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.dump_defaults {
        print!("{DEFAULT_CONFIG}");
        return ExitCode::SUCCESS;
    }
    let threads = cli.threads.or_else(|| {
        std::env::var("SONODIFF_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        None => {
            eprintln!("error: expected a subcommand (render, optimize, gradcheck) or --dump-defaults");
            return ExitCode::from(1);
        }
        Some(Command::Render { config, out }) => cmd_render(&config, &out),
        Some(Command::Optimize { config, out }) => cmd_optimize(&config, &out),
        Some(Command::Gradcheck { config, out }) => cmd_gradcheck(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
