use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use viscoinv::commands::{self, Summary};
use viscoinv::config::RunConfig;

#[derive(Parser)]
#[command(name = "viscoinv", version, about = "Viscoelastic beam simulation and memory-kernel calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// seed for every random draw (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// worker threads for the parallel parts (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the beam with the truth kernels; tip and energy series
    Forward,
    /// Fit kernels to measured or synthesized tip data
    Calibrate,
    /// Compare the adjoint gradient with finite differences
    Gradcheck,
    /// Exponential-sum fit of a fractional kernel
    Aaa,
    /// Reduce a stress-relaxation law to two strain-rate kernels
    Reduce,
    /// Recover a kernel's Laplace transform from one eigenmode
    ModalRecover,
    /// Randomized checks of the kernel identities and inequalities
    VerifyKernels,
}

fn run(cli: &Cli) -> viscoinv::Result<Summary> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    let out = cli.common.out.clone().unwrap_or_else(|| cfg.output_dir());
    let f = match cli.command {
        Command::Forward => commands::cmd_forward,
        Command::Calibrate => commands::cmd_calibrate,
        Command::Gradcheck => commands::cmd_gradcheck,
        Command::Aaa => commands::cmd_aaa,
        Command::Reduce => commands::cmd_reduce,
        Command::ModalRecover => commands::cmd_modal,
        Command::VerifyKernels => commands::cmd_verify_kernels,
    };
    f(&cfg, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(s) => {
            for c in &s.checks {
                let verdict = match (c.threshold, c.passed) {
                    (None, _) => "info",
                    (Some(_), true) => "ok",
                    (Some(_), false) => "FAIL",
                };
                match c.threshold {
                    Some(t) => println!("{verdict:>4}  {} = {:e} (limit {t:e})", c.name, c.value),
                    None => println!("{verdict:>4}  {} = {:e}", c.name, c.value),
                }
            }
            if s.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: validation failed", s.command);
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
