use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctpg_bench::commands::{eigs, gradcheck, instability, pareto, train};
use ctpg_bench::config::Config;
use ctpg_bench::output::VERSION;
use ctpg_bench::{all_passed, BenchError, Check};

#[derive(Parser)]
#[command(name = "ctpg-bench", version = VERSION, about = "Gradient estimator experiments for continuous-time policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file; the built-in default for the command when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed (or seed list) of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 or 1 runs single-threaded and deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Gradient error vs. oracle calls for BPTT, CTPG and Neural ODE.
    Pareto,
    /// Neural ODE reconstruction drift during training, with a CTPG twin.
    Instability,
    /// Train a policy and write the history and parameter files.
    Train,
    /// Spectrum of the reverse-time adjoint process.
    Eigs,
    /// Check every gradient estimator against its reference.
    Gradcheck,
}

impl Command {
    fn default_config(self) -> (&'static str, &'static str) {
        match self {
            Command::Pareto => ("pareto.conf", include_str!("../configs/pareto.conf")),
            Command::Instability => ("instability.conf", include_str!("../configs/instability.conf")),
            Command::Train => ("train.conf", include_str!("../configs/train.conf")),
            Command::Eigs => ("eigs.conf", include_str!("../configs/eigs.conf")),
            Command::Gradcheck => ("gradcheck.conf", include_str!("../configs/gradcheck.conf")),
        }
    }

    fn seed_key(self) -> &'static str {
        match self {
            Command::Pareto | Command::Train => "seeds",
            _ => "seed",
        }
    }
}

fn run(cli: &Cli) -> Result<Vec<Check>, BenchError> {
    let command = cli.command;
    let mut cfg = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => {
            let (name, text) = command.default_config();
            Config::parse(text, &format!("<built-in {name}>"))?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.set(command.seed_key(), seed);
    }
    let out = cli.out.as_deref();
    let threads = cli.threads;
    Ok(match command {
        Command::Pareto => pareto::run(&cfg, out, threads)?.checks,
        Command::Instability => instability::run(&cfg, out, threads)?.checks,
        Command::Train => train::run(&cfg, out, threads)?.checks,
        Command::Eigs => eigs::run(&cfg, out)?.checks,
        Command::Gradcheck => gradcheck::run(&cfg, out)?.checks,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(checks) => {
            for c in &checks {
                println!("{c}");
            }
            if all_passed(&checks) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
