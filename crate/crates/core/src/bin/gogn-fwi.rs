use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use gogn_fwi::harness::{self, ExperimentConfig};
use gogn_fwi::optim::OptimizerKind;
use gogn_fwi::Error;

#[derive(Parser)]
#[command(name = "gogn-fwi", version, about = "Full-waveform inversion benchmarks for gradient-only Gauss-Newton")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the target, geometry and noisy data.
    MakeData(Common),
    /// Run a single optimizer.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_optimizer)]
        optimizer: OptimizerKind,
    },
    /// Run every optimizer listed in the configuration.
    Compare(Common),
    /// Render a model file as an 8-bit PGM.
    Render {
        model: PathBuf,
        output: PathBuf,
        /// Values in [-range, range] map to [0, 255].
        #[arg(long, default_value_t = 0.05)]
        range: f64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration or a previous run's manifest; defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Solve budget per optimizer.
    #[arg(long)]
    budget: Option<u64>,
    /// Noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Worker threads for per-source solves.
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn config(&self) -> gogn_fwi::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.data.seed = s;
        }
        if let Some(b) = self.budget {
            cfg.optimizer.budget = b;
        }
        if let Some(s) = self.sigma {
            cfg.data.sigma = s;
        }
        cfg.validate()?;
        if let Some(n) = self.threads {
            harness::set_threads(n)?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> gogn_fwi::Result<()> {
    match cli.command {
        Command::MakeData(c) => {
            let cfg = c.config()?;
            harness::write_data(&cfg, &c.out)?;
            println!("data written to {}", c.out.display());
        }
        Command::Invert { common, optimizer } => {
            let cfg = common.config()?;
            report(harness::run_selected(&cfg, &[optimizer], &common.out)?)?;
        }
        Command::Compare(c) => {
            let cfg = c.config()?;
            report(harness::run_comparison(&cfg, &c.out)?)?;
        }
        Command::Render { model, output, range } => harness::render(&model, &output, range)?,
    }
    Ok(())
}

fn report(cmp: harness::Comparison) -> gogn_fwi::Result<()> {
    println!("{:<6} {:>16} {:>7} {:>13} {:>13} {:>10}", "method", "status", "solves", "objective", "model_error", "iters");
    let mut first_err = None;
    for (kind, r) in cmp.runs {
        match r {
            Ok(r) => {
                let last = r.final_record();
                println!(
                    "{:<6} {:>16} {:>7} {:>13.6e} {:>13.6e} {:>10}",
                    kind.name(),
                    r.status.to_string(),
                    r.solves.total(),
                    last.objective,
                    last.model_error,
                    r.trace.len() - 1
                );
            }
            Err(e) => {
                println!("{:<6} {:>16} {e}", kind.name(), "failed");
                first_err.get_or_insert(e);
            }
        }
    }
    println!("artifacts in {}", cmp.out_dir.display());
    first_err.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
