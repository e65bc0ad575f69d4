use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reld::experiment::{self, ExperimentConfig};
use reld::Error;

#[derive(Parser)]
#[command(name = "reld", version, about = "Image restoration with a latent diffusion prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur/decimate and add noise to the configured input.
    Degrade(Common),
    /// Restore the observation written by `degrade`.
    Restore(Common),
    /// Run one restoration per point of the configured parameter grid.
    Sweep(Common),
    /// Train the toy noise predictor on synthetic phantoms.
    TrainToy(Common),
    /// Run the built-in numerical checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn load(&self) -> reld::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if cfg.sigma_eta > 0.0 {
            eprintln!("sigma_eta {} on the 0-255 scale -> {}", cfg.sigma_eta, cfg.noise_std());
        }
        Ok(cfg)
    }
}

fn run(cmd: Command) -> reld::Result<bool> {
    match cmd {
        Command::Degrade(c) => {
            let r = experiment::cmd_degrade(&c.load()?, &c.out_dir)?;
            println!("wrote {} ({})", r.observation.display(), r.observation_shape);
            println!("wrote {}", r.ground_truth.display());
            println!("wrote {}", r.metadata.display());
        }
        Command::Restore(c) => {
            let r = experiment::cmd_restore(&c.load()?, &c.out_dir)?;
            println!("{}", r.summary_line);
            println!("wrote {}", r.restored.display());
            println!("wrote {}", r.trace.display());
        }
        Command::Sweep(c) => {
            let r = experiment::cmd_sweep(&c.load()?, &c.out_dir, c.workers)?;
            println!("{} points, {} failed", r.rows, r.failed);
            println!("wrote {}", r.csv.display());
        }
        Command::TrainToy(c) => {
            let r = experiment::cmd_train_toy(&c.load()?, &c.out_dir)?;
            println!(
                "held-out loss {:.5} -> {:.5}",
                r.initial_eval_loss, r.final_eval_loss
            );
            println!("wrote {}", r.model.display());
            println!("wrote {}", r.loss_trace.display());
        }
        Command::Selftest { seed } => {
            let checks = reld::selftest::run(seed)?;
            for c in &checks {
                println!("{c}");
            }
            return Ok(checks.iter().all(|c| c.passed()));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonFinite { trace, .. } = &e {
                eprintln!("{} iterations completed before the failure", trace.len());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
