//! Gaussian deblurring: the data step is solved exactly in the Fourier domain.
//!
//! ```text
//! cargo run --release --example deblur [output-dir]
//! ```

use std::path::PathBuf;

use reld::experiment::{degrade_image, latent_seed, train_prior, ExperimentConfig, Task};
use reld::image::{psnr, Shape};
use reld::io::{save, BitDepth};
use reld::phantom::piecewise_smooth;
use reld::prior::{Codec, LatentPrior, Predictor};
use reld::solver::{reld_solve, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from);

    let mut cfg = ExperimentConfig::with_task(Task::Deblur);
    cfg.sigma_a = 1.0;
    cfg.sigma_eta = 25.0;
    cfg.train.steps = 1500;

    let shape = Shape::gray(64, 64);
    let (net, _) = train_prior(&cfg, shape)?;
    let prior = LatentPrior::new(
        cfg.prior.schedule.build()?,
        Predictor::ToyNet(net),
        Codec::new(cfg.prior.codec_kind(), shape)?,
    )?;

    let clean = piecewise_smooth(shape, 5);
    let deg = degrade_image(&cfg, &clean)?;
    let solver = SolverConfig {
        seed: latent_seed(cfg.seed),
        ..cfg.solver_config()
    };
    let sol = reld_solve(&deg.observation, &deg.operator, &prior, &solver)?;

    println!("blurred+noisy {:.2} dB", psnr(&clean, &deg.observation)?);
    println!("restored      {:.2} dB", psnr(&clean, &sol.image)?);
    let first = &sol.trace.records[0];
    let last = sol.trace.records.last().unwrap();
    println!("objective {:.3} -> {:.3}", first.objective, last.objective);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir)?;
        save(&clean, dir.join("clean.png"), BitDepth::Eight)?;
        save(&deg.observation, dir.join("observed.png"), BitDepth::Eight)?;
        save(&sol.image, dir.join("restored.png"), BitDepth::Eight)?;
        sol.trace.save_csv(&dir.join("trace.csv"))?;
        println!("images written to {}", dir.display());
    }
    Ok(())
}
