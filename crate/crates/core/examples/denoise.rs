//! Gaussian denoising of a synthetic phantom with a freshly trained toy prior.
//!
//! ```text
//! cargo run --release --example denoise
//! ```

use reld::experiment::{degrade_image, latent_seed, train_prior, ExperimentConfig, Task};
use reld::image::{psnr, Shape};
use reld::phantom::piecewise_smooth;
use reld::prior::{Codec, LatentPrior, Predictor};
use reld::solver::{reld_solve, SolverConfig};

fn main() -> reld::Result<()> {
    let mut cfg = ExperimentConfig::with_task(Task::Denoise);
    cfg.sigma_eta = 25.0;
    cfg.train.steps = 1500;

    let shape = Shape::gray(64, 64);
    let (net, report) = train_prior(&cfg, shape)?;
    println!(
        "toy prior: held-out loss {:.4} -> {:.4}",
        report.initial_eval_loss, report.final_eval_loss
    );
    let prior = LatentPrior::new(
        cfg.prior.schedule.build()?,
        Predictor::ToyNet(net),
        Codec::new(cfg.prior.codec_kind(), shape)?,
    )?;

    let clean = piecewise_smooth(shape, 11);
    let deg = degrade_image(&cfg, &clean)?;
    let solver = SolverConfig {
        seed: latent_seed(cfg.seed),
        ..cfg.solver_config()
    };
    let sol = reld_solve(&deg.observation, &deg.operator, &prior, &solver)?;

    println!("noisy    {:.2} dB", psnr(&clean, &deg.observation)?);
    println!("restored {:.2} dB after {} iterations", psnr(&clean, &sol.image)?, sol.trace.len());
    Ok(())
}
