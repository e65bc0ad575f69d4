//! 2x super-resolution of a phantom. The observation lives on the coarse
//! grid; the restoration comes back at full size.
//!
//! The toy prior only sees half of each 4x4 block's transform coefficients,
//! so no restoration can beat the codec's own round trip of the clean image;
//! that ceiling is printed alongside.
//!
//! ```text
//! cargo run --release --example super_resolution
//! ```

use reld::experiment::{degrade_image, latent_seed, train_prior, ExperimentConfig, Task};
use reld::image::{psnr, Shape};
use reld::phantom::piecewise_smooth;
use reld::prior::{Codec, LatentPrior, Predictor};
use reld::solver::{lift_to_grid, reld_solve, SolverConfig};

fn main() -> reld::Result<()> {
    let mut cfg = ExperimentConfig::with_task(Task::Sr);
    cfg.d = Some(2);
    cfg.sigma_a = 0.8;
    cfg.sigma_eta = 25.0;
    cfg.solver.p = 5;
    cfg.train.steps = 1000;

    let shape = Shape::gray(48, 48);
    let codec = Codec::new(cfg.prior.codec_kind(), shape)?;
    let (net, _) = train_prior(&cfg, shape)?;
    let prior = LatentPrior::new(cfg.prior.schedule.build()?, Predictor::ToyNet(net), codec.clone())?;

    let clean = piecewise_smooth(shape, 2);
    let deg = degrade_image(&cfg, &clean)?;
    println!("observation {} -> target {}", deg.observation.shape(), clean.shape());

    let solver = SolverConfig {
        seed: latent_seed(cfg.seed),
        ..cfg.solver_config()
    };
    let sol = reld_solve(&deg.observation, &deg.operator, &prior, &solver)?;

    let nearest = lift_to_grid(&deg.observation, shape)?;
    let ceiling = codec.decode(&codec.encode(&clean)?)?;
    println!("replicated upsampling {:.2} dB", psnr(&clean, &nearest)?);
    println!("codec round trip      {:.2} dB", psnr(&clean, &ceiling)?);
    println!("restored              {:.2} dB", psnr(&clean, &sol.image)?);
    Ok(())
}
