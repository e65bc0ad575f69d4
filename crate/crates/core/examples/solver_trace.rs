//! Watches the restoration loop through its observer hook: PSNR of the
//! auxiliary image and of the generated image every few iterations, on a
//! deblurring problem.
//!
//! ```text
//! cargo run --release --example solver_trace
//! ```

use reld::experiment::{train_prior, ExperimentConfig, Task};
use reld::image::{awgn_corrupt, psnr, Shape};
use reld::linop::{gaussian_psf, LinearOperator};
use reld::phantom::piecewise_smooth;
use reld::prior::{Codec, LatentPrior, Predictor};
use reld::solver::{reld_solve_observed, SolveEvent, SolverConfig};

fn main() -> reld::Result<()> {
    let shape = Shape::gray(48, 48);
    let clean = piecewise_smooth(shape, 8);
    let op = LinearOperator::conv(gaussian_psf(1.2, 7)?, shape)?;
    let b = awgn_corrupt(&op.apply(&clean)?, 25.0 / 255.0, 1)?;

    let mut exp = ExperimentConfig::with_task(Task::Deblur);
    exp.train.steps = 1000;
    let (net, _) = train_prior(&exp, shape)?;
    let prior = LatentPrior::new(
        exp.prior.schedule.build()?,
        Predictor::ToyNet(net),
        Codec::new(exp.prior.codec_kind(), shape)?,
    )?;
    let cfg = SolverConfig {
        k_max: 40,
        ..SolverConfig::default()
    };

    println!("observation {:.2} dB", psnr(&clean, &b)?);
    let sol = reld_solve_observed(&b, &op, &prior, &cfg, &mut |event| match event {
        SolveEvent::DataStep { k, t, mu } if k % 5 == 0 => {
            print!("k {k:3}  mu {mu:6.3}  psnr(t) {:.2} dB", psnr(&clean, t).unwrap());
        }
        SolveEvent::GradientStep { k, v } if k % 5 == 0 => {
            let x = prior.generate(v, cfg.p).unwrap();
            println!("  psnr(N(v)) {:.2} dB", psnr(&clean, &x).unwrap());
        }
        _ => {}
    })?;
    println!("final x* {:.2} dB", psnr(&clean, &sol.image)?);
    Ok(())
}
