//! Small parameter grid over the penalty schedule and the number of diffusion
//! steps, printed as CSV.
//!
//! ```text
//! cargo run --release --example ablation_sweep > sweep.csv
//! ```

use reld::experiment::{
    degrade_image, grid_points, latent_seed, run_sweep, train_prior, write_sweep_csv, ExperimentConfig,
    SweepAxis, Task,
};
use reld::image::{psnr, Shape};
use reld::phantom::piecewise_smooth;
use reld::prior::{Codec, LatentPrior, Predictor};
use reld::solver::SolverConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::with_task(Task::Deblur);
    cfg.sigma_eta = 25.0;
    cfg.solver.k_max = 30;
    cfg.train.steps = 1000;

    let shape = Shape::gray(32, 32);
    let (net, _) = train_prior(&cfg, shape)?;
    let prior = LatentPrior::new(
        cfg.prior.schedule.build()?,
        Predictor::ToyNet(net),
        Codec::new(cfg.prior.codec_kind(), shape)?,
    )?;
    let clean = piecewise_smooth(shape, 3);
    let deg = degrade_image(&cfg, &clean)?;
    eprintln!("observation {:.2} dB", psnr(&clean, &deg.observation)?);

    let axes = vec![
        SweepAxis {
            name: "mu0".into(),
            values: Some(vec![0.1, 1.0, 10.0]),
            linspace: None,
        },
        SweepAxis {
            name: "p".into(),
            values: Some(vec![1.0, 5.0, 10.0]),
            linspace: None,
        },
    ];
    let names: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
    let points = grid_points(&axes)?;
    let base = SolverConfig {
        seed: latent_seed(cfg.seed),
        ..cfg.solver_config()
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = run_sweep(
        &deg.observation,
        Some(&deg.ground_truth),
        &deg.operator,
        &prior,
        &base,
        &names,
        &points,
        workers,
    )?;
    write_sweep_csv(std::io::stdout().lock(), &names, &rows, false)?;
    Ok(())
}
