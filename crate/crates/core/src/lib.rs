//! Image restoration with a latent diffusion prior inside a
//! half-quadratic splitting loop.
//!
//! The degradation model is `b = A x + η` with `A` a periodic blur, a
//! decimation, or both. The solver alternates a closed-form data step with
//! a gradient step on the latent input of a generative map built from a
//! few DDIM steps and a decoder.
//!
//! ```no_run
//! use reld::{image::Shape, linop, phantom, prior, solver, diffusion};
//!
//! let shape = Shape::gray(64, 64);
//! let x = phantom::piecewise_smooth(shape, 0);
//! let psf = linop::gaussian_psf(1.0, 7).unwrap();
//! let op = linop::LinearOperator::conv(psf, shape).unwrap();
//! let b = reld::image::awgn_corrupt(&op.apply(&x).unwrap(), 0.1, 1).unwrap();
//! let prior = prior::LatentPrior::new(
//!     diffusion::NoiseSchedule::ddpm_default(),
//!     prior::Predictor::Zero,
//!     prior::Codec::identity(shape).unwrap(),
//! )
//! .unwrap();
//! let out = solver::reld_solve(&b, &op, &prior, &solver::SolverConfig::default()).unwrap();
//! println!("{} iterations", out.trace.len());
//! ```

pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod image;
pub mod io;
pub mod linop;
pub mod phantom;
pub mod prior;
pub mod prox;
pub mod selftest;
pub mod solver;

pub use error::{Error, Result};
pub use image::{Image, Shape};
pub use linop::{Kernel, LinearOperator};
pub use solver::{reld_solve, Solution, SolverConfig, SolverTrace};
