//! Quick numerical self-checks, run by `reld selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{LatentState, NoiseSchedule};
use crate::error::Result;
use crate::image::{dot, Image, Shape};
use crate::linop::{gaussian_psf, LinearOperator};
use crate::prior::{Codec, LatentPrior, Predictor, ToyNet};
use crate::prox::{prox_cg, prox_deblur_fft, prox_sr_fft, ProxProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst error seen.
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:<24} error {:.3e} (tolerance {:.0e})", self.name, self.error, self.tolerance)
    }
}

fn noise_image(shape: Shape, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(shape, |_, _, _| StandardNormal.sample(rng))
}

fn adjoint_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let shape = Shape::new(16, 16, if rng.random_bool(0.5) { 1 } else { 3 });
        let psf = gaussian_psf(rng.random_range(0.5..2.0), 5)?;
        let ops = [
            LinearOperator::conv(psf.clone(), shape)?,
            LinearOperator::decimate(2, shape)?,
            LinearOperator::blur_decimate(psf, 4, shape)?,
        ];
        for op in &ops {
            let x = noise_image(op.input_shape(), &mut rng);
            let y = noise_image(op.output_shape(), &mut rng);
            let ax = op.apply(&x)?;
            let lhs = ax.dot(&y)?;
            let rhs = x.dot(&op.adjoint(&y)?)?;
            worst = worst.max((lhs - rhs).abs() / (ax.norm() * y.norm()));
        }
    }
    Ok(worst)
}

fn prox_check(seed: u64, factor: Option<usize>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let shape = Shape::gray(16, 16);
        let psf = gaussian_psf(rng.random_range(0.5..2.0), 5)?;
        let op = match factor {
            Some(d) => LinearOperator::blur_decimate(psf, d, shape)?,
            None => LinearOperator::conv(psf, shape)?,
        };
        let b = noise_image(op.output_shape(), &mut rng);
        let r = noise_image(shape, &mut rng);
        let mu = rng.random_range(0.05..2.0);
        let problem = ProxProblem::new(&op, &b, &r, mu)?;
        let fast = match factor {
            Some(d) => prox_sr_fft(&problem, d)?,
            None => prox_deblur_fft(&problem)?,
        };
        let slow = prox_cg(&problem, 1e-12, 2000)?.solution;
        worst = worst.max(fast.sub(&slow)?.norm() / slow.norm());
    }
    Ok(worst)
}

fn ddim_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = NoiseSchedule::ddpm_default();
    let shape = Shape::gray(4, 4);
    let mean: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
    let prior = LatentPrior::new(
        schedule,
        Predictor::analytic_gaussian(mean.clone(), 0.0)?,
        Codec::identity(shape)?,
    )?;
    let mut worst: f64 = 0.0;
    for p in [1, 10, 50] {
        let z: Vec<f64> = (0..16)
            .map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let out = prior.sample(&LatentState::new(vec![], z)?, p)?;
        for (a, m) in out.z().iter().zip(&mean) {
            worst = worst.max((a - m).abs());
        }
    }
    Ok(worst)
}

fn vjp_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = NoiseSchedule::linear(20, 0.01, 0.3)?;
    let shape = Shape::gray(4, 4);
    let codec = Codec::block_transform(shape, 2, 1)?;
    let n = codec.latent_len();
    let net = ToyNet::new(n, n, 2, &[8], &schedule, seed)?;
    let prior = LatentPrior::new(schedule, Predictor::ToyNet(net), codec)?;
    let p = 3;
    let gauss = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        (0..len).map(|_| StandardNormal.sample(rng)).collect()
    };
    let v = LatentState::new(gauss(&mut rng, n), gauss(&mut rng, n))?;
    let w = noise_image(shape, &mut rng);
    let g = prior.vjp(&v, &w, p)?.concat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let dir = gauss(&mut rng, 2 * n);
        let shifted = |sign: f64| -> Result<f64> {
            let flat: Vec<f64> = v.concat().iter().zip(&dir).map(|(x, d)| x + sign * h * d).collect();
            prior.generate(&LatentState::from_concat(&flat, n)?, p)?.dot(&w)
        };
        let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
        let an = dot(&g, &dir);
        worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
    }
    Ok(worst)
}

/// Runs every check with the given seed.
pub fn run(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        Check {
            name: "operator adjoints",
            error: adjoint_check(seed)?,
            tolerance: 1e-10,
        },
        Check {
            name: "deblur prox vs CG",
            error: prox_check(seed, None)?,
            tolerance: 1e-8,
        },
        Check {
            name: "SR prox d=2 vs CG",
            error: prox_check(seed, Some(2))?,
            tolerance: 1e-6,
        },
        Check {
            name: "SR prox d=4 vs CG",
            error: prox_check(seed, Some(4))?,
            tolerance: 1e-6,
        },
        Check {
            name: "DDIM point-mass exactness",
            error: ddim_check(seed)?,
            tolerance: 1e-10,
        },
        Check {
            name: "generative map VJP",
            error: vjp_check(seed)?,
            tolerance: 1e-4,
        },
    ])
}
