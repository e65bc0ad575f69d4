//! Deterministic DDIM against ancestral DDPM sampling under a Gaussian latent
//! model, where the ideal noise predictor is known in closed form.
//!
//! ```text
//! cargo run --release --example ddim_sampling
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use reld::diffusion::{ddpm_reverse_step, run_sp, LatentState, NoisePredictor, NoiseSchedule};
use reld::prior::Predictor;

fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn main() -> reld::Result<()> {
    let schedule = NoiseSchedule::ddpm_default();
    let t = schedule.steps();
    let (mean, tau) = (0.7, 0.3);
    let n = 4000;
    let predictor = Predictor::analytic_gaussian(vec![mean; n], tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let start: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    // DDIM: a deterministic map from z_T to z_0.
    let v = LatentState::new(Vec::new(), start.clone())?;
    let ddim = run_sp(&v, t, &predictor, &schedule)?;
    let (m, s) = moments(ddim.z());
    println!("DDIM ({t} steps): mean {m:.4} std {s:.4}");

    // Same start, fresh noise at every step.
    let mut z = start;
    for step in (1..=t).rev() {
        let eps = predictor.predict(&[], &z, step, &schedule);
        let noise: Vec<f64> = if step > 1 {
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        } else {
            vec![0.0; n]
        };
        z = ddpm_reverse_step(&z, &eps, &schedule, step, &noise)?;
    }
    let (m, s) = moments(&z);
    println!("DDPM ({t} steps): mean {m:.4} std {s:.4}");
    println!("target          : mean {mean:.4} std {tau:.4}");

    // Truncated chains start from an intermediate noise level.
    for p in [1, 10, 100] {
        let out = run_sp(&v, p, &predictor, &schedule)?;
        let (m, s) = moments(out.z());
        println!("p = {p:4}: mean {m:.4} std {s:.4}");
    }
    Ok(())
}
