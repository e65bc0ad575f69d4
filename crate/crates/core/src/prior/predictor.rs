use crate::diffusion::{NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::prior::toynet::ToyNet;

/// Posterior-mean noise estimate `E[ε | z_t]` when the clean latent is
/// `N(m, τ² I)` and `z_t = √ᾱ z0 + √(1−ᾱ) ε`:
/// `√(1−ᾱ)(z_t − √ᾱ m) / (ᾱ τ² + 1 − ᾱ)`.
pub fn analytic_eps(z_t: &[f64], alpha_bar: f64, mean: &[f64], tau: f64) -> Result<Vec<f64>> {
    if z_t.len() != mean.len() {
        return Err(Error::shape(format!(
            "latent length {} vs mean length {}",
            z_t.len(),
            mean.len()
        )));
    }
    let gain = analytic_gain(alpha_bar, tau)?;
    let sa = alpha_bar.sqrt();
    Ok(z_t.iter().zip(mean).map(|(z, m)| gain * (z - sa * m)).collect())
}

/// `√(1−ᾱ) / (ᾱ τ² + 1 − ᾱ)`, the slope of [`analytic_eps`] in `z_t`.
fn analytic_gain(alpha_bar: f64, tau: f64) -> Result<f64> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::param(format!("alpha_bar must lie in (0, 1], got {alpha_bar}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::param(format!("tau must be >= 0, got {tau}")));
    }
    let denom = alpha_bar * tau * tau + 1.0 - alpha_bar;
    if denom <= 0.0 {
        return Err(Error::param(
            "degenerate Gaussian predictor: tau = 0 at alpha_bar = 1",
        ));
    }
    Ok((1.0 - alpha_bar).sqrt() / denom)
}

/// The noise predictors shipped with the crate.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// Always predicts zero noise.
    Zero,
    /// Bayes-optimal predictor for latents distributed as `N(mean, tau² I)`;
    /// ignores the conditioning.
    AnalyticGaussian { mean: Vec<f64>, tau: f64 },
    ToyNet(ToyNet),
}

impl Predictor {
    pub fn analytic_gaussian(mean: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::param(format!("tau must be >= 0, got {tau}")));
        }
        Ok(Predictor::AnalyticGaussian { mean, tau })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Zero => "zero",
            Predictor::AnalyticGaussian { .. } => "gaussian",
            Predictor::ToyNet(_) => "toynet",
        }
    }
}

impl NoisePredictor for Predictor {
    fn predict(&self, cond: &[f64], z: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
        match self {
            Predictor::Zero => vec![0.0; z.len()],
            Predictor::AnalyticGaussian { mean, tau } => {
                analytic_eps(z, schedule.alpha_bar(t), mean, *tau)
                    .expect("timesteps >= 1 have alpha_bar < 1 and lengths are fixed at build time")
            }
            Predictor::ToyNet(net) => net.predict(cond, z, t, schedule),
        }
    }

    fn vjp(
        &self,
        cond: &[f64],
        z: &[f64],
        t: usize,
        schedule: &NoiseSchedule,
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Predictor::Zero => Ok((vec![0.0; cond.len()], vec![0.0; z.len()])),
            Predictor::AnalyticGaussian { tau, .. } => {
                let gain = analytic_gain(schedule.alpha_bar(t), *tau)?;
                Ok((
                    vec![0.0; cond.len()],
                    upstream.iter().map(|g| gain * g).collect(),
                ))
            }
            Predictor::ToyNet(net) => net.vjp(cond, z, t, schedule, upstream),
        }
    }
}
