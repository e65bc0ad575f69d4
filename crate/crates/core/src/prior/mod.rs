//! The generative map `N = decode ∘ Π ∘ S^p` and its vector-Jacobian
//! product.
//!
//! `S^p` runs `p` conditioned DDIM steps on `v = [a, z]`, `Π` drops the
//! conditioning `a`, and the decoder turns the remaining latent into an
//! image. The VJP differentiates through every DDIM step and through the
//! conditioning pathway, so gradients reach both `a` and `z`.

pub mod codec;
pub mod predictor;
pub mod toynet;

use crate::diffusion::{check_steps, ddim_reverse_step, run_sp, LatentState, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::Image;

pub use codec::{Codec, CodecKind};
pub use predictor::{analytic_eps, Predictor};
pub use toynet::{train_toy_score, ToyNet, TrainConfig, TrainReport, TrainingPair};

/// Everything the generative map needs besides the number of steps.
pub struct LatentPrior {
    schedule: NoiseSchedule,
    predictor: Box<dyn NoisePredictor>,
    codec: Codec,
}

/// Forward pass of `N` with the intermediate latents kept for the VJP.
#[derive(Debug, Clone)]
pub struct MapTrace {
    /// `z^p, z^{p−1}, …, z^1`: the inputs of each DDIM step.
    step_inputs: Vec<Vec<f64>>,
    /// `z^0`.
    pub latent: Vec<f64>,
    /// `N(v) = decode(z^0)`.
    pub image: Image,
}

impl LatentPrior {
    /// Builds a prior from one of the bundled predictors, checking that a
    /// trained network matches the schedule and codec dimensions.
    pub fn new(schedule: NoiseSchedule, predictor: Predictor, codec: Codec) -> Result<Self> {
        match &predictor {
            Predictor::ToyNet(net) => {
                net.check_schedule(&schedule)?;
                if net.latent_len() != codec.latent_len() {
                    return Err(Error::shape(format!(
                        "network latent length {} vs codec latent length {}",
                        net.latent_len(),
                        codec.latent_len()
                    )));
                }
                if net.cond_len() != codec.latent_len() {
                    return Err(Error::shape(format!(
                        "network conditioning length {} vs encoded observation length {}",
                        net.cond_len(),
                        codec.latent_len()
                    )));
                }
            }
            Predictor::AnalyticGaussian { mean, .. } => {
                if mean.len() != codec.latent_len() {
                    return Err(Error::shape(format!(
                        "Gaussian mean of length {} vs codec latent length {}",
                        mean.len(),
                        codec.latent_len()
                    )));
                }
            }
            Predictor::Zero => {}
        }
        Ok(LatentPrior {
            schedule,
            predictor: Box::new(predictor),
            codec,
        })
    }

    /// Prior around a caller-supplied predictor. Output lengths are checked
    /// at evaluation time.
    pub fn with_predictor(
        schedule: NoiseSchedule,
        predictor: Box<dyn NoisePredictor>,
        codec: Codec,
    ) -> Self {
        LatentPrior {
            schedule,
            predictor,
            codec,
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn predictor(&self) -> &dyn NoisePredictor {
        self.predictor.as_ref()
    }

    fn check_state(&self, v: &LatentState) -> Result<()> {
        if v.z_len() != self.codec.latent_len() {
            return Err(Error::shape(format!(
                "latent of length {} for a codec expecting {}",
                v.z_len(),
                self.codec.latent_len()
            )));
        }
        Ok(())
    }

    /// `S^p(v)`.
    pub fn sample(&self, v: &LatentState, p: usize) -> Result<LatentState> {
        run_sp(v, p, self.predictor.as_ref(), &self.schedule)
    }

    /// `N(v)`.
    pub fn generate(&self, v: &LatentState, p: usize) -> Result<Image> {
        self.check_state(v)?;
        let out = self.sample(v, p)?;
        self.codec.decode(out.z())
    }

    /// `N(v)` together with what [`LatentPrior::vjp_from_trace`] needs.
    pub fn generate_traced(&self, v: &LatentState, p: usize) -> Result<MapTrace> {
        self.check_state(v)?;
        check_steps(p, &self.schedule)?;
        let mut step_inputs = Vec::with_capacity(p);
        let mut z = v.z().to_vec();
        for i in (1..=p).rev() {
            let eps = self.predictor.predict(v.cond(), &z, i, &self.schedule);
            if eps.len() != z.len() {
                return Err(Error::shape("predictor output length"));
            }
            let next = ddim_reverse_step(
                &z,
                &eps,
                self.schedule.alpha_bar(i),
                self.schedule.alpha_bar(i - 1),
            )?
            .z_prev;
            step_inputs.push(std::mem::replace(&mut z, next));
        }
        let image = self.codec.decode(&z)?;
        Ok(MapTrace {
            step_inputs,
            latent: z,
            image,
        })
    }

    /// `J_N(v)ᵀ w`, the gradient of `⟨N(v), w⟩` with respect to `v`.
    pub fn vjp(&self, v: &LatentState, w: &Image, p: usize) -> Result<LatentState> {
        let trace = self.generate_traced(v, p)?;
        self.vjp_from_trace(v, &trace, w)
    }

    /// VJP reusing a forward pass recorded at the same `v`.
    ///
    /// Each DDIM step is affine in `(z_i, ε̂)`:
    /// `z_{i−1} = c_z z_i + c_e ε̂(a, z_i, i)` with
    /// `c_z = √ᾱ_{i−1}/√ᾱ_i` and
    /// `c_e = √(1−ᾱ_{i−1}) − √ᾱ_{i−1}·√(1−ᾱ_i)/√ᾱ_i`.
    pub fn vjp_from_trace(&self, v: &LatentState, trace: &MapTrace, w: &Image) -> Result<LatentState> {
        let mut g = self.codec.decode_adjoint(w)?;
        let mut g_cond = vec![0.0; v.cond_len()];
        let p = trace.step_inputs.len();
        // step_inputs[j] is z^{p−j}; walk back from z^1 to z^p.
        for (j, z_i) in trace.step_inputs.iter().enumerate().rev() {
            let i = p - j;
            let (ab, ab_prev) = (self.schedule.alpha_bar(i), self.schedule.alpha_bar(i - 1));
            let c_z = (ab_prev / ab).sqrt();
            let c_e = (1.0 - ab_prev).sqrt() - (ab_prev / ab).sqrt() * (1.0 - ab).sqrt();
            let upstream: Vec<f64> = g.iter().map(|x| c_e * x).collect();
            let (ga, gz) = self
                .predictor
                .vjp(v.cond(), z_i, i, &self.schedule, &upstream)?;
            for (acc, x) in g_cond.iter_mut().zip(&ga) {
                *acc += x;
            }
            for (gi, x) in g.iter_mut().zip(&gz) {
                *gi = c_z * *gi + x;
            }
        }
        LatentState::new(g_cond, g)
    }
}
