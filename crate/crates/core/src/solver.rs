//! Half-quadratic splitting over the latent generative prior.
//!
//! The objective is
//!
//! ```text
//! L(v, t) = ½‖A t − b‖² + (μ/2)‖N(v) − t‖²
//! ```
//!
//! and each outer iteration `k = 1, …, k_max` does
//!
//! 1. `v ← S^p(v)`
//! 2. `t ← argmin_t L(v, t)` with `μ = μ_k` (closed form, see [`crate::prox`])
//! 3. `v ← v − η ∇_v L(v, t)`
//!
//! with the penalty `μ_k = γ^k μ₀`. The restored image is `N(v)` after the
//! last gradient step.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::LatentState;
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::linop::LinearOperator;
use crate::prior::{Codec, LatentPrior, MapTrace};
use crate::prox::{self, ProxProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Reverse diffusion steps per application of `S^p`.
    pub p: usize,
    pub mu0: f64,
    /// Penalty growth factor, `>= 1`.
    pub gamma: f64,
    /// Gradient step length.
    pub eta: f64,
    pub k_max: usize,
    /// Stop once `‖t^{k+1} − t^k‖ / ‖t^k‖` drops below this.
    pub rel_tol: Option<f64>,
    /// Gradient steps on `v` per outer iteration.
    pub inner_steps: usize,
    /// Seed for the initial diffusion latent.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            p: 10,
            mu0: 1.0,
            gamma: 1.01,
            eta: 1e-3,
            k_max: 100,
            rel_tol: None,
            inner_steps: 1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, diffusion_steps: usize) -> Result<()> {
        let checks = [
            (self.mu0 > 0.0 && self.mu0.is_finite(), "mu0 must be positive"),
            (self.gamma >= 1.0 && self.gamma.is_finite(), "gamma must be >= 1"),
            (self.eta > 0.0 && self.eta.is_finite(), "eta must be positive"),
            (self.k_max >= 1, "k_max must be >= 1"),
            (self.inner_steps >= 1, "inner_steps must be >= 1"),
            (
                self.rel_tol.map_or(true, |t| t > 0.0),
                "rel_tol must be positive when set",
            ),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Error::param(*msg));
        }
        if self.p == 0 || self.p > diffusion_steps {
            return Err(Error::param(format!(
                "p = {} outside 1..={diffusion_steps}",
                self.p
            )));
        }
        Ok(())
    }
}

/// `γ^k μ₀`.
pub fn penalty_at(k: usize, mu0: f64, gamma: f64) -> f64 {
    gamma.powf(k as f64) * mu0
}

/// Initial latent `[encode(b'), z⁰]`, where `b'` is `b` brought to the
/// reconstruction grid by pixel replication and `z⁰ ~ N(0, I)` is drawn
/// from a ChaCha8 stream seeded with `seed`.
pub fn warm_start(b: &Image, codec: &Codec, target: Shape, seed: u64) -> Result<LatentState> {
    let lifted = lift_to_grid(b, target)?;
    let cond = codec.encode(&lifted)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..codec.latent_len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    LatentState::new(cond, z)
}

/// Replicates pixels of `b` so it covers `target`; `target` must be an
/// integer multiple of `b` in both directions with the same factor.
pub fn lift_to_grid(b: &Image, target: Shape) -> Result<Image> {
    if b.shape() == target {
        return Ok(b.clone());
    }
    let err = || {
        Error::shape(format!(
            "cannot bring observation {} onto reconstruction grid {target}",
            b.shape()
        ))
    };
    if b.channels() != target.channels
        || target.height % b.height() != 0
        || target.width % b.width() != 0
    {
        return Err(err());
    }
    let factor = target.height / b.height();
    if target.width / b.width() != factor {
        return Err(err());
    }
    Ok(b.upsample_replicate(factor))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `½‖A t − b‖²`
    pub datafit: f64,
    /// `(μ/2)‖N(v) − t‖²`
    pub penalty: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.datafit + self.penalty
    }
}

fn terms_for(op: &LinearOperator, b: &Image, t: &Image, generated: &Image, mu: f64) -> Result<ObjectiveTerms> {
    let fit = op.apply(t)?.sub(b)?.norm();
    let gap = generated.sub(t)?.norm();
    Ok(ObjectiveTerms {
        datafit: 0.5 * fit * fit,
        penalty: 0.5 * mu * gap * gap,
    })
}

/// `L(v, t)` split into its two terms.
pub fn objective(
    v: &LatentState,
    t: &Image,
    mu: f64,
    b: &Image,
    op: &LinearOperator,
    prior: &LatentPrior,
    p: usize,
) -> Result<ObjectiveTerms> {
    let generated = prior.generate(v, p)?;
    terms_for(op, b, t, &generated, mu)
}

/// One gradient step on `v`: `v − η μ J_N(v)ᵀ (N(v) − t)`. The data term
/// does not depend on `v`.
pub fn grad_step(
    v: &LatentState,
    t: &Image,
    mu: f64,
    eta: f64,
    prior: &LatentPrior,
    p: usize,
) -> Result<LatentState> {
    let trace = prior.generate_traced(v, p)?;
    grad_step_traced(v, &trace, t, mu, eta, prior)
}

fn grad_step_traced(
    v: &LatentState,
    trace: &MapTrace,
    t: &Image,
    mu: f64,
    eta: f64,
    prior: &LatentPrior,
) -> Result<LatentState> {
    if !(mu > 0.0) || !(eta > 0.0) {
        return Err(Error::param("gradient step needs mu > 0 and eta > 0"));
    }
    let residual = trace.image.sub(t)?;
    let g = prior.vjp_from_trace(v, trace, &residual)?;
    let step = eta * mu;
    let mut next = v.clone();
    let (cond, z) = next.parts_mut();
    for (x, d) in cond.iter_mut().zip(g.cond()) {
        *x -= step * d;
    }
    for (x, d) in z.iter_mut().zip(g.z()) {
        *x -= step * d;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub mu: f64,
    /// `L(v^k, t^{k+1})`, evaluated where the gradient is taken.
    pub objective: f64,
    pub datafit: f64,
    pub penalty: f64,
    /// `‖t^{k+1} − t^k‖ / ‖t^k‖`; the first iteration compares against the
    /// observation lifted to the reconstruction grid.
    pub rel_change: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    /// The last `t` iterate.
    pub last_t: Option<Image>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub const CSV_HEADER: [&'static str; 6] = ["k", "mu", "L", "datafit", "penalty", "relchange"];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| Error::io("<trace>", std::io::Error::other(e));
        w.write_record(Self::CSV_HEADER).map_err(to_io)?;
        for r in &self.records {
            w.write_record(&[
                r.k.to_string(),
                r.mu.to_string(),
                r.objective.to_string(),
                r.datafit.to_string(),
                r.penalty.to_string(),
                r.rel_change.to_string(),
            ])
            .map_err(to_io)?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }
}

/// Hook points inside [`reld_solve_observed`].
#[derive(Debug)]
pub enum SolveEvent<'a> {
    /// After `v ← S^p(v)` in iteration `k`.
    Sampled { k: usize, v: &'a LatentState },
    /// After the data subproblem; `t` is the new auxiliary image.
    DataStep { k: usize, t: &'a Image, mu: f64 },
    /// After the gradient step(s) of iteration `k`.
    GradientStep { k: usize, v: &'a LatentState },
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub image: Image,
    pub latent: LatentState,
    pub trace: SolverTrace,
}

pub fn reld_solve(
    b: &Image,
    op: &LinearOperator,
    prior: &LatentPrior,
    cfg: &SolverConfig,
) -> Result<Solution> {
    reld_solve_observed(b, op, prior, cfg, &mut |_| {})
}

pub fn reld_solve_observed(
    b: &Image,
    op: &LinearOperator,
    prior: &LatentPrior,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(SolveEvent<'_>),
) -> Result<Solution> {
    cfg.validate(prior.schedule().steps())?;
    if b.shape() != op.output_shape() {
        return Err(Error::shape(format!(
            "observation {} does not match operator output {}",
            b.shape(),
            op.output_shape()
        )));
    }
    if prior.codec().image_shape() != op.input_shape() {
        return Err(Error::shape(format!(
            "codec image shape {} does not match operator input {}",
            prior.codec().image_shape(),
            op.input_shape()
        )));
    }

    let mut v = warm_start(b, prior.codec(), op.input_shape(), cfg.seed)?;
    let mut t_prev = lift_to_grid(b, op.input_shape())?;
    let mut trace = SolverTrace::default();

    for k in 1..=cfg.k_max {
        let mu = penalty_at(k, cfg.mu0, cfg.gamma);
        v = prior.sample(&v, cfg.p)?;
        observer(SolveEvent::Sampled { k, v: &v });

        let map = prior.generate_traced(&v, cfg.p)?;
        let t = prox::solve(&ProxProblem::new(op, b, &map.image, mu)?)?;
        observer(SolveEvent::DataStep { k, t: &t, mu });

        let terms = terms_for(op, b, &t, &map.image, mu)?;
        let prev_norm = t_prev.norm();
        let diff = t.sub(&t_prev)?.norm();
        let rel_change = if prev_norm > 0.0 { diff / prev_norm } else { diff };
        let record = TraceRecord {
            k,
            mu,
            objective: terms.total(),
            datafit: terms.datafit,
            penalty: terms.penalty,
            rel_change,
        };
        if ![record.objective, record.rel_change].iter().all(|x| x.is_finite()) {
            trace.last_t = Some(t);
            return Err(Error::NonFinite {
                iteration: k,
                trace: Box::new(trace),
            });
        }
        trace.records.push(record);

        v = grad_step_traced(&v, &map, &t, mu, cfg.eta, prior)?;
        for _ in 1..cfg.inner_steps {
            v = grad_step(&v, &t, mu, cfg.eta, prior, cfg.p)?;
        }
        if !v.is_finite() {
            trace.last_t = Some(t);
            return Err(Error::NonFinite {
                iteration: k,
                trace: Box::new(trace),
            });
        }
        observer(SolveEvent::GradientStep { k, v: &v });

        t_prev = t;
        if cfg.rel_tol.is_some_and(|tol| rel_change < tol) {
            break;
        }
    }

    let image = prior.generate(&v, cfg.p)?;
    trace.last_t = Some(t_prev);
    Ok(Solution {
        image,
        latent: v,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::NoiseSchedule;
    use crate::prior::Predictor;

    fn small_prior(predictor: Predictor, shape: Shape) -> LatentPrior {
        LatentPrior::new(
            NoiseSchedule::linear(20, 0.01, 0.2).unwrap(),
            predictor,
            Codec::identity(shape).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn penalty_schedule() {
        assert_eq!(penalty_at(0, 0.7, 1.05), 0.7);
        for k in [1, 10, 100] {
            assert_eq!(penalty_at(k, 0.3, 1.0), 0.3);
        }
        assert!((penalty_at(100, 1.0, 1.01) - 2.704_81).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        let ok = SolverConfig::default();
        ok.validate(1000).unwrap();
        assert!(ok.validate(5).is_err());
        for bad in [
            SolverConfig { mu0: 0.0, ..ok.clone() },
            SolverConfig { gamma: 0.99, ..ok.clone() },
            SolverConfig { eta: 0.0, ..ok.clone() },
            SolverConfig { k_max: 0, ..ok.clone() },
            SolverConfig { p: 0, ..ok.clone() },
            SolverConfig { rel_tol: Some(0.0), ..ok.clone() },
        ] {
            assert!(bad.validate(1000).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn warm_start_equal_shapes() {
        let s = Shape::gray(4, 4);
        let codec = Codec::identity(s).unwrap();
        let b = Image::from_fn(s, |r, c, _| (r + c) as f64 / 8.0);
        let v = warm_start(&b, &codec, s, 3).unwrap();
        assert_eq!(v.cond(), b.data());
        assert_eq!(v, warm_start(&b, &codec, s, 3).unwrap());
        assert_ne!(v.z(), warm_start(&b, &codec, s, 4).unwrap().z());
    }

    #[test]
    fn warm_start_noise_statistics() {
        let s = Shape::gray(32, 32);
        let codec = Codec::identity(s).unwrap();
        let v = warm_start(&Image::zeros(s), &codec, s, 21).unwrap();
        let n = v.z_len() as f64;
        let mean = v.z().iter().sum::<f64>() / n;
        let var = v.z().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 4.0 / n.sqrt());
        assert!((0.8..=1.2).contains(&var));
    }

    #[test]
    fn warm_start_lifts_low_resolution() {
        let hi = Shape::gray(4, 4);
        let codec = Codec::identity(hi).unwrap();
        let b = Image::new(Shape::gray(2, 2), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let v = warm_start(&b, &codec, hi, 0).unwrap();
        assert_eq!(&v.cond()[..4], &[0.1, 0.1, 0.2, 0.2]);
        assert!(warm_start(&b, &codec, Shape::gray(4, 6), 0).is_err());
    }

    #[test]
    fn objective_vanishes_at_consistent_point() {
        let s = Shape::gray(3, 3);
        let prior = small_prior(Predictor::Zero, s);
        let v = LatentState::new(vec![0.0; 9], (0..9).map(|i| i as f64 * 0.1).collect()).unwrap();
        let t = prior.generate(&v, 4).unwrap();
        let op = LinearOperator::identity(s).unwrap();
        let terms = objective(&v, &t, 2.0, &t, &op, &prior, 4).unwrap();
        assert_eq!(terms.total(), 0.0);
        let b = t.map(|x| x + 0.5);
        let pure_fit = objective(&v, &t, 0.0, &b, &op, &prior, 4).unwrap();
        assert!((pure_fit.total() - 0.5 * 9.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn grad_step_zero_residual_is_stationary() {
        let s = Shape::gray(2, 2);
        let net = crate::prior::ToyNet::new(4, 4, 1, &[5], &NoiseSchedule::linear(20, 0.01, 0.2).unwrap(), 1).unwrap();
        let prior = small_prior(Predictor::ToyNet(net), s);
        let v = LatentState::new(vec![0.1, 0.2, 0.3, 0.4], vec![0.5, -0.5, 0.2, 0.0]).unwrap();
        let t = prior.generate(&v, 3).unwrap();
        assert_eq!(grad_step(&v, &t, 1.5, 1e-2, &prior, 3).unwrap(), v);
    }

    #[test]
    fn grad_step_linear_map() {
        // Zero predictor: N(v) = c z with c = 1/√ᾱ_p, so the step is
        // z ← z − ημ c (c z − t) and the conditioning is untouched.
        let s = Shape::gray(2, 2);
        let prior = small_prior(Predictor::Zero, s);
        let p = 3;
        let c = 1.0 / prior.schedule().alpha_bar(p).sqrt();
        let v = LatentState::new(vec![9.0; 4], vec![0.5, -0.5, 0.2, 0.0]).unwrap();
        let t = Image::new(s, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (mu, eta) = (2.0, 0.05);
        let next = grad_step(&v, &t, mu, eta, &prior, p).unwrap();
        assert_eq!(next.cond(), v.cond());
        for ((n, z), tv) in next.z().iter().zip(v.z()).zip(t.data()) {
            assert!((n - (z - eta * mu * c * (c * z - tv))).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pipeline_recovers_observation() {
        // With the zero predictor N(v) = z/√ᾱ_p, so the loop is a linear
        // contraction towards b when ᾱ_p is close to 1 and ημ ≈ 1.
        let s = Shape::gray(8, 8);
        let prior = LatentPrior::new(
            NoiseSchedule::linear(20, 1e-9, 0.2).unwrap(),
            Predictor::Zero,
            Codec::identity(s).unwrap(),
        )
        .unwrap();
        let b = Image::from_fn(s, |r, c, _| ((r * 8 + c) % 13) as f64 / 13.0);
        let op = LinearOperator::identity(s).unwrap();
        let cfg = SolverConfig {
            p: 1,
            mu0: 1.0,
            gamma: 1.0,
            eta: 0.9,
            k_max: 20,
            ..SolverConfig::default()
        };
        let sol = reld_solve(&b, &op, &prior, &cfg).unwrap();
        assert_eq!(sol.trace.len(), 20);
        assert!(crate::image::psnr(&b, &sol.image).unwrap() >= 60.0);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let s = Shape::gray(4, 4);
        let prior = small_prior(Predictor::Zero, s);
        let op = LinearOperator::identity(Shape::gray(4, 5)).unwrap();
        let b = Image::zeros(Shape::gray(4, 5));
        assert!(reld_solve(&b, &op, &prior, &SolverConfig { p: 2, ..Default::default() }).is_err());
    }
}
