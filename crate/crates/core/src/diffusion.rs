//! Discrete diffusion: noise schedules, forward noising, the stochastic
//! reverse step and the deterministic DDIM step, and the conditioned
//! `p`-step reverse sampler used as the generator inside the solver.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Linear β schedule with derived `α_t = 1 − β_t` and `ᾱ_t = ∏_{s≤t} α_s`.
///
/// Timesteps are 1-based: `beta(t)` and `alpha(t)` are defined for
/// `1 <= t <= T`, and `alpha_bar(t)` for `0 <= t <= T` with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule {
            beta_start,
            beta_end,
            beta,
            alpha_bar,
        })
    }

    /// The usual DDPM choice: β linear from 1e-4 to 2e-2 over 1000 steps.
    pub fn ddpm_default() -> Self {
        NoiseSchedule::linear(1000, 1e-4, 2e-2).expect("valid constants")
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `"<T> <beta_start> <beta_end>"`.
    pub fn to_text(&self) -> String {
        format!("{} {:e} {:e}\n", self.steps(), self.beta_start, self.beta_end)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::param(format!(
                "schedule text needs 3 fields (T beta_start beta_end), got {}",
                fields.len()
            )));
        }
        let steps = fields[0]
            .parse()
            .map_err(|e| Error::param(format!("schedule T: {e}")))?;
        let start = fields[1]
            .parse()
            .map_err(|e| Error::param(format!("schedule beta_start: {e}")))?;
        let end = fields[2]
            .parse()
            .map_err(|e| Error::param(format!("schedule beta_end: {e}")))?;
        NoiseSchedule::linear(steps, start, end)
    }

    /// Short hex digest of [`NoiseSchedule::to_text`], stored alongside
    /// trained predictors.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn check_len(what: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{what}: lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// One forward noising step: `√(1−β)·z_prev + √β·ε`.
pub fn forward_step(z_prev: &[f64], beta: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_len("forward_step", z_prev, eps)?;
    let (keep, add) = ((1.0 - beta).sqrt(), beta.sqrt());
    Ok(z_prev.iter().zip(eps).map(|(z, e)| keep * z + add * e).collect())
}

/// Closed-form marginal: `√ᾱ·z0 + √(1−ᾱ)·ε`.
pub fn forward_marginal(z0: &[f64], alpha_bar: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_len("forward_marginal", z0, eps)?;
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::param(format!("alpha_bar must lie in (0, 1], got {alpha_bar}")));
    }
    let (keep, add) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| keep * z + add * e).collect())
}

/// Stochastic reverse step
/// `(1/√α_t)(z_t − β_t/√(1−ᾱ_t)·ε̂) + √β_t·noise`.
pub fn ddpm_reverse_step(
    z_t: &[f64],
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    t: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_len("ddpm_reverse_step", z_t, eps_hat)?;
    check_len("ddpm_reverse_step", z_t, noise)?;
    if t == 0 || t > schedule.steps() {
        return Err(Error::param(format!(
            "timestep {t} outside 1..={}",
            schedule.steps()
        )));
    }
    let beta = schedule.beta(t);
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let eps_coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sigma = beta.sqrt();
    Ok(z_t
        .iter()
        .zip(eps_hat)
        .zip(noise)
        .map(|((z, e), n)| inv_sqrt_alpha * (z - eps_coef * e) + sigma * n)
        .collect())
}

/// Output of one deterministic reverse step.
#[derive(Debug, Clone, PartialEq)]
pub struct DdimStep {
    /// Latent at the previous (less noisy) timestep.
    pub z_prev: Vec<f64>,
    /// Clean-latent estimate implied by the noise prediction.
    pub z0_hat: Vec<f64>,
}

/// Deterministic DDIM step from noise level `ᾱ_i` to `ᾱ_{i−1}`:
/// `ẑ = (z_i − √(1−ᾱ_i)·ε̂)/√ᾱ_i`, `z_{i−1} = √ᾱ_{i−1}·ẑ + √(1−ᾱ_{i−1})·ε̂`.
pub fn ddim_reverse_step(
    z_i: &[f64],
    eps_hat: &[f64],
    alpha_bar_i: f64,
    alpha_bar_prev: f64,
) -> Result<DdimStep> {
    check_len("ddim_reverse_step", z_i, eps_hat)?;
    for (name, v) in [("alpha_bar_i", alpha_bar_i), ("alpha_bar_prev", alpha_bar_prev)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::param(format!("{name} must lie in (0, 1], got {v}")));
        }
    }
    let (sa, sn) = (alpha_bar_i.sqrt(), (1.0 - alpha_bar_i).sqrt());
    let (pa, pn) = (alpha_bar_prev.sqrt(), (1.0 - alpha_bar_prev).sqrt());
    let z0_hat: Vec<f64> = z_i.iter().zip(eps_hat).map(|(z, e)| (z - sn * e) / sa).collect();
    let z_prev = z0_hat.iter().zip(eps_hat).map(|(x, e)| pa * x + pn * e).collect();
    Ok(DdimStep { z_prev, z0_hat })
}

/// Concatenated latent `v = [a, z]`: conditioning `a` followed by the
/// diffusion variable `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    cond: Vec<f64>,
    z: Vec<f64>,
}

impl LatentState {
    pub fn new(cond: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if cond.iter().chain(&z).any(|v| !v.is_finite()) {
            return Err(Error::param("latent state contains non-finite entries"));
        }
        Ok(LatentState { cond, z })
    }

    /// Splits a flat `[a, z]` vector after `cond_len` entries.
    pub fn from_concat(flat: &[f64], cond_len: usize) -> Result<Self> {
        if cond_len > flat.len() {
            return Err(Error::shape(format!(
                "conditioning length {cond_len} exceeds state length {}",
                flat.len()
            )));
        }
        LatentState::new(flat[..cond_len].to_vec(), flat[cond_len..].to_vec())
    }

    pub fn cond(&self) -> &[f64] {
        &self.cond
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn cond_len(&self) -> usize {
        self.cond.len()
    }

    pub fn z_len(&self) -> usize {
        self.z.len()
    }

    pub fn len(&self) -> usize {
        self.cond.len() + self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut out = self.cond.clone();
        out.extend_from_slice(&self.z);
        out
    }

    /// Same conditioning, new diffusion part.
    pub fn with_z(&self, z: Vec<f64>) -> LatentState {
        LatentState {
            cond: self.cond.clone(),
            z,
        }
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        (&mut self.cond, &mut self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.cond.iter().chain(&self.z).all(|v| v.is_finite())
    }
}

/// A time-conditioned noise predictor `ε̂(a, z, t)`.
pub trait NoisePredictor: Send + Sync {
    /// Predicted noise for latent `z` at timestep `t` (1-based), given the
    /// conditioning `cond`. The output has the length of `z`.
    fn predict(&self, cond: &[f64], z: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64>;

    /// Vector-Jacobian product of [`NoisePredictor::predict`]: returns
    /// `(J_condᵀ g, J_zᵀ g)` for upstream gradient `g`.
    fn vjp(
        &self,
        cond: &[f64],
        z: &[f64],
        t: usize,
        schedule: &NoiseSchedule,
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let _ = (cond, z, t, schedule, upstream);
        Err(Error::Capability(
            "noise predictor does not provide an input-gradient rule".into(),
        ))
    }
}

pub(crate) fn check_steps(p: usize, schedule: &NoiseSchedule) -> Result<()> {
    if p == 0 || p > schedule.steps() {
        return Err(Error::param(format!(
            "diffusion steps p = {p} outside 1..={}",
            schedule.steps()
        )));
    }
    Ok(())
}

/// Runs `p` conditioned DDIM steps `i = p, …, 1` starting from the
/// diffusion part of `v`, keeping the conditioning fixed. No noise is
/// drawn here; the input `z` is taken as `z^p`.
pub fn run_sp(
    v: &LatentState,
    p: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
) -> Result<LatentState> {
    check_steps(p, schedule)?;
    let mut z = v.z.clone();
    for i in (1..=p).rev() {
        let eps = predictor.predict(&v.cond, &z, i, schedule);
        if eps.len() != z.len() {
            return Err(Error::shape(format!(
                "predictor returned {} values for a latent of length {}",
                eps.len(),
                z.len()
            )));
        }
        z = ddim_reverse_step(&z, &eps, schedule.alpha_bar(i), schedule.alpha_bar(i - 1))?.z_prev;
    }
    LatentState::new(v.cond.clone(), z)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict(&self, _: &[f64], z: &[f64], _: usize, _: &NoiseSchedule) -> Vec<f64> {
            vec![0.0; z.len()]
        }
    }

    struct Constant(f64);
    impl NoisePredictor for Constant {
        fn predict(&self, _: &[f64], z: &[f64], _: usize, _: &NoiseSchedule) -> Vec<f64> {
            vec![self.0; z.len()]
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.02, 0.3).unwrap();
        assert_eq!(s.beta(1), 0.02);
        assert_eq!(s.alpha_bars(), &[1.0, 0.98]);
    }

    #[test]
    fn constant_schedule_products() {
        let s = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
        let ab = s.alpha_bars();
        assert!((ab[0] - 1.0).abs() < 1e-15);
        assert!((ab[1] - 0.9).abs() < 1e-15);
        assert!((ab[2] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn schedule_text_roundtrip_and_fingerprint() {
        let s = NoiseSchedule::linear(50, 0.05, 0.35).unwrap();
        let back = NoiseSchedule::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.fingerprint(), s.fingerprint());
        assert_ne!(NoiseSchedule::ddpm_default().fingerprint(), s.fingerprint());
    }

    #[test]
    fn forward_step_limits_and_value() {
        let z = [0.3, -1.2];
        let e = [0.7, 0.1];
        assert_eq!(forward_step(&z, 0.0, &e).unwrap(), z.to_vec());
        assert_eq!(forward_step(&z, 1.0, &e).unwrap(), e.to_vec());
        let v = forward_step(&[1.0], 0.19, &[0.5]).unwrap()[0];
        assert!((v - 1.117_945).abs() < 1e-5);
        assert!(forward_step(&z, 0.1, &[0.0]).is_err());
    }

    #[test]
    fn forward_marginal_limits_and_value() {
        let z = [0.3, -1.2];
        let e = [0.7, 0.1];
        assert_eq!(forward_marginal(&z, 1.0, &e).unwrap(), z.to_vec());
        let near = forward_marginal(&z, 1e-14, &e).unwrap();
        assert!((near[0] - 0.7).abs() < 1e-6);
        let v = forward_marginal(&[1.0], 0.64, &[0.5]).unwrap()[0];
        assert!((v - 1.1).abs() < 1e-12);
        assert!(forward_marginal(&z, 0.0, &e).is_err());
    }

    #[test]
    fn ddpm_step_cases() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        let drift = ddpm_reverse_step(&[2.0], &[0.0], &s, 1, &[0.0]).unwrap()[0];
        assert!((drift - 2.0 / 0.9f64.sqrt()).abs() < 1e-12);
        let v = ddpm_reverse_step(&[1.0], &[0.2], &s, 1, &[0.0]).unwrap()[0];
        assert!((v - 0.987_424).abs() < 1e-5);
        let noisy = ddpm_reverse_step(&[1.0], &[0.2], &s, 1, &[1.5]).unwrap()[0];
        assert!((noisy - v - 0.1f64.sqrt() * 1.5).abs() < 1e-12);
        assert!(ddpm_reverse_step(&[1.0], &[0.2], &s, 2, &[0.0]).is_err());
        assert!(ddpm_reverse_step(&[1.0], &[0.2], &s, 0, &[0.0]).is_err());
    }

    #[test]
    fn ddim_step_cases() {
        let fixed = ddim_reverse_step(&[0.4, -2.0], &[0.0, 0.0], 0.7, 0.7).unwrap();
        assert_eq!(fixed.z_prev, vec![0.4, -2.0]);
        let terminal = ddim_reverse_step(&[0.4], &[0.3], 0.6, 1.0).unwrap();
        assert_eq!(terminal.z_prev, terminal.z0_hat);
        let step = ddim_reverse_step(&[1.0], &[0.1], 0.5, 0.8).unwrap();
        assert!((step.z_prev[0] - 1.220_186).abs() < 1e-5);
        assert!((step.z0_hat[0] - 1.314_214).abs() < 1e-5);
        assert!(ddim_reverse_step(&[1.0], &[0.1], 0.0, 0.8).is_err());
    }

    #[test]
    fn run_sp_single_step_matches_ddim() {
        let s = NoiseSchedule::linear(10, 0.05, 0.2).unwrap();
        let v = LatentState::new(vec![1.0], vec![0.5, -0.5]).unwrap();
        let out = run_sp(&v, 1, &Constant(0.3), &s).unwrap();
        let expect = ddim_reverse_step(&[0.5, -0.5], &[0.3, 0.3], s.alpha_bar(1), 1.0).unwrap();
        assert_eq!(out.z(), expect.z_prev.as_slice());
        assert_eq!(out.cond(), v.cond());
    }

    #[test]
    fn run_sp_zero_predictor_only_rescales() {
        // With ε̂ = 0 the chain multiplies z by √ᾱ_{i−1}/√ᾱ_i at each step,
        // i.e. by 1/√ᾱ_p overall.
        let s = NoiseSchedule::linear(20, 0.01, 0.05).unwrap();
        let v = LatentState::new(vec![], vec![0.25, -1.0]).unwrap();
        let out = run_sp(&v, 7, &Zero, &s).unwrap();
        let scale = 1.0 / s.alpha_bar(7).sqrt();
        for (o, i) in out.z().iter().zip(v.z()) {
            assert!((o - scale * i).abs() < 1e-12);
        }
    }

    #[test]
    fn run_sp_rejects_bad_p() {
        let s = NoiseSchedule::linear(5, 0.01, 0.05).unwrap();
        let v = LatentState::new(vec![], vec![0.0]).unwrap();
        assert!(run_sp(&v, 0, &Zero, &s).is_err());
        assert!(run_sp(&v, 6, &Zero, &s).is_err());
    }

    #[test]
    fn latent_state_concat_split() {
        let v = LatentState::new(vec![1.0, 2.0], vec![3.0]).unwrap();
        assert_eq!(v.concat(), vec![1.0, 2.0, 3.0]);
        assert_eq!(LatentState::from_concat(&v.concat(), 2).unwrap(), v);
        assert!(LatentState::new(vec![f64::NAN], vec![]).is_err());
        assert!(LatentState::from_concat(&[1.0], 2).is_err());
    }
}
