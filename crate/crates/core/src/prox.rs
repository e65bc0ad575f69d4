//! Solvers for the quadratic data subproblem
//!
//! ```text
//! t = argmin ½‖A t − b‖² + (μ/2)‖t − r‖²
//! ```
//!
//! i.e. the normal equations `(AᵀA + μI) t = Aᵀb + μ r`. Periodic blur is
//! diagonal in the Fourier domain; blur followed by decimation is handled
//! with the Woodbury identity, which reduces the inverse to a diagonal on
//! the low-resolution frequency grid. Anything else falls back to
//! conjugate gradients.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::image::{dot, Image};
use crate::linop::{transfer_function, Kernel, LinearOperator};

#[derive(Debug, Clone, Copy)]
pub struct ProxProblem<'a> {
    pub operator: &'a LinearOperator,
    pub observation: &'a Image,
    pub anchor: &'a Image,
    pub mu: f64,
}

impl<'a> ProxProblem<'a> {
    pub fn new(
        operator: &'a LinearOperator,
        observation: &'a Image,
        anchor: &'a Image,
        mu: f64,
    ) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::param(format!("penalty must be positive, got {mu}")));
        }
        if observation.shape() != operator.output_shape() {
            return Err(Error::shape(format!(
                "observation {} does not match operator output {}",
                observation.shape(),
                operator.output_shape()
            )));
        }
        if anchor.shape() != operator.input_shape() {
            return Err(Error::shape(format!(
                "anchor {} does not match operator input {}",
                anchor.shape(),
                operator.input_shape()
            )));
        }
        Ok(ProxProblem {
            operator,
            observation,
            anchor,
            mu,
        })
    }

    /// `½‖At − b‖² + (μ/2)‖t − r‖²`.
    pub fn objective(&self, t: &Image) -> Result<f64> {
        let fit = self.operator.apply(t)?.sub(self.observation)?.norm();
        let pen = t.sub(self.anchor)?.norm();
        Ok(0.5 * fit * fit + 0.5 * self.mu * pen * pen)
    }

    /// `Aᵀb + μ r`.
    pub fn rhs(&self) -> Result<Image> {
        let atb = self.operator.adjoint(self.observation)?;
        let mu = self.mu;
        atb.zip_with(self.anchor, |a, r| a + mu * r)
    }

    /// `‖Aᵀ(At − b) + μ(t − r)‖ / (‖Aᵀb‖ + μ‖r‖)`.
    pub fn optimality_residual(&self, t: &Image) -> Result<f64> {
        let at = self.operator.apply(t)?;
        let grad_fit = self.operator.adjoint(&at.sub(self.observation)?)?;
        let mu = self.mu;
        let grad = grad_fit.add(&t.sub(self.anchor)?.scaled(mu))?;
        let scale = self.operator.adjoint(self.observation)?.norm() + mu * self.anchor.norm();
        Ok(if scale > 0.0 {
            grad.norm() / scale
        } else {
            grad.norm()
        })
    }
}

/// Closed-form minimizer for a periodic blur:
/// `F⁻¹[(conj(Â)·F(b) + μ·F(r)) / (|Â|² + μ)]`.
pub fn prox_deblur_fft(problem: &ProxProblem) -> Result<Image> {
    let kernel = match problem.operator {
        LinearOperator::PeriodicConv { kernel, .. } => kernel,
        other => {
            return Err(Error::UnsupportedOperator(format!(
                "FFT deblurring needs a periodic convolution, got {}",
                describe(other)
            )))
        }
    };
    let shape = problem.anchor.shape();
    let (h, w) = (shape.height, shape.width);
    let fft = Fft2d::new(h, w);
    let tf = transfer_function(kernel, h, w)?;
    let mu = problem.mu;
    let b_planes = problem.observation.planes();
    let planes: Vec<Vec<f64>> = problem
        .anchor
        .planes()
        .iter()
        .zip(&b_planes)
        .map(|(r, b)| {
            let fb = fft.forward_real(b);
            let fr = fft.forward_real(r);
            let spec: Vec<Complex64> = tf
                .iter()
                .zip(fb.iter().zip(&fr))
                .map(|(a, (fb, fr))| (a.conj() * fb + mu * fr) / (a.norm_sqr() + mu))
                .collect();
            fft.inverse_real(spec)
        })
        .collect();
    Image::from_planes(h, w, &planes)
}

/// Closed-form minimizer for blur followed by decimation by `factor`.
///
/// With `S` the decimation and `H` the blur,
/// `(HᵀSᵀSH + μI)⁻¹ = (1/μ)[I − HᵀSᵀ(μI + SHHᵀSᵀ)⁻¹SH]`, and `SHHᵀSᵀ` is
/// diagonal on the low-resolution DFT grid with entries equal to the mean
/// of `|Â|²` over each `factor x factor` group of aliased frequencies.
/// A bare decimation is treated as blur by a delta kernel.
pub fn prox_sr_fft(problem: &ProxProblem, factor: usize) -> Result<Image> {
    let (d, kernel) = split_blur_decimate(problem.operator)?;
    if d != factor {
        return Err(Error::param(format!(
            "decimation factor {factor} does not match operator factor {d}"
        )));
    }
    let shape = problem.anchor.shape();
    let (h, w) = (shape.height, shape.width);
    if h % d != 0 || w % d != 0 {
        return Err(Error::shape(format!("{shape} not divisible by {d}")));
    }
    let (lh, lw) = (h / d, w / d);
    let fft = Fft2d::new(h, w);
    let fft_lo = Fft2d::new(lh, lw);
    let tf = transfer_function(&kernel, h, w)?;
    let mu = problem.mu;
    let inv_blocks = 1.0 / (d * d) as f64;

    // Mean of |Â|² over the aliasing group of each low-resolution frequency.
    let mut alias_gain = vec![0.0; lh * lw];
    for r in 0..h {
        for c in 0..w {
            alias_gain[(r % lh) * lw + (c % lw)] += tf[r * w + c].norm_sqr() * inv_blocks;
        }
    }

    let b_planes = problem.observation.planes();
    let planes: Vec<Vec<f64>> = problem
        .anchor
        .planes()
        .iter()
        .zip(&b_planes)
        .map(|(r, b)| {
            // F(Sᵀb) is F_lo(b) tiled over the high-resolution grid.
            let fb = fft_lo.forward_real(b);
            let fr = fft.forward_real(r);
            let rhs: Vec<Complex64> = (0..h * w)
                .map(|i| {
                    let (kr, kc) = (i / w, i % w);
                    tf[i].conj() * fb[(kr % lh) * lw + kc % lw] + mu * fr[i]
                })
                .collect();

            // SH rhs on the low-resolution grid, then the diagonal solve.
            let mut lo = vec![Complex64::new(0.0, 0.0); lh * lw];
            for i in 0..h * w {
                let (kr, kc) = (i / w, i % w);
                lo[(kr % lh) * lw + kc % lw] += tf[i] * rhs[i] * inv_blocks;
            }
            for (v, g) in lo.iter_mut().zip(&alias_gain) {
                *v /= mu + g;
            }

            // rhs − HᵀSᵀ(...), scaled by 1/μ.
            let spec: Vec<Complex64> = (0..h * w)
                .map(|i| {
                    let (kr, kc) = (i / w, i % w);
                    (rhs[i] - tf[i].conj() * lo[(kr % lh) * lw + kc % lw]) / mu
                })
                .collect();
            fft.inverse_real(spec)
        })
        .collect();
    Image::from_planes(h, w, &planes)
}

/// Extracts `(factor, blur kernel)` from `Decimate ∘ PeriodicConv` or a
/// bare `Decimate`.
fn split_blur_decimate(op: &LinearOperator) -> Result<(usize, Kernel)> {
    match op {
        LinearOperator::Decimate { factor, .. } => Ok((*factor, Kernel::delta())),
        LinearOperator::Compose { outer, inner } => match (outer.as_ref(), inner.as_ref()) {
            (LinearOperator::Decimate { factor, .. }, LinearOperator::PeriodicConv { kernel, .. }) => {
                Ok((*factor, kernel.clone()))
            }
            (LinearOperator::Decimate { factor, .. }, LinearOperator::Identity { .. }) => {
                Ok((*factor, Kernel::delta()))
            }
            _ => Err(Error::UnsupportedOperator(format!(
                "super-resolution needs decimate(conv), got {}",
                describe(op)
            ))),
        },
        other => Err(Error::UnsupportedOperator(format!(
            "super-resolution needs decimate(conv), got {}",
            describe(other)
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Image,
    pub iterations: usize,
    pub relative_residual: f64,
    /// False when `max_iter` was reached first; `solution` is then the
    /// iterate with the smallest residual seen.
    pub converged: bool,
}

/// Conjugate gradients on `(AᵀA + μI) t = Aᵀb + μ r`, started from `t = r`.
/// Stops once `‖residual‖ / ‖Aᵀb + μ r‖ <= tol`.
pub fn prox_cg(problem: &ProxProblem, tol: f64, max_iter: usize) -> Result<CgOutcome> {
    if !(tol > 0.0) {
        return Err(Error::param(format!("CG tolerance must be positive, got {tol}")));
    }
    let op = problem.operator;
    let mu = problem.mu;
    let rhs = problem.rhs()?;
    let rhs_norm = rhs.norm();
    let scale = if rhs_norm > 0.0 { rhs_norm } else { 1.0 };
    let shape = rhs.shape();

    let apply = |x: &[f64]| -> Vec<f64> {
        let img = Image::from_vec_unchecked(shape, x.to_vec());
        let n = op.normal(&img).expect("shape checked by ProxProblem");
        n.data().iter().zip(x).map(|(a, v)| a + mu * v).collect()
    };

    let mut x = problem.anchor.data().to_vec();
    let ax = apply(&x);
    let mut res: Vec<f64> = rhs.data().iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut rr = dot(&res, &res);
    let mut best = (rr.sqrt() / scale, x.clone());
    let mut dir = res.clone();
    let mut iterations = 0;

    while iterations < max_iter && best.0 > tol {
        let q = apply(&dir);
        let curvature = dot(&dir, &q);
        if curvature <= 0.0 {
            break;
        }
        let step = rr / curvature;
        for i in 0..x.len() {
            x[i] += step * dir[i];
            res[i] -= step * q[i];
        }
        iterations += 1;
        let rr_new = dot(&res, &res);
        let rel = rr_new.sqrt() / scale;
        if rel < best.0 {
            best = (rel, x.clone());
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..dir.len() {
            dir[i] = res[i] + beta * dir[i];
        }
    }

    let (relative_residual, data) = best;
    Ok(CgOutcome {
        solution: Image::from_vec_unchecked(shape, data),
        iterations,
        relative_residual,
        converged: relative_residual <= tol,
    })
}

/// Scalar closed form for `A = I`: `(b + μ r) / (1 + μ)`.
pub fn prox_denoise(problem: &ProxProblem) -> Result<Image> {
    if !matches!(problem.operator, LinearOperator::Identity { .. }) {
        return Err(Error::UnsupportedOperator(format!(
            "pixelwise prox needs the identity, got {}",
            describe(problem.operator)
        )));
    }
    let mu = problem.mu;
    problem
        .observation
        .zip_with(problem.anchor, |b, r| (b + mu * r) / (1.0 + mu))
}

/// Default CG settings for operators without a closed form.
pub const FALLBACK_CG_TOL: f64 = 1e-10;
pub const FALLBACK_CG_MAX_ITER: usize = 500;

/// Picks the closed form matching the operator, falling back to CG.
pub fn solve(problem: &ProxProblem) -> Result<Image> {
    match problem.operator {
        LinearOperator::Identity { .. } => prox_denoise(problem),
        LinearOperator::PeriodicConv { .. } => prox_deblur_fft(problem),
        op => match split_blur_decimate(op) {
            Ok((d, _)) => prox_sr_fft(problem, d),
            Err(_) => Ok(prox_cg(problem, FALLBACK_CG_TOL, FALLBACK_CG_MAX_ITER)?.solution),
        },
    }
}

fn describe(op: &LinearOperator) -> String {
    match op {
        LinearOperator::Identity { .. } => "identity".into(),
        LinearOperator::PeriodicConv { .. } => "conv".into(),
        LinearOperator::Decimate { factor, .. } => format!("decimate({factor})"),
        LinearOperator::Compose { outer, inner } => {
            format!("{}∘{}", describe(outer), describe(inner))
        }
    }
}
