//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.
//!
//! Reference values come from oracles written here, independent of the
//! library's own code paths: dense matrices assembled straight from the
//! operator definitions, a dense conjugate-gradient solver, closed-form
//! schedule products, Monte Carlo moments, finite differences and the
//! Bayes-optimal Gaussian noise predictor.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use reld::diffusion::{forward_marginal, forward_step, run_sp, LatentState, NoisePredictor, NoiseSchedule};
use reld::experiment::{self, ExperimentConfig, Task};
use reld::image::{psnr, Image, Shape};
use reld::linop::{gaussian_psf, Kernel, LinearOperator};
use reld::prior::{analytic_eps, train_toy_score, Codec, LatentPrior, Predictor, ToyNet, TrainConfig, TrainingPair};
use reld::prox::{prox_deblur_fft, prox_sr_fft, ProxProblem};
use reld::solver::{reld_solve, SolverConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

fn random_image(rng: &mut ChaCha8Rng, shape: Shape) -> Image {
    Image::new(shape, gauss_vec(rng, shape.len())).unwrap()
}

fn raw_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn raw_norm(a: &[f64]) -> f64 {
    raw_dot(a, a).sqrt()
}

fn random_kernel(rng: &mut ChaCha8Rng, max_size: usize) -> Kernel {
    let size = 2 * rng.random_range(0..=(max_size - 1) / 2) + 1;
    if rng.random_bool(0.5) {
        gaussian_psf(rng.random_range(0.3..3.0), size).unwrap()
    } else {
        Kernel::new(size, gauss_vec(rng, size * size)).unwrap()
    }
}

// ---------------------------------------------------------------------------
// Dense operator matrices built from the definitions:
//   circular convolution  y[r, c] = Σ_{i,j} w[i, j] · x[r − (i − k), c − (j − k)]
//   decimation            keep samples whose row and column are ≡ 0 mod d
// Images are single-channel, row-major.

fn dense_conv(kernel: &Kernel, h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let k = kernel.size();
    let c0 = (k - 1) as isize / 2;
    let mut m = DMatrix::zeros(n, n);
    for r in 0..h {
        for c in 0..w {
            for i in 0..k {
                for j in 0..k {
                    let rr = (r as isize - (i as isize - c0)).rem_euclid(h as isize) as usize;
                    let cc = (c as isize - (j as isize - c0)).rem_euclid(w as isize) as usize;
                    m[(r * w + c, rr * w + cc)] += kernel.weights()[i * k + j];
                }
            }
        }
    }
    m
}

fn dense_decimate(d: usize, h: usize, w: usize) -> DMatrix<f64> {
    let (oh, ow) = (h / d, w / d);
    let mut m = DMatrix::zeros(oh * ow, h * w);
    for r in 0..oh {
        for c in 0..ow {
            m[(r * ow + c, (r * d) * w + c * d)] = 1.0;
        }
    }
    m
}

/// Solves `(AᵀA + μI) t = Aᵀb + μr` by plain conjugate gradients.
fn dense_cg(a: &DMatrix<f64>, b: &DVector<f64>, r: &DVector<f64>, mu: f64, tol: f64) -> DVector<f64> {
    let m = a.transpose() * a + DMatrix::identity(a.ncols(), a.ncols()) * mu;
    let rhs = a.transpose() * b + r * mu;
    let mut x = DVector::zeros(rhs.len());
    let mut res = &rhs - &m * &x;
    let mut p = res.clone();
    let mut rs = res.dot(&res);
    let stop = tol * rhs.norm();
    for _ in 0..10 * rhs.len() {
        if rs.sqrt() <= stop {
            break;
        }
        let mp = &m * &p;
        let alpha = rs / p.dot(&mp);
        x += &p * alpha;
        res -= &mp * alpha;
        let rs_new = res.dot(&res);
        p = &res + &p * (rs_new / rs);
        rs = rs_new;
    }
    x
}

// ---------------------------------------------------------------------------

fn adjoint_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let kinds = ["identity", "conv", "decimate", "compose"];
    let mut worst = [0.0f64; 4];
    for (ki, kind) in kinds.iter().enumerate() {
        for _ in 0..50 {
            let d = if rng.random_bool(0.5) { 2 } else { 4 };
            let h = 4 * rng.random_range(2..=8);
            let w = 4 * rng.random_range(2..=8);
            let shape = Shape::new(h, w, if rng.random_bool(0.5) { 1 } else { 3 });
            let op = match *kind {
                "identity" => LinearOperator::identity(shape),
                "conv" => LinearOperator::conv(random_kernel(&mut rng, h.min(w).min(9)), shape),
                "decimate" => LinearOperator::decimate(d, shape),
                _ => LinearOperator::blur_decimate(random_kernel(&mut rng, 7), d, shape),
            }
            .unwrap();
            let x = random_image(&mut rng, op.input_shape());
            let y = random_image(&mut rng, op.output_shape());
            let ax = op.apply(&x).unwrap();
            let aty = op.adjoint(&y).unwrap();
            let err = (raw_dot(ax.data(), y.data()) - raw_dot(x.data(), aty.data())).abs()
                / (raw_norm(ax.data()) * raw_norm(y.data()));
            worst[ki] = worst[ki].max(err);
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Outcome {
        passed: max <= 1e-10,
        detail: format!(
            "max rel err identity {:.1e}, conv {:.1e}, decimate {:.1e}, compose {:.1e} (tol 1e-10, 50 pairs each)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    }
}

fn deblur_prox_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (h, w) = (16, 16);
    let shape = Shape::gray(h, w);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let kernel = random_kernel(&mut rng, 15);
        let op = LinearOperator::conv(kernel.clone(), shape).unwrap();
        let b = random_image(&mut rng, shape);
        let r = random_image(&mut rng, shape);
        let mu = 10f64.powf(rng.random_range(-2.0..1.0));
        let fast = prox_deblur_fft(&ProxProblem::new(&op, &b, &r, mu).unwrap()).unwrap();

        let a = dense_conv(&kernel, h, w);
        let m = a.transpose() * &a + DMatrix::identity(h * w, h * w) * mu;
        let rhs = a.transpose() * DVector::from_column_slice(b.data()) + DVector::from_column_slice(r.data()) * mu;
        let dense = m.lu().solve(&rhs).expect("nonsingular normal matrix");
        let diff: Vec<f64> = fast.data().iter().zip(dense.iter()).map(|(x, y)| x - y).collect();
        worst = worst.max(raw_norm(&diff) / dense.norm());
    }
    Outcome {
        passed: worst <= 1e-8,
        detail: format!("max rel err {worst:.2e} over 10 instances (tol 1e-8)"),
    }
}

fn sr_prox_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (h, w) = (16, 16);
    let shape = Shape::gray(h, w);
    let mut details = Vec::new();
    let mut worst_all: f64 = 0.0;
    for d in [2, 4] {
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let kernel = random_kernel(&mut rng, 9);
            let op = LinearOperator::blur_decimate(kernel.clone(), d, shape).unwrap();
            let b = random_image(&mut rng, op.output_shape());
            let r = random_image(&mut rng, shape);
            let mu = 10f64.powf(rng.random_range(-2.0..1.0));
            let fast = prox_sr_fft(&ProxProblem::new(&op, &b, &r, mu).unwrap(), d).unwrap();

            let a = dense_decimate(d, h, w) * dense_conv(&kernel, h, w);
            let cg = dense_cg(
                &a,
                &DVector::from_column_slice(b.data()),
                &DVector::from_column_slice(r.data()),
                mu,
                1e-10,
            );
            let diff: Vec<f64> = fast.data().iter().zip(cg.iter()).map(|(x, y)| x - y).collect();
            worst = worst.max(raw_norm(&diff) / cg.norm());
        }
        details.push(format!("d={d} {worst:.2e}"));
        worst_all = worst_all.max(worst);
    }
    Outcome {
        passed: worst_all <= 1e-6,
        detail: format!("max rel err {} vs CG at tol 1e-10 (tol 1e-6)", details.join(", ")),
    }
}

fn schedule_suite() -> Outcome {
    let schedule = NoiseSchedule::ddpm_default();
    let t_max = 1000;
    let mut prod = 1.0f64;
    let mut worst_prod: f64 = 0.0;
    for t in 1..=t_max {
        let beta = 1e-4 + (2e-2 - 1e-4) * (t - 1) as f64 / (t_max - 1) as f64;
        prod *= (1.0 - beta).sqrt();
        worst_prod = worst_prod.max((schedule.alpha_bar(t).sqrt() - prod).abs());
    }

    // Chain of single forward steps from a fixed z0 against the closed-form
    // marginal N(√ᾱ z0, 1 − ᾱ), and against samples of the marginal itself.
    let n = 10_000;
    let z0 = [0.7];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let checkpoints = [1usize, 10, 100, 1000];
    let mut chain: Vec<Vec<f64>> = vec![Vec::with_capacity(n); checkpoints.len()];
    for _ in 0..n {
        let mut z = z0.to_vec();
        let mut next_cp = 0;
        for t in 1..=t_max {
            z = forward_step(&z, schedule.beta(t), &[gauss(&mut rng)]).unwrap();
            if t == checkpoints[next_cp] {
                chain[next_cp].push(z[0]);
                next_cp += 1;
                if next_cp == checkpoints.len() {
                    break;
                }
            }
        }
    }
    let mut worst_z: f64 = 0.0;
    for (ci, &t) in checkpoints.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        let (mean, var) = (ab.sqrt() * z0[0], 1.0 - ab);
        let marginal: Vec<f64> = (0..n)
            .map(|_| forward_marginal(&z0, ab, &[gauss(&mut rng)]).unwrap()[0])
            .collect();
        for samples in [&chain[ci], &marginal] {
            let m = samples.iter().sum::<f64>() / n as f64;
            let v = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (var / n as f64).sqrt();
            let se_var = var * (2.0 / (n - 1) as f64).sqrt();
            worst_z = worst_z.max((m - mean).abs() / se_mean).max((v - var).abs() / se_var);
        }
    }
    Outcome {
        passed: worst_prod <= 1e-12 && worst_z <= 4.0,
        detail: format!(
            "max |√ᾱ_t − ∏√α_s| {worst_prod:.1e} (tol 1e-12); worst moment deviation {worst_z:.2} SE at t ∈ {checkpoints:?}, 1e4 samples (tol 4)"
        ),
    }
}

fn ddim_exactness_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let schedule = NoiseSchedule::ddpm_default();
    let s = 32;
    let mean = gauss_vec(&mut rng, s);
    let predictor = Predictor::analytic_gaussian(mean.clone(), 0.0).unwrap();
    let mut worst: f64 = 0.0;
    for p in [1, 10, 50] {
        for _ in 0..5 {
            let z: Vec<f64> = gauss_vec(&mut rng, s).iter().map(|x| 5.0 * x).collect();
            let v = LatentState::new(gauss_vec(&mut rng, 4), z).unwrap();
            let out = run_sp(&v, p, &predictor, &schedule).unwrap();
            for (a, m) in out.z().iter().zip(&mean) {
                worst = worst.max((a - m).abs());
            }
        }
    }
    Outcome {
        passed: worst <= 1e-10,
        detail: format!("max |z − m| {worst:.2e} for p ∈ {{1, 10, 50}} (tol 1e-10)"),
    }
}

fn vjp_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let schedule = NoiseSchedule::linear(50, 0.05, 0.5).unwrap();
    let shape = Shape::gray(8, 8);
    let codec = Codec::block_transform(shape, 4, 2).unwrap();
    let s = codec.latent_len();
    let net = ToyNet::new(s, s, s / codec.group_len(), &[16, 16], &schedule, 3).unwrap();
    let prior = LatentPrior::new(schedule, Predictor::ToyNet(net), codec).unwrap();
    let p = 3;
    let v = LatentState::new(gauss_vec(&mut rng, s), gauss_vec(&mut rng, s)).unwrap();
    let w = random_image(&mut rng, shape);
    let grad = prior.vjp(&v, &w, p).unwrap().concat();
    let h = 1e-5;
    let f = |flat: &[f64]| -> f64 {
        let out = prior.generate(&LatentState::from_concat(flat, s).unwrap(), p).unwrap();
        raw_dot(out.data(), w.data())
    };
    let base = v.concat();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dir = gauss_vec(&mut rng, base.len());
        let plus: Vec<f64> = base.iter().zip(&dir).map(|(x, d)| x + h * d).collect();
        let minus: Vec<f64> = base.iter().zip(&dir).map(|(x, d)| x - h * d).collect();
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let an = raw_dot(&grad, &dir);
        worst = worst.max((fd - an).abs() / an.abs());
    }
    Outcome {
        passed: worst <= 1e-4,
        detail: format!("max rel err {worst:.2e} over 20 directions, s₁ = s₂ = {s}, p = {p} (tol 1e-4)"),
    }
}

fn training_suite() -> Outcome {
    let schedule = NoiseSchedule::linear(50, 0.05, 0.5).unwrap();
    let s = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let data: Vec<TrainingPair> = (0..4000)
        .map(|_| TrainingPair {
            clean: gauss_vec(&mut rng, s),
            cond: Vec::new(),
        })
        .collect();
    let cfg = TrainConfig {
        steps: 4000,
        batch: 64,
        learning_rate: 3e-3,
        hidden: vec![32, 32],
        groups: 1,
        seed: 5,
        eval_samples: 256,
    };
    let (net, _) = train_toy_score(&data, &schedule, &cfg).unwrap();

    // Held-out latents never seen in training.
    let zeros = vec![0.0; s];
    let (mut mse_net, mut mse_bayes) = (0.0, 0.0);
    let n = 20_000;
    for _ in 0..n {
        let t = rng.random_range(1..=schedule.steps());
        let ab = schedule.alpha_bar(t);
        let z0 = gauss_vec(&mut rng, s);
        let eps = gauss_vec(&mut rng, s);
        let zt = forward_marginal(&z0, ab, &eps).unwrap();
        let from_net = net.predict(&[], &zt, t, &schedule);
        let bayes = analytic_eps(&zt, ab, &zeros, 1.0).unwrap();
        for i in 0..s {
            mse_net += (from_net[i] - eps[i]).powi(2);
            mse_bayes += (bayes[i] - eps[i]).powi(2);
        }
    }
    mse_net /= (n * s) as f64;
    mse_bayes /= (n * s) as f64;
    Outcome {
        passed: mse_net - mse_bayes <= 0.05,
        detail: format!("held-out MSE toy {mse_net:.4} vs Bayes {mse_bayes:.4} (gap tol 0.05)"),
    }
}

fn toy_deblur_config(size: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_task(Task::Deblur);
    cfg.sigma_a = 1.0;
    cfg.sigma_eta = 25.0;
    cfg.io.phantom_height = size;
    cfg.io.phantom_width = size;
    cfg
}

fn end_to_end_suite() -> Outcome {
    let cfg = toy_deblur_config(64);
    let (net, _) = experiment::train_prior(&cfg, Shape::gray(64, 64)).unwrap();
    let codec = Codec::new(cfg.prior.codec_kind(), Shape::gray(64, 64)).unwrap();
    let prior = LatentPrior::new(cfg.prior.schedule.build().unwrap(), Predictor::ToyNet(net), codec).unwrap();
    let deg = experiment::degrade_image(&cfg, &experiment::clean_input(&cfg).unwrap()).unwrap();
    let solver = SolverConfig {
        seed: experiment::latent_seed(cfg.seed),
        ..SolverConfig::default()
    };
    assert_eq!(
        (solver.p, solver.mu0, solver.gamma, solver.eta, solver.k_max),
        (10, 1.0, 1.01, 1e-3, 100)
    );
    let start = Instant::now();
    let a = reld_solve(&deg.observation, &deg.operator, &prior, &solver).unwrap();
    let solve_time = start.elapsed();
    let b = reld_solve(&deg.observation, &deg.operator, &prior, &solver).unwrap();
    let deterministic = a.image == b.image;
    let psnr_b = psnr(&deg.ground_truth, &deg.observation).unwrap();
    let psnr_x = psnr(&deg.ground_truth, &a.image).unwrap();
    Outcome {
        passed: psnr_x >= psnr_b + 1.0 && deterministic && solve_time < Duration::from_secs(120),
        detail: format!(
            "PSNR(b) {psnr_b:.2} dB, PSNR(x*) {psnr_x:.2} dB, gain {:.2} dB (need ≥ 1), deterministic {deterministic}, solve {:.1}s",
            psnr_x - psnr_b,
            solve_time.as_secs_f64()
        ),
    }
}

fn ablation_suite() -> Outcome {
    let size = 32;
    let cfg = toy_deblur_config(size);
    let shape = Shape::gray(size, size);
    let (net, _) = experiment::train_prior(&cfg, shape).unwrap();
    let codec = Codec::new(cfg.prior.codec_kind(), shape).unwrap();
    let prior = LatentPrior::new(cfg.prior.schedule.build().unwrap(), Predictor::ToyNet(net), codec).unwrap();
    let deg = experiment::degrade_image(&cfg, &experiment::clean_input(&cfg).unwrap()).unwrap();
    let base = SolverConfig {
        seed: experiment::latent_seed(cfg.seed),
        ..SolverConfig::default()
    };
    let run = |axes: Vec<experiment::SweepAxis>| {
        let names: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
        let points = experiment::grid_points(&axes).unwrap();
        let rows = experiment::run_sweep(
            &deg.observation,
            Some(&deg.ground_truth),
            &deg.operator,
            &prior,
            &base,
            &names,
            &points,
            4,
        )
        .unwrap();
        let mut buf = Vec::new();
        experiment::write_sweep_csv(&mut buf, &names, &rows, true).unwrap();
        (names, String::from_utf8(buf).unwrap())
    };
    let axis = |name: &str, values: Option<Vec<f64>>, linspace: Option<(f64, f64, usize)>| experiment::SweepAxis {
        name: name.into(),
        values,
        linspace,
    };

    let parse = |text: &str| -> (Vec<String>, Vec<Vec<String>>) {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().unwrap().iter().map(String::from).collect();
        let rows = reader
            .records()
            .map(|r| r.unwrap().iter().map(String::from).collect())
            .collect();
        (header, rows)
    };

    let (_, mu_csv) = run(vec![
        axis("mu0", None, Some((0.05, 2.0, 40))),
        axis("gamma", Some(vec![1.0, 1.01, 1.05]), None),
    ]);
    let (mu_header, mu_rows) = parse(&mu_csv);
    let psnr_col = mu_header.iter().position(|h| h == "psnr").unwrap();
    let status_col = mu_header.iter().position(|h| h == "status").unwrap();
    let mu_ok = mu_header == ["mu0", "gamma", "psnr", "final_L", "runtime_s", "status"]
        && mu_rows.len() == 120
        && mu_rows.iter().all(|r| r.len() == mu_header.len())
        && mu_rows.iter().all(|r| r[status_col] == "ok" && r[psnr_col].parse::<f64>().is_ok());

    let p_values: Vec<f64> = [1, 5, 10, 15, 20, 30, 40, 50].iter().map(|&p| p as f64).collect();
    let (_, p_csv) = run(vec![axis("p", Some(p_values.clone()), None)]);
    let (p_header, p_rows) = parse(&p_csv);
    let psnrs: Vec<f64> = p_rows
        .iter()
        .filter_map(|r| r[1].parse::<f64>().ok())
        .filter(|v| *v > 0.0)
        .collect();
    let spread = psnrs.iter().cloned().fold(f64::MIN, f64::max) - psnrs.iter().cloned().fold(f64::MAX, f64::min);
    let failed_p: Vec<&str> = p_rows
        .iter()
        .filter(|r| r[p_header.len() - 1] != "ok")
        .map(|r| r[0].as_str())
        .collect();
    let p_ok = p_header == ["p", "psnr", "final_L", "runtime_s", "status"]
        && p_rows.len() == p_values.len()
        && psnrs.len() >= 2
        && spread > 0.0;
    let p_summary: Vec<String> = p_rows.iter().map(|r| format!("{}:{}", r[0], &r[1][..r[1].len().min(5)])).collect();
    Outcome {
        passed: mu_ok && p_ok,
        detail: format!(
            "μ₀×γ grid {} rows well-formed {mu_ok}; p grid {} rows, PSNR spread over {} usable rows {spread:.2} dB [{}], failed at p = {failed_p:?}",
            mu_rows.len(),
            p_rows.len(),
            psnrs.len(),
            p_summary.join(" ")
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("operator adjoint dot tests", adjoint_suite),
        ("FFT deblur prox vs dense normal equations", deblur_prox_suite),
        ("SR prox vs CG", sr_prox_suite),
        ("noise schedule consistency", schedule_suite),
        ("DDIM exactness with point-mass prior", ddim_exactness_suite),
        ("generative map VJP vs finite differences", vjp_suite),
        ("toy training vs Bayes predictor", training_suite),
        ("end-to-end deblurring smoke test", end_to_end_suite),
        ("ablation sweeps", ablation_suite),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        if !outcome.passed {
            failures += 1;
        }
        println!(
            "{verdict} {name}: {} [{:.1}s]",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
