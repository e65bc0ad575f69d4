//! Config-driven pipeline behind the command-line tool: degrade a clean
//! image, train the toy prior, restore, and sweep solver parameters.
//!
//! Seeds: the observation noise uses the config seed directly, the initial
//! diffusion latent uses [`latent_seed`] of it, and training phantoms are
//! drawn from a third stream, so the three never share random numbers.

pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{awgn_corrupt, psnr, Image, Shape};
use crate::io;
use crate::linop::{default_psf_size, gaussian_psf, LinearOperator};
use crate::phantom::piecewise_smooth;
use crate::prior::{
    train_toy_score, Codec, LatentPrior, Predictor, ToyNet, TrainConfig, TrainReport, TrainingPair,
};
use crate::solver::{reld_solve, SolverConfig};

pub use config::{ExperimentConfig, SweepAxis, Task};

pub const OBSERVATION_FILE: &str = "degraded.png";
pub const METADATA_FILE: &str = "degraded.toml";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.png";
pub const RESTORED_FILE: &str = "restored.png";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MODEL_FILE: &str = "toynet.txt";
pub const LOSS_FILE: &str = "train_loss.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

const LATENT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;
const TRAIN_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

/// Seed of the initial diffusion latent for experiment seed `seed`.
pub fn latent_seed(seed: u64) -> u64 {
    seed ^ LATENT_STREAM
}

/// What `degrade` records next to the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub task: Task,
    pub sigma_a: f64,
    /// 0-255 scale, as configured.
    pub sigma_eta: f64,
    /// `sigma_eta / 255`, the value actually used.
    pub noise_std: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psf_size: Option<usize>,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub observation: String,
    pub ground_truth: String,
}

impl Metadata {
    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.channels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// PSF size used for `sigma_a` on an image of the given shape.
pub fn resolved_psf_size(cfg: &ExperimentConfig, shape: Shape) -> Option<usize> {
    match cfg.task {
        Task::Denoise => None,
        Task::Sr if cfg.sigma_a == 0.0 => None,
        _ => Some(
            cfg.psf_size
                .unwrap_or_else(|| default_psf_size(cfg.sigma_a, shape.height.min(shape.width))),
        ),
    }
}

/// Degradation operator of the configured task on images of `shape`.
pub fn build_operator(cfg: &ExperimentConfig, shape: Shape) -> Result<LinearOperator> {
    let psf = resolved_psf_size(cfg, shape)
        .map(|size| gaussian_psf(cfg.sigma_a, size))
        .transpose()?;
    match (cfg.task, psf) {
        (Task::Denoise, _) => LinearOperator::identity(shape),
        (Task::Deblur, Some(k)) => LinearOperator::conv(k, shape),
        (Task::Sr, Some(k)) => LinearOperator::blur_decimate(k, sr_factor(cfg)?, shape),
        (Task::Sr, None) => LinearOperator::decimate(sr_factor(cfg)?, shape),
        (Task::Deblur, None) => Err(Error::Config("deblur needs sigma_a > 0".into())),
    }
}

fn sr_factor(cfg: &ExperimentConfig) -> Result<usize> {
    cfg.d.ok_or_else(|| Error::Config("task sr needs d".into()))
}

/// The configured clean image: the input file or a phantom seeded with the
/// experiment seed.
pub fn clean_input(cfg: &ExperimentConfig) -> Result<Image> {
    match &cfg.io.input {
        Some(path) => io::load(path),
        None => {
            let shape = Shape::new(cfg.io.phantom_height, cfg.io.phantom_width, cfg.io.phantom_channels);
            shape.validate().map_err(|e| Error::Config(e.to_string()))?;
            Ok(piecewise_smooth(shape, cfg.seed))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Degraded {
    /// The clean image, cropped so super-resolution factors divide it.
    pub ground_truth: Image,
    pub observation: Image,
    pub operator: LinearOperator,
    pub metadata: Metadata,
}

/// `b = A x + η`. For super-resolution `x` is first cropped to the largest
/// size divisible by `d`.
pub fn degrade_image(cfg: &ExperimentConfig, x: &Image) -> Result<Degraded> {
    let x = match cfg.task {
        Task::Sr => {
            let d = sr_factor(cfg)?;
            let (h, w) = (x.height() / d * d, x.width() / d * d);
            if h == 0 || w == 0 {
                return Err(Error::shape(format!("image {} is smaller than d = {d}", x.shape())));
            }
            x.crop(h, w)?
        }
        _ => x.clone(),
    };
    let operator = build_operator(cfg, x.shape())?;
    let observation = awgn_corrupt(&operator.apply(&x)?, cfg.noise_std(), cfg.seed)?;
    let metadata = Metadata {
        task: cfg.task,
        sigma_a: cfg.sigma_a,
        sigma_eta: cfg.sigma_eta,
        noise_std: cfg.noise_std(),
        d: cfg.d,
        psf_size: resolved_psf_size(cfg, x.shape()),
        seed: cfg.seed,
        height: x.height(),
        width: x.width(),
        channels: x.channels(),
        observation: OBSERVATION_FILE.into(),
        ground_truth: GROUND_TRUTH_FILE.into(),
    };
    Ok(Degraded {
        ground_truth: x,
        observation,
        operator,
        metadata,
    })
}

#[derive(Debug, Clone)]
pub struct DegradeReport {
    pub observation: PathBuf,
    pub ground_truth: PathBuf,
    pub metadata: PathBuf,
    pub observation_shape: Shape,
}

pub fn cmd_degrade(cfg: &ExperimentConfig, out_dir: &Path) -> Result<DegradeReport> {
    let x = clean_input(cfg)?;
    let deg = degrade_image(cfg, &x)?;
    create_dir(out_dir)?;
    let report = DegradeReport {
        observation: out_dir.join(OBSERVATION_FILE),
        ground_truth: out_dir.join(GROUND_TRUTH_FILE),
        metadata: out_dir.join(METADATA_FILE),
        observation_shape: deg.observation.shape(),
    };
    io::save(&deg.observation, &report.observation, cfg.io.bit_depth)?;
    io::save(&deg.ground_truth, &report.ground_truth, cfg.io.bit_depth)?;
    deg.metadata.save(&report.metadata)?;
    Ok(report)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Seeded phantom training set for the toy prior: clean latents
/// `encode(x)` conditioned on `encode(x + σ n)` with `σ ~ U[0, sigma_max]`.
pub fn phantom_training_set(
    codec: &Codec,
    images: usize,
    pairs_per_image: usize,
    sigma_max: f64,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRAIN_STREAM);
    let shape = codec.image_shape();
    let mut out = Vec::with_capacity(images * pairs_per_image);
    for _ in 0..images {
        let x = piecewise_smooth(shape, rng.random());
        let clean = codec.encode(&x)?;
        for _ in 0..pairs_per_image {
            let sigma = if sigma_max > 0.0 {
                rng.random_range(0.0..=sigma_max)
            } else {
                0.0
            };
            let noisy = awgn_corrupt(&x, sigma, rng.random())?;
            out.push(TrainingPair {
                clean: clean.clone(),
                cond: codec.encode(&noisy)?,
            });
        }
    }
    Ok(out)
}

/// Trains the toy prior for images of `shape` as configured.
pub fn train_prior(cfg: &ExperimentConfig, shape: Shape) -> Result<(ToyNet, TrainReport)> {
    let codec = Codec::new(cfg.prior.codec_kind(), shape)?;
    let schedule = cfg.prior.schedule.build()?;
    let t = &cfg.train;
    let data = phantom_training_set(&codec, t.images, t.pairs_per_image, t.sigma_max, cfg.seed)?;
    let train = TrainConfig {
        steps: t.steps,
        batch: t.batch,
        learning_rate: t.learning_rate,
        hidden: t.hidden.clone(),
        groups: codec.latent_len() / codec.group_len(),
        seed: cfg.seed,
        eval_samples: TrainConfig::default().eval_samples,
    };
    train_toy_score(&data, &schedule, &train)
}

/// Prior for images of `shape`; `model` is read when the predictor is the
/// toy network.
pub fn build_prior(cfg: &ExperimentConfig, shape: Shape, model: &Path) -> Result<LatentPrior> {
    let codec = Codec::new(cfg.prior.codec_kind(), shape)?;
    let schedule = cfg.prior.schedule.build()?;
    let predictor = match cfg.prior.predictor {
        config::PredictorChoice::Zero => Predictor::Zero,
        config::PredictorChoice::Gaussian => {
            Predictor::analytic_gaussian(vec![0.0; codec.latent_len()], cfg.prior.tau)?
        }
        config::PredictorChoice::Toynet => Predictor::ToyNet(ToyNet::load(model)?),
    };
    LatentPrior::new(schedule, predictor, codec)
}

fn model_path(cfg: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    cfg.prior.model.clone().unwrap_or_else(|| out_dir.join(MODEL_FILE))
}

#[derive(Debug, Clone)]
pub struct TrainToyReport {
    pub model: PathBuf,
    pub loss_trace: PathBuf,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

pub fn cmd_train_toy(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainToyReport> {
    let shape = match &cfg.io.input {
        Some(path) => io::load(path)?.shape(),
        None => Shape::new(cfg.io.phantom_height, cfg.io.phantom_width, cfg.io.phantom_channels),
    };
    let (net, report) = train_prior(cfg, shape)?;
    create_dir(out_dir)?;
    let model = model_path(cfg, out_dir);
    net.save(&model)?;
    let loss_trace = out_dir.join(LOSS_FILE);
    let mut text = String::from("step,loss\n");
    for (i, l) in report.loss_trace.iter().enumerate() {
        text.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(&loss_trace, text).map_err(|e| Error::io(&loss_trace, e))?;
    Ok(TrainToyReport {
        model,
        loss_trace,
        initial_eval_loss: report.initial_eval_loss,
        final_eval_loss: report.final_eval_loss,
    })
}

/// Refuses to restore when the configured operator differs from the one
/// recorded at degradation time.
pub fn check_metadata(cfg: &ExperimentConfig, meta: &Metadata) -> Result<()> {
    let mut diffs = Vec::new();
    if cfg.task != meta.task {
        diffs.push(format!("task {} vs {}", cfg.task, meta.task));
    }
    if cfg.task != Task::Denoise && cfg.sigma_a != meta.sigma_a {
        diffs.push(format!("sigma_a {} vs {}", cfg.sigma_a, meta.sigma_a));
    }
    if cfg.d != meta.d {
        diffs.push(format!("d {:?} vs {:?}", cfg.d, meta.d));
    }
    let psf = resolved_psf_size(cfg, meta.shape());
    if psf != meta.psf_size {
        diffs.push(format!("psf_size {psf:?} vs {:?}", meta.psf_size));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "config does not match the degradation metadata, refusing to restore: {} (config vs metadata)",
            diffs.join(", ")
        )))
    }
}

#[derive(Debug, Clone)]
pub struct RestoreReport {
    pub restored: PathBuf,
    pub trace: PathBuf,
    pub summary: PathBuf,
    pub iterations: usize,
    /// PSNR of the restoration against the ground truth, when available.
    pub psnr: Option<f64>,
    /// PSNR of the observation itself, when it lives on the same grid.
    pub observation_psnr: Option<f64>,
    pub summary_line: String,
}

pub fn cmd_restore(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RestoreReport> {
    let obs_path = cfg
        .io
        .observation
        .clone()
        .unwrap_or_else(|| out_dir.join(OBSERVATION_FILE));
    let meta_path = obs_path.with_extension("toml");
    let meta = Metadata::load(&meta_path)?;
    check_metadata(cfg, &meta)?;
    let b = io::load(&obs_path)?;
    let op = build_operator(cfg, meta.shape())?;
    if b.shape() != op.output_shape() {
        return Err(Error::format(
            &obs_path,
            format!("observation is {}, metadata implies {}", b.shape(), op.output_shape()),
        ));
    }
    let prior = build_prior(cfg, meta.shape(), &model_path(cfg, out_dir))?;
    let solver = SolverConfig {
        seed: latent_seed(cfg.seed),
        ..cfg.solver_config()
    };
    let sol = reld_solve(&b, &op, &prior, &solver)?;

    let gt_path = cfg.io.ground_truth.clone().or_else(|| {
        let p = obs_path.parent().unwrap_or(Path::new(".")).join(&meta.ground_truth);
        p.exists().then_some(p)
    });
    let gt = gt_path.as_deref().map(io::load).transpose()?;
    let psnr_out = gt.as_ref().map(|g| psnr(g, &sol.image)).transpose()?;
    let observation_psnr = match &gt {
        Some(g) if g.shape() == b.shape() => Some(psnr(g, &b)?),
        _ => None,
    };

    create_dir(out_dir)?;
    let restored = out_dir.join(RESTORED_FILE);
    let trace = out_dir.join(TRACE_FILE);
    let summary = out_dir.join(SUMMARY_FILE);
    io::save(&sol.image, &restored, cfg.io.bit_depth)?;
    sol.trace.save_csv(&trace)?;
    let mut line = format!("task={} iterations={}", cfg.task, sol.trace.len());
    if let Some(l) = sol.trace.records.last() {
        line.push_str(&format!(" final_L={}", l.objective));
    }
    if let Some(p) = observation_psnr {
        line.push_str(&format!(" psnr_observation={p:.4}"));
    }
    if let Some(p) = psnr_out {
        line.push_str(&format!(" psnr={p:.4}"));
    }
    std::fs::write(&summary, format!("{line}\n")).map_err(|e| Error::io(&summary, e))?;
    Ok(RestoreReport {
        restored,
        trace,
        summary,
        iterations: sol.trace.len(),
        psnr: psnr_out,
        observation_psnr,
        summary_line: line,
    })
}

/// Cartesian product of the axes, first axis outermost. Any empty axis, or
/// no axes at all, gives an empty grid.
pub fn grid_points(axes: &[SweepAxis]) -> Result<Vec<Vec<f64>>> {
    let values: Vec<Vec<f64>> = axes.iter().map(SweepAxis::points).collect::<Result<_>>()?;
    if values.is_empty() || values.iter().any(Vec::is_empty) {
        return Ok(Vec::new());
    }
    let mut points = vec![Vec::new()];
    for axis in &values {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    Ok(points)
}

fn as_count(name: &str, v: f64) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(Error::param(format!("{name} must be a non-negative integer, got {v}")))
    }
}

/// `base` with the named parameters replaced.
pub fn apply_overrides(base: &SolverConfig, names: &[String], values: &[f64]) -> Result<SolverConfig> {
    let mut cfg = base.clone();
    for (name, &v) in names.iter().zip(values) {
        match name.as_str() {
            "mu0" => cfg.mu0 = v,
            "gamma" => cfg.gamma = v,
            "eta" => cfg.eta = v,
            "p" => cfg.p = as_count(name, v)? as usize,
            "k_max" => cfg.k_max = as_count(name, v)? as usize,
            "seed" => cfg.seed = latent_seed(as_count(name, v)?),
            other => return Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub values: Vec<f64>,
    pub psnr: Option<f64>,
    pub final_objective: Option<f64>,
    pub runtime_s: f64,
    /// `ok`, or the error that stopped this point.
    pub status: String,
}

/// One solve per grid point on up to `workers` threads. Failed points are
/// reported in their row; rows come back in grid order.
pub fn run_sweep(
    b: &Image,
    ground_truth: Option<&Image>,
    op: &LinearOperator,
    prior: &LatentPrior,
    base: &SolverConfig,
    names: &[String],
    points: &[Vec<f64>],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    let run_point = |values: &Vec<f64>| {
        let start = Instant::now();
        let outcome = apply_overrides(base, names, values).and_then(|cfg| reld_solve(b, op, prior, &cfg));
        let runtime_s = start.elapsed().as_secs_f64();
        match outcome {
            Ok(sol) => {
                let psnr = ground_truth.map(|g| psnr(g, &sol.image)).transpose();
                match psnr {
                    Ok(psnr) => SweepRow {
                        values: values.clone(),
                        psnr,
                        final_objective: sol.trace.records.last().map(|r| r.objective),
                        runtime_s,
                        status: "ok".into(),
                    },
                    Err(e) => failed_row(values, runtime_s, &e),
                }
            }
            Err(e) => failed_row(values, runtime_s, &e),
        }
    };
    Ok(pool.install(|| points.par_iter().map(run_point).collect()))
}

fn failed_row(values: &[f64], runtime_s: f64, e: &Error) -> SweepRow {
    SweepRow {
        values: values.to_vec(),
        psnr: None,
        final_objective: None,
        runtime_s,
        status: format!("error: {e}"),
    }
}

pub fn write_sweep_csv<W: std::io::Write>(
    out: W,
    names: &[String],
    rows: &[SweepRow],
    with_runtime: bool,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.extend(["psnr", "final_L"]);
    if with_runtime {
        header.push("runtime_s");
    }
    header.push("status");
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        let mut rec: Vec<String> = row.values.iter().map(f64::to_string).collect();
        rec.push(opt(row.psnr));
        rec.push(opt(row.final_objective));
        if with_runtime {
            rec.push(format!("{:.3}", row.runtime_s));
        }
        rec.push(row.status.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub csv: PathBuf,
    pub rows: usize,
    pub failed: usize,
}

/// Degrades the configured input in memory and runs the configured grid.
pub fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<SweepReport> {
    let names: Vec<String> = cfg.sweep.axis.iter().map(|a| a.name.clone()).collect();
    let points = grid_points(&cfg.sweep.axis)?;
    let rows = if points.is_empty() {
        Vec::new()
    } else {
        let deg = degrade_image(cfg, &clean_input(cfg)?)?;
        let prior = build_prior(cfg, deg.ground_truth.shape(), &model_path(cfg, out_dir))?;
        let base = SolverConfig {
            seed: latent_seed(cfg.seed),
            ..cfg.solver_config()
        };
        run_sweep(
            &deg.observation,
            Some(&deg.ground_truth),
            &deg.operator,
            &prior,
            &base,
            &names,
            &points,
            workers,
        )?
    };
    create_dir(out_dir)?;
    let csv_path = out_dir.join(SWEEP_FILE);
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_sweep_csv(std::io::BufWriter::new(file), &names, &rows, cfg.sweep.runtime)
        .map_err(|e| Error::io(&csv_path, std::io::Error::other(e)))?;
    Ok(SweepReport {
        csv: csv_path,
        rows: rows.len(),
        failed: rows.iter().filter(|r| r.status != "ok").count(),
    })
}
