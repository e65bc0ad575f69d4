//! TOML experiment configuration. Unknown keys are rejected.
//!
//! ```toml
//! task = "deblur"          # denoise | deblur | sr
//! seed = 0
//! sigma_a = 1.0            # PSF standard deviation in pixels
//! sigma_eta = 25.0         # noise standard deviation on the 0-255 scale
//! # d = 2                  # decimation factor, sr only
//! # psf_size = 7           # default: smallest odd size >= 6 sigma_a + 1
//!
//! [solver]
//! p = 10
//! mu0 = 1.0
//! gamma = 1.01
//! eta = 0.001
//! k_max = 100
//! # rel_tol = 1e-4
//!
//! [prior]
//! codec = "block"          # block | identity
//! block = 4
//! keep = 2
//! predictor = "toynet"     # toynet | zero | gaussian
//! # model = "out/toynet.txt"
//!
//! [io]
//! # input = "photo.png"    # default: a synthetic phantom
//! phantom_height = 64
//! phantom_width = 64
//! bit_depth = 16
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::io::BitDepth;
use crate::prior::CodecKind;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Denoise,
    Deblur,
    Sr,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Denoise => "denoise",
            Task::Deblur => "deblur",
            Task::Sr => "sr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sigma_a")]
    pub sigma_a: f64,
    /// On the 0-255 scale.
    #[serde(default)]
    pub sigma_eta: f64,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub psf_size: Option<usize>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub io: IoSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_sigma_a() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub p: usize,
    pub mu0: f64,
    pub gamma: f64,
    pub eta: f64,
    pub k_max: usize,
    pub rel_tol: Option<f64>,
    pub inner_steps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            p: d.p,
            mu0: d.mu0,
            gamma: d.gamma,
            eta: d.eta,
            k_max: d.k_max,
            rel_tol: d.rel_tol,
            inner_steps: d.inner_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecChoice {
    Identity,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorChoice {
    Zero,
    Gaussian,
    Toynet,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub codec: CodecChoice,
    pub block: usize,
    pub keep: usize,
    pub predictor: PredictorChoice,
    /// Trained network; defaults to `toynet.txt` in the output directory.
    pub model: Option<PathBuf>,
    /// Spread of the zero-mean Gaussian predictor.
    pub tau: f64,
    pub schedule: ScheduleSection,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            codec: CodecChoice::Block,
            block: 4,
            keep: 2,
            predictor: PredictorChoice::Toynet,
            model: None,
            tau: 1.0,
            schedule: ScheduleSection::default(),
        }
    }
}

impl PriorSection {
    pub fn codec_kind(&self) -> CodecKind {
        match self.codec {
            CodecChoice::Identity => CodecKind::Identity,
            CodecChoice::Block => CodecKind::BlockTransform {
                block: self.block,
                keep: self.keep,
            },
        }
    }
}

/// Linear β schedule of the latent diffusion prior.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            steps: 50,
            beta_start: 0.05,
            beta_end: 0.5,
        }
    }
}

impl ScheduleSection {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Clean image to degrade. Without one a phantom is generated.
    pub input: Option<PathBuf>,
    pub phantom_height: usize,
    pub phantom_width: usize,
    pub phantom_channels: usize,
    /// Observation to restore; defaults to `degraded.png` in the output
    /// directory.
    pub observation: Option<PathBuf>,
    /// Reference for PSNR; defaults to the ground-truth copy written by
    /// `degrade` next to the observation, if present.
    pub ground_truth: Option<PathBuf>,
    #[serde(deserialize_with = "bit_depth")]
    pub bit_depth: BitDepth,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            input: None,
            phantom_height: 64,
            phantom_width: 64,
            phantom_channels: 1,
            observation: None,
            ground_truth: None,
            bit_depth: BitDepth::Sixteen,
        }
    }
}

fn bit_depth<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<BitDepth, D::Error> {
    let bits = u32::deserialize(d)?;
    BitDepth::from_bits(bits)
        .ok_or_else(|| serde::de::Error::custom(format!("bit_depth must be 8 or 16, got {bits}")))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Number of phantoms in the training set.
    pub images: usize,
    /// Noisy copies per phantom.
    pub pairs_per_image: usize,
    /// Conditioning noise levels are drawn from `U[0, sigma_max]`.
    pub sigma_max: f64,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            images: 100,
            pairs_per_image: 4,
            sigma_max: 0.25,
            steps: 3000,
            batch: 64,
            learning_rate: 3e-3,
            hidden: vec![32, 32],
        }
    }
}

/// One sweep axis: either explicit `values` or `linspace = [start, stop, n]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub linspace: Option<(f64, f64, usize)>,
}

pub const SWEEP_PARAMETERS: [&str; 6] = ["mu0", "gamma", "eta", "p", "k_max", "seed"];

impl SweepAxis {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !SWEEP_PARAMETERS.contains(&self.name.as_str()) {
            return Err(Error::Config(format!(
                "unknown sweep parameter {:?} (expected one of {})",
                self.name,
                SWEEP_PARAMETERS.join(", ")
            )));
        }
        match (&self.values, self.linspace) {
            (Some(v), None) => Ok(v.clone()),
            (None, Some((start, stop, n))) => Ok(match n {
                0 => Vec::new(),
                1 => vec![start],
                _ => (0..n)
                    .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
                    .collect(),
            }),
            _ => Err(Error::Config(format!(
                "sweep axis {:?} needs exactly one of `values` or `linspace`",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: Vec<SweepAxis>,
    /// Include wall-clock seconds per point. Turn off for byte-identical
    /// reruns.
    pub runtime: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: Vec::new(),
            runtime: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// A config with every default and the given task.
    pub fn with_task(task: Task) -> Self {
        ExperimentConfig {
            task,
            seed: 0,
            sigma_a: default_sigma_a(),
            sigma_eta: 0.0,
            d: (task == Task::Sr).then_some(2),
            psf_size: None,
            solver: SolverSection::default(),
            prior: PriorSection::default(),
            io: IoSection::default(),
            train: TrainSection::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match (self.task, self.d) {
            (Task::Sr, None) => return bad("task sr needs d".into()),
            (Task::Sr, Some(d)) if d < 2 => return bad(format!("sr needs d >= 2, got {d}")),
            (Task::Denoise | Task::Deblur, Some(_)) => {
                return bad(format!("d only applies to task sr, not {}", self.task))
            }
            _ => {}
        }
        if self.task == Task::Deblur && !(self.sigma_a > 0.0) {
            return bad(format!("deblur needs sigma_a > 0, got {}", self.sigma_a));
        }
        if !(self.sigma_a >= 0.0 && self.sigma_a.is_finite()) {
            return bad(format!("sigma_a must be >= 0, got {}", self.sigma_a));
        }
        if !(self.sigma_eta >= 0.0 && self.sigma_eta.is_finite()) {
            return bad(format!("sigma_eta must be >= 0, got {}", self.sigma_eta));
        }
        if let Some(s) = self.psf_size {
            if s % 2 == 0 {
                return bad(format!("psf_size must be odd, got {s}"));
            }
        }
        let t = &self.train;
        if t.images == 0 || t.pairs_per_image == 0 || t.steps == 0 || t.batch == 0 {
            return bad("train.images, pairs_per_image, steps and batch must be >= 1".into());
        }
        if !(t.sigma_max >= 0.0) {
            return bad("train.sigma_max must be >= 0".into());
        }
        self.solver_config()
            .validate(self.prior.schedule.steps)
            .map_err(|e| Error::Config(e.to_string()))?;
        for axis in &self.sweep.axis {
            axis.points()?;
        }
        Ok(())
    }

    /// Noise standard deviation on the `[0, 1]` pixel scale.
    pub fn noise_std(&self) -> f64 {
        self.sigma_eta / 255.0
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            p: s.p,
            mu0: s.mu0,
            gamma: s.gamma,
            eta: s.eta,
            k_max: s.k_max,
            rel_tol: s.rel_tol,
            inner_steps: s.inner_steps,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("task = \"deblur\"").unwrap();
        assert_eq!(cfg.solver_config(), SolverConfig::default());
        assert_eq!(cfg.prior.schedule.steps, 50);
        assert_eq!(cfg.io.bit_depth, BitDepth::Sixteen);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            task = "sr"
            seed = 3
            sigma_a = 1.0
            sigma_eta = 5
            d = 4
            [solver]
            p = 5
            rel_tol = 1e-4
            [prior]
            codec = "identity"
            predictor = "zero"
            schedule.steps = 20
            [io]
            bit_depth = 8
            [[sweep.axis]]
            name = "mu0"
            linspace = [0.05, 2.0, 40]
            [[sweep.axis]]
            name = "gamma"
            values = [1.0, 1.01, 1.05]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.d, Some(4));
        assert_eq!(cfg.solver.rel_tol, Some(1e-4));
        assert_eq!(cfg.prior.codec_kind(), CodecKind::Identity);
        let mu = cfg.sweep.axis[0].points().unwrap();
        assert_eq!(mu.len(), 40);
        assert_eq!(mu[0], 0.05);
        assert!((mu[39] - 2.0).abs() < 1e-15);
        assert!((cfg.noise_std() - 5.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "task = \"deblur\"\nsigma_A = 1.0",
            "task = \"deblur\"\n[solver]\nlearning = 1",
            "task = \"sr\"",
            "task = \"sr\"\nd = 1",
            "task = \"deblur\"\nd = 2",
            "task = \"deblur\"\nsigma_a = 0",
            "task = \"inpaint\"",
            "task = \"deblur\"\n[io]\nbit_depth = 12",
            "task = \"deblur\"\n[solver]\np = 60",
            "task = \"deblur\"\n[[sweep.axis]]\nname = \"lambda\"\nvalues = [1]",
            "task = \"deblur\"\n[[sweep.axis]]\nname = \"p\"",
        ] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}");
        }
    }
}
