//! A small fully-connected noise predictor and its trainer.
//!
//! The network maps `[a_g, z_g, t/T]` to a noise estimate for `z_g`, where
//! the latent is split into `groups` contiguous, equally sized groups and
//! the conditioning is split the same way. The same weights are applied to
//! every group, so a net trained on block-transform latents acts like a
//! per-tile denoiser. With `groups == 1` it is an ordinary dense network on
//! the whole `[a, z, t/T]`.
//!
//! Hidden layers use `tanh`; the output layer is linear.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};

const MAGIC: &str = "reld-toynet 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    cond_len: usize,
    latent_len: usize,
    groups: usize,
    layers: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
    schedule_fingerprint: String,
}

/// Per-layer activations of one forward pass, input first.
struct Activations(Vec<Vec<f64>>);

impl ToyNet {
    /// Randomly initialized network (weights `N(0, 1/fan_in)`, zero biases).
    pub fn new(
        cond_len: usize,
        latent_len: usize,
        groups: usize,
        hidden: &[usize],
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        if groups == 0 || latent_len == 0 || latent_len % groups != 0 || cond_len % groups != 0 {
            return Err(Error::param(format!(
                "cannot split conditioning {cond_len} and latent {latent_len} into {groups} groups"
            )));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::param("toy network needs at least one non-empty hidden layer"));
        }
        let mut layers = vec![(cond_len + latent_len) / groups + 1];
        layers.extend_from_slice(hidden);
        layers.push(latent_len / groups);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(&layers));
        for pair in layers.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (1.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let n: f64 = StandardNormal.sample(&mut rng);
                params.push(std * n);
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(ToyNet {
            cond_len,
            latent_len,
            groups,
            layers,
            params,
            seed,
            schedule_fingerprint: schedule.fingerprint(),
        })
    }

    pub fn cond_len(&self) -> usize {
        self.cond_len
    }

    pub fn latent_len(&self) -> usize {
        self.latent_len
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn schedule_fingerprint(&self) -> &str {
        &self.schedule_fingerprint
    }

    pub fn check_schedule(&self, schedule: &NoiseSchedule) -> Result<()> {
        if schedule.fingerprint() != self.schedule_fingerprint {
            return Err(Error::param(format!(
                "network was trained with schedule {}, got {}",
                self.schedule_fingerprint,
                schedule.fingerprint()
            )));
        }
        Ok(())
    }

    fn cond_group(&self) -> usize {
        self.cond_len / self.groups
    }

    fn latent_group(&self) -> usize {
        self.latent_len / self.groups
    }

    fn group_input(&self, cond: &[f64], z: &[f64], g: usize, time: f64, out: &mut Vec<f64>) {
        let (cg, zg) = (self.cond_group(), self.latent_group());
        out.clear();
        out.extend_from_slice(&cond[g * cg..(g + 1) * cg]);
        out.extend_from_slice(&z[g * zg..(g + 1) * zg]);
        out.push(time);
    }

    fn forward(&self, input: &[f64]) -> Activations {
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        let mut offset = 0;
        let last = self.layers.len() - 2;
        for (l, pair) in self.layers.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let x = acts.last().expect("input pushed");
            let y: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    let pre = bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                    if l == last {
                        pre
                    } else {
                        pre.tanh()
                    }
                })
                .collect();
            acts.push(y);
        }
        Activations(acts)
    }

    /// Backpropagates `g_out` through a recorded pass. Accumulates parameter
    /// gradients into `param_grad` when given and returns the input gradient.
    fn backward(&self, acts: &Activations, g_out: &[f64], mut param_grad: Option<&mut [f64]>) -> Vec<f64> {
        let n_layers = self.layers.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for pair in self.layers.windows(2) {
            offsets.push(offset);
            offset += (pair[0] + 1) * pair[1];
        }
        let mut g = g_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            if l != n_layers - 1 {
                // tanh' = 1 − y²
                for (gi, y) in g.iter_mut().zip(&acts.0[l + 1]) {
                    *gi *= 1.0 - y * y;
                }
            }
            let base = offsets[l];
            let x = &acts.0[l];
            if let Some(pg) = param_grad.as_deref_mut() {
                for o in 0..fan_out {
                    let row = &mut pg[base + o * fan_in..base + (o + 1) * fan_in];
                    for (w, v) in row.iter_mut().zip(x) {
                        *w += g[o] * v;
                    }
                    pg[base + fan_in * fan_out + o] += g[o];
                }
            }
            let weights = &self.params[base..base + fan_in * fan_out];
            let mut g_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                for (gi, w) in g_in.iter_mut().zip(row) {
                    *gi += g[o] * w;
                }
            }
            g = g_in;
        }
        g
    }

    fn time_feature(t: usize, schedule: &NoiseSchedule) -> f64 {
        t as f64 / schedule.steps() as f64
    }

    fn check_lengths(&self, cond: &[f64], z: &[f64]) {
        assert_eq!(cond.len(), self.cond_len, "conditioning length");
        assert_eq!(z.len(), self.latent_len, "latent length");
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "cond_len {}", self.cond_len);
        let _ = writeln!(out, "latent_len {}", self.latent_len);
        let _ = writeln!(out, "groups {}", self.groups);
        let sizes: Vec<String> = self.layers.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "layers {}", sizes.join(" "));
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "schedule {}", self.schedule_fingerprint);
        let _ = writeln!(out, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(out, "{p:e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(Error::param("not a toy network parameter file"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::param(format!("missing header field {name}")))?;
            line.strip_prefix(name)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| Error::param(format!("expected header field {name}, got {line:?}")))
        };
        let parse_usize = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| Error::param(format!("{what}: {e}")))
        };
        let cond_len = parse_usize(&field("cond_len")?, "cond_len")?;
        let latent_len = parse_usize(&field("latent_len")?, "latent_len")?;
        let groups = parse_usize(&field("groups")?, "groups")?;
        let layers: Vec<usize> = field("layers")?
            .split_whitespace()
            .map(|s| parse_usize(s, "layers"))
            .collect::<Result<_>>()?;
        let seed: u64 = field("seed")?
            .parse()
            .map_err(|e| Error::param(format!("seed: {e}")))?;
        let schedule_fingerprint = field("schedule")?;
        let count = parse_usize(&field("params")?, "params")?;
        let params: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::param(format!("parameter value: {e}")))
            })
            .collect::<Result<_>>()?;

        if groups == 0 || latent_len % groups != 0 || cond_len % groups != 0 {
            return Err(Error::param("inconsistent group count"));
        }
        if layers.len() < 3
            || layers[0] != (cond_len + latent_len) / groups + 1
            || *layers.last().unwrap() != latent_len / groups
        {
            return Err(Error::param("layer sizes do not match the latent dimensions"));
        }
        if params.len() != count || count != param_count(&layers) {
            return Err(Error::param(format!(
                "expected {} parameters, header says {count}, found {}",
                param_count(&layers),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("non-finite parameter"));
        }
        Ok(ToyNet {
            cond_len,
            latent_len,
            groups,
            layers,
            params,
            seed,
            schedule_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ToyNet::from_text(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|p| (p[0] + 1) * p[1]).sum()
}

impl NoisePredictor for ToyNet {
    fn predict(&self, cond: &[f64], z: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
        self.check_lengths(cond, z);
        let time = ToyNet::time_feature(t, schedule);
        let mut out = Vec::with_capacity(self.latent_len);
        let mut input = Vec::with_capacity(self.layers[0]);
        for g in 0..self.groups {
            self.group_input(cond, z, g, time, &mut input);
            let acts = self.forward(&input);
            out.extend_from_slice(acts.0.last().expect("output layer"));
        }
        out
    }

    fn vjp(
        &self,
        cond: &[f64],
        z: &[f64],
        t: usize,
        schedule: &NoiseSchedule,
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_lengths(cond, z);
        if upstream.len() != self.latent_len {
            return Err(Error::shape("upstream gradient length"));
        }
        let time = ToyNet::time_feature(t, schedule);
        let (cg, zg) = (self.cond_group(), self.latent_group());
        let mut g_cond = vec![0.0; self.cond_len];
        let mut g_z = vec![0.0; self.latent_len];
        let mut input = Vec::with_capacity(self.layers[0]);
        for g in 0..self.groups {
            self.group_input(cond, z, g, time, &mut input);
            let acts = self.forward(&input);
            let g_in = self.backward(&acts, &upstream[g * zg..(g + 1) * zg], None);
            g_cond[g * cg..(g + 1) * cg].copy_from_slice(&g_in[..cg]);
            g_z[g * zg..(g + 1) * zg].copy_from_slice(&g_in[cg..cg + zg]);
        }
        Ok((g_cond, g_z))
    }
}

/// One `(clean latent, conditioning)` training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub clean: Vec<f64>,
    pub cond: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub groups: usize,
    pub seed: u64,
    /// Size of the fixed held-out batch used for the before/after loss.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 64,
            learning_rate: 1e-3,
            hidden: vec![32, 32],
            groups: 1,
            seed: 0,
            eval_samples: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-coordinate squared error of every minibatch, in order.
    pub loss_trace: Vec<f64>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

struct Sample {
    input: Vec<f64>,
    target: Vec<f64>,
}

/// Draws `(t, ε)`, builds `z_t = √ᾱ_t z0 + √(1−ᾱ_t) ε` and returns the
/// network input for one randomly chosen group with `ε` as the target.
fn draw_sample(
    net: &ToyNet,
    data: &[TrainingPair],
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Sample {
    let pair = &data[rng.random_range(0..data.len())];
    let g = rng.random_range(0..net.groups);
    let t = rng.random_range(1..=schedule.steps());
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (cg, zg) = (net.cond_group(), net.latent_group());
    let mut input = Vec::with_capacity(net.layers[0]);
    input.extend_from_slice(&pair.cond[g * cg..(g + 1) * cg]);
    let mut target = Vec::with_capacity(zg);
    for z0 in &pair.clean[g * zg..(g + 1) * zg] {
        let e: f64 = StandardNormal.sample(rng);
        target.push(e);
        input.push(sa * z0 + sn * e);
    }
    input.push(ToyNet::time_feature(t, schedule));
    Sample { input, target }
}

fn mean_loss(net: &ToyNet, samples: &[Sample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let acts = net.forward(&s.input);
            let out = acts.0.last().expect("output layer");
            out.iter().zip(&s.target).map(|(o, e)| (o - e).powi(2)).sum::<f64>()
        })
        .sum();
    total / (samples.len() * net.latent_group()) as f64
}

/// Fits a [`ToyNet`] to the noise-prediction loss `E‖ε − ε̂([a, z_t], t)‖²`
/// with `t` uniform on `1..=T`, using Adam on minibatches. Single-threaded
/// and fully determined by `config.seed`.
pub fn train_toy_score(
    dataset: &[TrainingPair],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(ToyNet, TrainReport)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::param("training set is empty"))?;
    if config.steps == 0 || config.batch == 0 {
        return Err(Error::param("training needs steps >= 1 and batch >= 1"));
    }
    let (cond_len, latent_len) = (first.cond.len(), first.clean.len());
    if dataset
        .iter()
        .any(|p| p.cond.len() != cond_len || p.clean.len() != latent_len)
    {
        return Err(Error::shape("training pairs have inconsistent lengths"));
    }
    let mut net = ToyNet::new(
        cond_len,
        latent_len,
        config.groups,
        &config.hidden,
        schedule,
        config.seed,
    )?;

    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_E7A1);
    let eval: Vec<Sample> = (0..config.eval_samples.max(1))
        .map(|_| draw_sample(&net, dataset, schedule, &mut eval_rng))
        .collect();
    let initial_eval_loss = mean_loss(&net, &eval);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let n = net.params.len();
    let (beta1, beta2, adam_eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut loss_trace = Vec::with_capacity(config.steps);
    let norm = 1.0 / (config.batch * net.latent_group()) as f64;

    for step in 1..=config.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..config.batch {
            let s = draw_sample(&net, dataset, schedule, &mut rng);
            let acts = net.forward(&s.input);
            let out = acts.0.last().expect("output layer");
            let g_out: Vec<f64> = out
                .iter()
                .zip(&s.target)
                .map(|(o, e)| {
                    loss += (o - e) * (o - e);
                    2.0 * (o - e) * norm
                })
                .collect();
            net.backward(&acts, &g_out, Some(&mut grad));
        }
        loss *= norm;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("loss became {loss}"),
            });
        }
        loss_trace.push(loss);

        let bc1 = 1.0 - decay_pow(beta1, step);
        let bc2 = 1.0 - decay_pow(beta2, step);
        for i in 0..n {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            net.params[i] -= config.learning_rate * mh / (vh.sqrt() + adam_eps);
        }
    }

    let final_eval_loss = mean_loss(&net, &eval);
    if !final_eval_loss.is_finite() {
        return Err(Error::Training {
            step: config.steps,
            message: "held-out loss is not finite".into(),
        });
    }
    Ok((
        net,
        TrainReport {
            loss_trace,
            initial_eval_loss,
            final_eval_loss,
        },
    ))
}

fn decay_pow(beta: f64, step: usize) -> f64 {
    beta.powi(step.min(i32::MAX as usize) as i32)
}
