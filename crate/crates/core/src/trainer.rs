//! Toy training harness: full precision against emulated W4A4G4 training,
//! with and without mean–residual splitting.
//!
//! Model: `h₀ = X`, `h_{k+1} = h_k + φ(h_k W_k)` (or `φ(h_k W_k)` without
//! residuals), `y = h_depth W_out`. Loss is mean squared error against a
//! fixed random teacher, optimized with plain SGD.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::decomposition::r_ratio;
use crate::error::{contract, Error, Result};
use crate::linalg::{gemm, gemm_nt, gemm_tn, Matrix};
use crate::mean_residual::{self, ForwardState, VanillaState};
use crate::quantizer::QuantConfig;
use crate::rng;

const TAG_INIT: u64 = 0x696e;
const TAG_TEACHER: u64 = 0x7465;
const TAG_DATA: u64 = 0x6461;
const TAG_QUANT: u64 = 0x7175;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fullprec,
    Fp4Vanilla,
    Fp4Averis,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Self::Fullprec, Self::Fp4Vanilla, Self::Fp4Averis];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fullprec => "fullprec",
            Self::Fp4Vanilla => "fp4_vanilla",
            Self::Fp4Averis => "fp4_averis",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (fullprec|fp4_vanilla|fp4_averis)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TeacherRegressionBiased,
    TeacherRegressionCentered,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Self::TeacherRegressionBiased => "teacher_regression_biased",
            Self::TeacherRegressionCentered => "teacher_regression_centered",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "teacher_regression_biased" | "biased" => Ok(Self::TeacherRegressionBiased),
            "teacher_regression_centered" | "centered" => Ok(Self::TeacherRegressionCentered),
            other => Err(format!("unknown task `{other}` (teacher_regression_biased|teacher_regression_centered)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub depth: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 128, depth: 4, output_dim: 16, activation: Activation::Relu, residual: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub task: Task,
    pub steps: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub seed: u64,
    pub quant: QuantConfig,
    /// Quantize the incoming gradient `D` at every backward GeMM. When off,
    /// only weights and activations are quantized.
    pub quantize_grads: bool,
    /// Per-coordinate `|μ_j|/σ` scale for the biased task: `μ_j ~ N(0, (ratio·σ)²)`.
    pub mean_ratio: f64,
    pub noise: f64,
    pub teacher_hidden: usize,
    /// Steps between per-layer `R` checkpoints (`0` disables).
    pub track_every: usize,
    /// Trailing steps averaged into `final_loss`.
    pub final_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Fullprec,
            task: Task::TeacherRegressionBiased,
            steps: 2000,
            batch: 8,
            seq_len: 64,
            lr: 0.005,
            seed: 0,
            quant: QuantConfig::default(),
            quantize_grads: true,
            mean_ratio: 4.0,
            noise: 0.25,
            teacher_hidden: 64,
            track_every: 250,
            final_window: 50,
        }
    }
}

impl TrainConfig {
    pub fn tokens(&self) -> usize {
        self.batch * self.seq_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(contract("steps must be ≥ 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(contract(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.tokens() == 0 || self.teacher_hidden == 0 || self.final_window == 0 {
            return Err(contract("batch, seq_len, teacher_hidden and final_window must be positive"));
        }
        if !(self.noise > 0.0) || !(self.mean_ratio >= 0.0) {
            return Err(contract("need noise > 0 and mean_ratio ≥ 0"));
        }
        self.quant.validate()
    }
}

/// Hidden blocks `W_k` (`H × H`) and a readout `W_out` (`H × out`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub layers: Vec<Matrix>,
    pub readout: Matrix,
}

impl ToyModel {
    /// He initialization, `N(0, 2/fan_in)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.output_dim == 0 {
            return Err(contract("hidden and output dims must be positive"));
        }
        let mut r = rng::stream(seed, TAG_INIT);
        let std = (2.0 / config.hidden as f64).sqrt();
        let layers = (0..config.depth).map(|_| Matrix::gaussian(config.hidden, config.hidden, std, &mut r)).collect();
        let readout = Matrix::gaussian(config.hidden, config.output_dim, (1.0 / config.hidden as f64).sqrt(), &mut r);
        Ok(Self { config, layers, readout })
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.config.hidden;
        if self.layers.len() != self.config.depth
            || self.layers.iter().any(|w| w.shape() != (h, h))
            || self.readout.shape() != (h, self.config.output_dim)
        {
            return Err(Error::DimensionMismatch { op: "ToyModel", detail: "layer shapes do not chain".into() });
        }
        Ok(())
    }

    /// Full-precision forward pass.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for w in &self.layers {
            h = self.block(&h, &gemm(&h, w)?)?;
        }
        gemm(&h, &self.readout)
    }

    fn block(&self, h: &Matrix, z: &Matrix) -> Result<Matrix> {
        let a = z.map(|v| self.config.activation.apply(v));
        if self.config.residual {
            h.add(&a)
        } else {
            Ok(a)
        }
    }
}

/// Fixed one-hidden-layer ReLU teacher with standardized outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Teacher {
    pub w1: Matrix,
    pub w2: Matrix,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl Teacher {
    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        let h = gemm(x, &self.w1)?.map(|v| v.max(0.0));
        let y = gemm(&h, &self.w2)?;
        Ok(Matrix::from_fn(y.rows(), y.cols(), |i, j| (y.get(i, j) - self.out_mean[j]) / self.out_std[j]))
    }
}

/// Deterministic stream of `(X, targets)` batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub task: Task,
    pub mean: Vec<f64>,
    pub noise: f64,
    pub tokens: usize,
    pub teacher: Teacher,
    seed: u64,
}

impl TaskData {
    pub fn batch(&self, step: usize) -> Result<(Matrix, Matrix)> {
        let mut r = rng::stream(self.seed, rng::mix(&[TAG_DATA, step as u64]));
        let x = self.inputs(&mut r);
        let t = self.teacher.eval(&x)?;
        Ok((x, t))
    }

    fn inputs(&self, r: &mut rng::Rng) -> Matrix {
        let mut x = Matrix::gaussian(self.tokens, self.mean.len(), self.noise, r);
        x.add_row_broadcast(&self.mean);
        x
    }
}

/// Inputs `X = 1μᵀ + σZ` (`μ = 0` for the centered task) and targets from
/// a fixed random teacher.
pub fn make_task(cfg: &TrainConfig, input_dim: usize, output_dim: usize) -> Result<TaskData> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, TAG_TEACHER);
    let mean: Vec<f64> = match cfg.task {
        Task::TeacherRegressionBiased => {
            Matrix::gaussian(1, input_dim, cfg.mean_ratio * cfg.noise, &mut r).into_data()
        }
        Task::TeacherRegressionCentered => vec![0.0; input_dim],
    };
    let w1 = Matrix::gaussian(input_dim, cfg.teacher_hidden, (1.0 / input_dim as f64).sqrt(), &mut r);
    let w2 = Matrix::gaussian(cfg.teacher_hidden, output_dim, (1.0 / cfg.teacher_hidden as f64).sqrt(), &mut r);
    let mut data = TaskData {
        task: cfg.task,
        mean,
        noise: cfg.noise,
        tokens: cfg.tokens(),
        teacher: Teacher { w1, w2, out_mean: vec![0.0; output_dim], out_std: vec![1.0; output_dim] },
        seed: cfg.seed,
    };
    // standardize teacher outputs on a reference sample
    let reference = Matrix::from_rows(
        &(0..4)
            .map(|_| data.inputs(&mut r).to_rows())
            .collect::<Vec<_>>()
            .concat(),
    )?;
    let raw = data.teacher.eval(&reference)?;
    let n = raw.rows() as f64;
    let mu = crate::linalg::column_mean(&raw);
    let sd: Vec<f64> = (0..output_dim)
        .map(|j| {
            let v = (0..raw.rows()).map(|i| (raw.get(i, j) - mu[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    data.teacher.out_mean = mu;
    data.teacher.out_std = sd;
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub step: usize,
    /// `R` at the input of each hidden block.
    pub r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub mode: Mode,
    pub task: Task,
    pub seed: u64,
    pub losses: Vec<f64>,
    pub layer_r: Vec<LayerCheckpoint>,
    /// Mean of the last `final_window` logged losses.
    pub final_loss: f64,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
    pub wall_time_secs: f64,
}

impl RunLog {
    /// `(step, loss)` rows for CSV output.
    pub fn loss_rows(&self) -> Vec<LossRow> {
        self.losses.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
}

enum Cache {
    Full { x: Matrix },
    Vanilla(VanillaState),
    Averis(ForwardState),
}

fn linear_forward(mode: Mode, x: &Matrix, w: &Matrix, q: &QuantConfig) -> Result<(Matrix, Cache)> {
    Ok(match mode {
        Mode::Fullprec => (gemm(x, w)?, Cache::Full { x: x.clone() }),
        Mode::Fp4Vanilla => {
            let s = mean_residual::forward_vanilla_state(x, w, q)?;
            (s.output.clone(), Cache::Vanilla(s))
        }
        Mode::Fp4Averis => {
            let s = mean_residual::forward_state(x, w, q)?;
            (s.output.clone(), Cache::Averis(s))
        }
    })
}

/// `(∂L/∂X, ∂L/∂W)` for the cached GeMM.
fn linear_backward(cache: &Cache, w: &Matrix, d: &Matrix, q: &QuantConfig) -> Result<(Matrix, Matrix)> {
    Ok(match cache {
        Cache::Full { x } => (gemm_nt(d, w)?, gemm_tn(x, d)?),
        Cache::Vanilla(s) => {
            let g = mean_residual::backward_vanilla_from(s, d, q)?;
            (g.grad_input, g.grad_weight)
        }
        Cache::Averis(s) => {
            let g = mean_residual::backward_from(s, d, q)?;
            (g.grad_input, g.grad_weight)
        }
    })
}

struct StepResult {
    loss: f64,
    grads: Vec<Matrix>,
    readout_grad: Matrix,
}

fn train_step(model: &ToyModel, x: &Matrix, t: &Matrix, mode: Mode, cfg: &TrainConfig, step: usize) -> Result<StepResult> {
    let act = model.config.activation;
    let qcfg = |layer: usize| cfg.quant.with_seed(rng::mix(&[cfg.seed, TAG_QUANT, step as u64, layer as u64]));

    let mut h = x.clone();
    let mut caches = Vec::with_capacity(model.layers.len());
    let mut pre = Vec::with_capacity(model.layers.len());
    for (k, w) in model.layers.iter().enumerate() {
        let (z, c) = linear_forward(mode, &h, w, &qcfg(k))?;
        h = model.block(&h, &z)?;
        caches.push(c);
        pre.push(z);
    }
    let ro = model.layers.len();
    let (y, ro_cache) = linear_forward(mode, &h, &model.readout, &qcfg(ro))?;

    let scale = 1.0 / (y.rows() * y.cols()) as f64;
    let diff = y.sub(t)?;
    let loss = diff.frobenius_sq() * scale;
    let d = diff.scale(2.0 * scale);

    let gcfg = |layer: usize| if cfg.quantize_grads { qcfg(layer) } else { QuantConfig::pass_through() };
    let (mut dh, readout_grad) = linear_backward(&ro_cache, &model.readout, &d, &gcfg(ro))?;
    let mut grads = vec![Matrix::zeros(0, 0); model.layers.len()];
    for k in (0..model.layers.len()).rev() {
        let dz = dh.zip_with(&pre[k], "train_step", |g, z| g * act.derivative(z))?;
        let (dx, dw) = linear_backward(&caches[k], &model.layers[k], &dz, &gcfg(k))?;
        dh = if model.config.residual { dh.add(&dx)? } else { dx };
        grads[k] = dw;
    }
    Ok(StepResult { loss, grads, readout_grad })
}

/// SGD on fresh batches. A non-finite loss stops the run and marks the log.
pub fn train(model: &ToyModel, cfg: &TrainConfig) -> Result<(ToyModel, RunLog)> {
    model.validate()?;
    cfg.validate()?;
    let task = make_task(cfg, model.config.hidden, model.config.output_dim)?;
    let probe = task.batch(usize::MAX)?.0;
    let start = Instant::now();
    let mut model = model.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut layer_r = Vec::new();
    let mut diverged_at = None;

    for step in 0..cfg.steps {
        if cfg.track_every > 0 && step % cfg.track_every == 0 {
            layer_r.push(LayerCheckpoint { step, r: track_layer_means(&model, &probe)? });
        }
        let (x, t) = task.batch(step)?;
        let res = match train_step(&model, &x, &t, cfg.mode, cfg, step) {
            Ok(r) if r.loss.is_finite() => r,
            Ok(_) | Err(Error::NonFinite { .. }) => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        };
        losses.push(res.loss);
        for (w, g) in model.layers.iter_mut().zip(&res.grads) {
            *w = w.sub(&g.scale(cfg.lr))?;
        }
        model.readout = model.readout.sub(&res.readout_grad.scale(cfg.lr))?;
    }
    if diverged_at.is_none() && cfg.track_every > 0 {
        layer_r.push(LayerCheckpoint { step: cfg.steps, r: track_layer_means(&model, &probe)? });
    }

    let final_loss = if diverged_at.is_some() || losses.is_empty() {
        f64::NAN
    } else {
        let w = cfg.final_window.min(losses.len());
        losses[losses.len() - w..].iter().sum::<f64>() / w as f64
    };
    let log = RunLog {
        mode: cfg.mode,
        task: cfg.task,
        seed: cfg.seed,
        losses,
        layer_r,
        final_loss,
        diverged: diverged_at.is_some(),
        diverged_at,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, log))
}

/// Runs every `(mode, seed)` pair concurrently from the same initial model
/// per seed. Results are ordered like the input.
pub fn train_many(model_cfg: &ModelConfig, base: &TrainConfig, modes: &[Mode], seeds: &[u64]) -> Result<Vec<RunLog>> {
    let jobs: Vec<(Mode, u64)> = seeds.iter().flat_map(|&s| modes.iter().map(move |&m| (m, s))).collect();
    jobs.par_iter()
        .map(|&(mode, seed)| {
            let model = ToyModel::new(model_cfg.clone(), seed)?;
            let cfg = TrainConfig { mode, seed, ..base.clone() };
            Ok(train(&model, &cfg)?.1)
        })
        .collect()
}

/// `R` at the input of every hidden block, in full precision.
pub fn track_layer_means(model: &ToyModel, batch: &Matrix) -> Result<Vec<f64>> {
    model.validate()?;
    if batch.cols() != model.config.hidden {
        return Err(Error::DimensionMismatch {
            op: "track_layer_means",
            detail: format!("batch has {} features, model expects {}", batch.cols(), model.config.hidden),
        });
    }
    let mut out = Vec::with_capacity(model.layers.len().max(1));
    let mut h = batch.clone();
    for w in &model.layers {
        out.push(r_ratio(&h));
        h = model.block(&h, &gemm(&h, w)?)?;
    }
    if out.is_empty() {
        out.push(r_ratio(&h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::column_mean;

    fn small() -> (ModelConfig, TrainConfig) {
        let m = ModelConfig { hidden: 16, depth: 2, output_dim: 4, ..Default::default() };
        let t = TrainConfig { steps: 30, batch: 2, seq_len: 16, track_every: 10, final_window: 5, ..Default::default() };
        (m, t)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mc, tc) = small();
        let model = ToyModel::new(ModelConfig { activation: Activation::Gelu, ..mc }, 1).unwrap();
        let task = make_task(&tc, 16, 4).unwrap();
        let (x, t) = task.batch(0).unwrap();
        let res = train_step(&model, &x, &t, Mode::Fullprec, &tc, 0).unwrap();
        let loss_at = |m: &ToyModel| {
            let y = m.predict(&x).unwrap();
            y.sub(&t).unwrap().frobenius_sq() / (y.rows() * y.cols()) as f64
        };
        let h = 1e-6;
        for (k, (i, j)) in [(0usize, (0usize, 3usize)), (1, (5, 7))] {
            let mut p = model.clone();
            let mut n = model.clone();
            let set = |m: &mut ToyModel, delta: f64| {
                let w = &m.layers[k];
                m.layers[k] = Matrix::from_fn(16, 16, |a, b| w.get(a, b) + if (a, b) == (i, j) { delta } else { 0.0 });
            };
            set(&mut p, h);
            set(&mut n, -h);
            let fd = (loss_at(&p) - loss_at(&n)) / (2.0 * h);
            let g = res.grads[k].get(i, j);
            assert!((fd - g).abs() < 1e-6 * (1.0 + g.abs()), "layer {k}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn pass_through_averis_tracks_fullprec() {
        let (mc, tc) = small();
        let model = ToyModel::new(mc, 3).unwrap();
        let full = train(&model, &TrainConfig { mode: Mode::Fullprec, ..tc.clone() }).unwrap().1;
        let ident = TrainConfig { mode: Mode::Fp4Averis, quant: QuantConfig::pass_through(), ..tc };
        let av = train(&model, &ident).unwrap().1;
        for (a, b) in full.losses.iter().zip(&av.losses) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let (_, tc) = small();
        let a = make_task(&tc, 16, 4).unwrap();
        let b = make_task(&tc, 16, 4).unwrap();
        assert_eq!(a.batch(7).unwrap(), b.batch(7).unwrap());
        assert_ne!(a.batch(7).unwrap().0, a.batch(8).unwrap().0);
    }

    #[test]
    fn centered_task_has_small_mean() {
        let (_, tc) = small();
        let tc = TrainConfig { task: Task::TeacherRegressionCentered, ..tc };
        let (x, _) = make_task(&tc, 16, 4).unwrap().batch(0).unwrap();
        let mu = column_mean(&x);
        let n = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        // σ√(m/l) = 1
        assert!(n < 2.0, "{n}");
    }

    #[test]
    fn divergence_is_logged() {
        let (mc, tc) = small();
        let model = ToyModel::new(mc, 0).unwrap();
        let (_, log) = train(&model, &TrainConfig { lr: 1e6, ..tc }).unwrap();
        assert!(log.diverged);
        assert!(log.final_loss.is_nan());
        assert!(log.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn depth_one_tracks_input() {
        let model = ToyModel::new(ModelConfig { hidden: 8, depth: 1, output_dim: 2, ..Default::default() }, 0).unwrap();
        let x = Matrix::from_fn(10, 8, |i, j| ((i * 8 + j) as f64).sin() + 0.3);
        assert_eq!(track_layer_means(&model, &x).unwrap(), vec![r_ratio(&x)]);
    }

    #[test]
    fn config_contracts() {
        let tc = TrainConfig { steps: 0, ..Default::default() };
        assert!(tc.validate().is_err());
        let tc = TrainConfig { lr: 0.0, ..Default::default() };
        assert!(tc.validate().is_err());
        assert!("fp4_averis".parse::<Mode>().is_ok());
        assert!("bf16".parse::<Mode>().is_err());
    }
}
