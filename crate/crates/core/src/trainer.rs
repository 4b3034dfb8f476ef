//! Field regression: training-volume sampling, the normalized-field loss,
//! Adam with warmup/decay, and an exponential moving average of weights.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{IfmError, Result};
use crate::nn::{Activation, Mlp};
use crate::plans::{sample_pairs, Plan, PlanKind};
use crate::rng::{SeedStreams, StreamRng};
use crate::superposition::StringKernel;
use crate::types::{validate_geometry, ExtendedPoint, PlateGeometry, PointCloud, StringParams};

/// Noise added to the straight-line interpolation between paired points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    None,
    /// Gaussian with per-coordinate variance `L/2 - |L/2 - z|`.
    Bridge,
}

impl std::str::FromStr for NoiseMode {
    type Err = IfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseMode::None),
            "bridge" => Ok(NoiseMode::Bridge),
            other => Err(IfmError::InvalidValue(format!("unknown noise mode `{other}`"))),
        }
    }
}

/// Bridge noise variance at height `z`.
pub fn bridge_variance(z: f64, gap: f64) -> f64 {
    (gap / 2.0 - (gap / 2.0 - z).abs()).max(0.0)
}

/// Point at height `z` on the segment from `(quark, 0)` to `(antiquark, L)`,
/// plus noise.
pub fn training_point_at<R: Rng + ?Sized>(
    quark: &[f64],
    antiquark: &[f64],
    z: f64,
    geometry: &PlateGeometry,
    noise: NoiseMode,
    rng: &mut R,
) -> Result<ExtendedPoint> {
    let t = z / geometry.gap();
    let sd = match noise {
        NoiseMode::None => 0.0,
        NoiseMode::Bridge => bridge_variance(z, geometry.gap()).sqrt(),
    };
    let x = quark
        .iter()
        .zip(antiquark)
        .map(|(q, a)| {
            let mut v = (1.0 - t) * q + t * a;
            if sd > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                v += sd * e;
            }
            v
        })
        .collect();
    ExtendedPoint::new(x, z)
}

/// Draws `z ~ U[0, L]` and returns the training point at that height.
pub fn sample_training_point<R: Rng + ?Sized>(
    quark: &[f64],
    antiquark: &[f64],
    geometry: &PlateGeometry,
    noise: NoiseMode,
    rng: &mut R,
) -> Result<ExtendedPoint> {
    let z = rng.random_range(0.0..=geometry.gap());
    training_point_at(quark, antiquark, z, geometry, noise, rng)
}

/// Trainable field regressor `R^{D+1} -> R^{D+1}` with its EMA shadow.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    mlp: Mlp,
    params: Vec<f64>,
    ema: Vec<f64>,
    ema_decay: f64,
    seed: u64,
}

impl FieldModel {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        hidden: &[usize],
        activation: Activation,
        ema_decay: f64,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&ema_decay) {
            return Err(IfmError::InvalidValue(format!("ema decay must lie in [0, 1), got {ema_decay}")));
        }
        let mlp = Mlp::new(data_dim + 1, hidden, data_dim + 1, activation)?;
        let params = mlp.init(rng);
        let ema = params.clone();
        Ok(Self { mlp, params, ema, ema_decay, seed })
    }

    /// Reassembles a model from stored parts.
    pub fn from_parts(mlp: Mlp, params: Vec<f64>, ema: Vec<f64>, ema_decay: f64, seed: u64) -> Result<Self> {
        let n = mlp.param_count();
        for got in [params.len(), ema.len()] {
            if got != n {
                return Err(IfmError::DimensionMismatch { expected: n, got });
            }
        }
        if mlp.input_dim() != mlp.output_dim() || mlp.input_dim() < 2 {
            return Err(IfmError::InvalidValue("field models map R^{D+1} to itself".into()));
        }
        Ok(Self { mlp, params, ema, ema_decay, seed })
    }

    pub fn data_dim(&self) -> usize {
        self.mlp.input_dim() - 1
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn ema_params(&self) -> &[f64] {
        &self.ema
    }

    pub fn ema_decay(&self) -> f64 {
        self.ema_decay
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `ema <- decay ema + (1 - decay) params`.
    pub fn update_ema(&mut self) {
        let d = self.ema_decay;
        for (e, p) in self.ema.iter_mut().zip(&self.params) {
            *e = d * *e + (1.0 - d) * p;
        }
    }

    /// Field predictions for rows `(x, z)`.
    pub fn predict(&self, points: ArrayView2<f64>, use_ema: bool) -> Result<Array2<f64>> {
        self.mlp.forward(if use_ema { &self.ema } else { &self.params }, points)
    }
}

/// Mean squared error against unit targets, skipping rows where `valid` is
/// false. Returns the loss and the number of rows used.
pub fn masked_loss(pred: ArrayView2<f64>, targets: ArrayView2<f64>, valid: &[bool]) -> Result<(f64, usize)> {
    let used = valid.iter().filter(|&&v| v).count();
    if used == 0 {
        return Err(IfmError::AllDegenerate);
    }
    let mut total = 0.0;
    for ((p, t), &ok) in pred.axis_iter(Axis(0)).zip(targets.axis_iter(Axis(0))).zip(valid) {
        if ok {
            total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok((total / used as f64, used))
}

/// [`masked_loss`] of `mlp` at `params` together with its gradient with
/// respect to `params`, written into `grad`.
pub fn masked_loss_gradient(
    mlp: &Mlp,
    params: &[f64],
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    valid: &[bool],
    grad: &mut [f64],
) -> Result<(f64, usize)> {
    let tape = mlp.forward_tape(params, x)?;
    let (loss, used) = masked_loss(tape.output(), targets, valid)?;
    let mut g_out = (&tape.output() - &targets) * (2.0 / used as f64);
    for (mut row, ok) in g_out.axis_iter_mut(Axis(0)).zip(valid) {
        if !ok {
            row.fill(0.0);
        }
    }
    mlp.backward(params, &tape, g_out.view(), grad)?;
    Ok((loss, used))
}

/// Loss of `model` (live weights) on points with precomputed field targets.
/// Targets are normalized here; zero-norm targets are excluded.
pub fn loss(model: &FieldModel, points: &[ExtendedPoint], targets: &[crate::FieldVector]) -> Result<f64> {
    if points.len() != targets.len() {
        return Err(IfmError::DimensionMismatch { expected: points.len(), got: targets.len() });
    }
    let d1 = model.data_dim() + 1;
    let x = Array2::from_shape_fn((points.len(), d1), |(i, j)| points[i].to_extended()[j]);
    let mut t = Array2::zeros((points.len(), d1));
    let mut valid = vec![false; points.len()];
    for (i, v) in targets.iter().enumerate() {
        let n = crate::superposition::normalize_field(v);
        valid[i] = !n.degenerate;
        t.row_mut(i).assign(&ArrayView2::from_shape((1, d1), n.v.as_slice()).expect("row").row(0));
    }
    let pred = model.predict(x.view(), false)?;
    Ok(masked_loss(pred.view(), t.view(), &valid)?.0)
}

/// Adam with coupled L2 weight decay (the decay term joins the gradient
/// before the moment estimates).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let g = g + self.weight_decay * *p;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// Linear warmup from 0 to `peak` over `warmup` iterations, then linear
/// decay to 0 at `total`.
pub fn learning_rate(iteration: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if iteration < warmup {
        peak * (iteration + 1) as f64 / warmup as f64
    } else if total > warmup {
        peak * (total - iteration.min(total)) as f64 / (total - warmup) as f64
    } else {
        peak
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub iterations: usize,
    pub warmup: usize,
    pub geometry: PlateGeometry,
    pub params: StringParams,
    pub plan: Plan,
    pub noise: NoiseMode,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub ema_decay: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
}

impl TrainConfig {
    /// Toy-task defaults: batch 1024, peak LR 2e-4 after 5000 warmup
    /// iterations, EMA 0.99, weight decay 1e-4, minibatch OT, no noise.
    pub fn new(geometry: PlateGeometry, params: StringParams, iterations: usize) -> Self {
        Self {
            batch: 1024,
            lr: 2e-4,
            iterations,
            warmup: 5000.min(iterations),
            geometry,
            params,
            plan: Plan::new(PlanKind::MinibatchOt),
            noise: NoiseMode::None,
            seed: 0,
            hidden: vec![256, 256, 256],
            activation: Activation::Silu,
            ema_decay: 0.99,
            weight_decay: 1e-4,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_geometry(&self.geometry, &self.params)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(IfmError::InvalidValue(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(IfmError::InvalidValue("batch must be >= 1".into()));
        }
        if self.warmup > self.iterations {
            return Err(IfmError::InvalidValue(format!(
                "warmup ({}) exceeds total iterations ({})",
                self.warmup, self.iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    pub degenerate_count: usize,
}

/// Loss history as CSV (`iteration,loss,lr,degenerate_count`), with the
/// seed echoed in a leading comment.
pub fn history_to_csv(history: &[HistoryRow], seed: u64) -> String {
    let mut out = format!("# seed={seed}\niteration,loss,lr,degenerate_count\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.loss, r.lr, r.degenerate_count);
    }
    out
}

pub fn write_history(path: &Path, history: &[HistoryRow], seed: u64) -> Result<()> {
    std::fs::write(path, history_to_csv(history, seed))?;
    Ok(())
}

/// Normalized superposed field at each row of `points` (rows `(x, z)`);
/// `valid[i]` is false where the field vanishes.
pub fn field_targets(kernel: &StringKernel, points: ArrayView2<f64>, targets: &mut Array2<f64>, valid: &mut [bool]) {
    let d = kernel.geometry().data_dim();
    let d1 = d + 1;
    let pts = points.as_standard_layout();
    let pts = pts.as_slice().expect("standard layout");
    let tgt = targets.as_slice_mut().expect("standard layout");
    const ROWS: usize = 64;
    tgt.par_chunks_mut(ROWS * d1)
        .zip(pts.par_chunks(ROWS * d1))
        .zip(valid.par_chunks_mut(ROWS))
        .for_each_init(Vec::new, |r2, ((t, p), ok)| {
            for ((trow, prow), flag) in t.chunks_mut(d1).zip(p.chunks(d1)).zip(ok.iter_mut()) {
                *flag = kernel.direction_into(&prow[..d], prow[d], r2, trow);
            }
        });
}

/// Step-by-step driver of the training loop.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: FieldModel,
    adam: Adam,
    plan_rng: StreamRng,
    noise_rng: StreamRng,
    iteration: usize,
    grad: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let streams = SeedStreams::new(config.seed);
        let model = FieldModel::new(
            config.geometry.data_dim(),
            &config.hidden,
            config.activation,
            config.ema_decay,
            config.seed,
            &mut streams.stream("init"),
        )?;
        let n = model.mlp().param_count();
        let adam = Adam::new(n, config.betas.0, config.betas.1, config.adam_eps, config.weight_decay);
        Ok(Self {
            plan_rng: streams.stream("plan"),
            noise_rng: streams.stream("noise"),
            config,
            model,
            adam,
            iteration: 0,
            grad: vec![0.0; n],
        })
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn into_model(self) -> FieldModel {
        self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// One iteration: sample pairs and training points, build targets, and
    /// take an Adam step followed by an EMA update.
    pub fn step(&mut self, source: &PointCloud, target: &PointCloud) -> Result<HistoryRow> {
        let cfg = &self.config;
        let g = cfg.geometry;
        let (b, d1) = (cfg.batch, g.extended_dim());
        let batch = sample_pairs(source, target, g, b, cfg.plan, &mut self.plan_rng)?;
        let mut x = Array2::zeros((b, d1));
        for (i, (q, a)) in batch.pairs().enumerate() {
            let p = sample_training_point(q, a, &g, cfg.noise, &mut self.noise_rng)?;
            for (j, v) in p.to_extended().into_iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        let kernel = StringKernel::new(&batch, cfg.params);
        let mut targets = Array2::zeros((b, d1));
        let mut valid = vec![false; b];
        field_targets(&kernel, x.view(), &mut targets, &mut valid);

        let (loss, used) =
            masked_loss_gradient(self.model.mlp(), self.model.params(), x.view(), targets.view(), &valid, &mut self.grad)?;
        if !loss.is_finite() {
            return Err(IfmError::Diverged { iteration: self.iteration });
        }
        let lr = learning_rate(self.iteration, cfg.lr, cfg.warmup, cfg.iterations);
        self.adam.step(self.model.params_mut(), &self.grad, lr);
        if self.model.params().iter().any(|p| !p.is_finite()) {
            return Err(IfmError::Diverged { iteration: self.iteration });
        }
        self.model.update_ema();
        let row = HistoryRow { iteration: self.iteration, loss, lr, degenerate_count: b - used };
        self.iteration += 1;
        Ok(row)
    }
}

/// Runs the full training loop.
pub fn train(source: &PointCloud, target: &PointCloud, config: TrainConfig) -> Result<(FieldModel, Vec<HistoryRow>)> {
    let mut trainer = Trainer::new(config)?;
    let mut history = Vec::with_capacity(trainer.config.iterations);
    while !trainer.is_done() {
        history.push(trainer.step(source, target)?);
    }
    Ok((trainer.into_model(), history))
}
