//! Two-pass min-norm multi-task training.
//!
//! Pass 1 backpropagates each task loss on its own and keeps only the
//! encoder part of each gradient. The min-norm weights over those vectors
//! then scale the task losses in pass 2, whose gradient drives one SGD
//! step on the encoder and every head.

use std::path::Path;

use crate::autodiff::{Graph, ParamId, ParamStore};
use crate::error::{invalid, mismatch, parse_err, Result};
use crate::fr::{parse_tasks, task_list_string, Task};
use crate::io::{write_csv, Provenance};
use crate::mgda::{self, GradientBundle, SimplexWeights};
use crate::model::{task_loss_on, Model};
use crate::rng::{self, tag};
use crate::synth::Frame;

use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub frame_stride: usize,
    pub tasks: Vec<Task>,
    pub seed: u64,
    pub beta: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 10,
            frame_stride: 2,
            tasks: Task::ALL.to_vec(),
            seed: 0,
            beta: 1.0,
            solver_tol: mgda::DEFAULT_TOL,
            solver_max_iter: mgda::DEFAULT_MAX_ITER,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| parse_err!("bad value for {key}: '{value}'"))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 10] = [
        "batch_size",
        "learning_rate",
        "momentum",
        "epochs",
        "frame_stride",
        "tasks",
        "seed",
        "beta",
        "solver_tol",
        "solver_max_iter",
    ];

    /// Sets one `key=value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "frame_stride" => self.frame_stride = parse_num(key, value)?,
            "tasks" => self.tasks = parse_tasks(value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "solver_tol" => self.solver_tol = parse_num(key, value)?,
            "solver_max_iter" => self.solver_max_iter = parse_num(key, value)?,
            _ => return Err(parse_err!("unknown train setting '{key}'")),
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("batch_size".into(), self.batch_size.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("momentum".into(), self.momentum.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("frame_stride".into(), self.frame_stride.to_string()),
            ("tasks".into(), task_list_string(&self.tasks)),
            ("seed".into(), self.seed.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("solver_tol".into(), self.solver_tol.to_string()),
            ("solver_max_iter".into(), self.solver_max_iter.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid!(
                "learning_rate must be a finite nonnegative number"
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1)"));
        }
        if self.frame_stride == 0 {
            return Err(invalid!("frame_stride must be at least 1"));
        }
        if self.tasks.is_empty() {
            return Err(invalid!("at least one task is required"));
        }
        if !(self.beta > 0.0) {
            return Err(invalid!("beta must be positive"));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum: `v <- mu v + g`, `theta <- theta - lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, learning_rate: f64, momentum: f64) -> Self {
        let velocity = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Sgd {
            learning_rate,
            momentum,
            velocity,
        }
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn apply(&mut self, store: &mut ParamStore) {
        let ids: Vec<ParamId> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let t = store.get_mut(id);
            let v = &mut self.velocity[id.0];
            let Some(grad) = t.grad.as_ref() else {
                continue;
            };
            for ((p, vi), g) in t.values.iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = self.momentum * *vi + g;
                *p -= self.learning_rate * *vi;
            }
        }
    }
}

/// One frame with one target per configured task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub content_id: u32,
    pub level: u8,
    pub frame_index: usize,
    pub frame: Frame,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub losses: Vec<f64>,
    pub alpha: Vec<f64>,
    pub joint_loss: f64,
    /// Norm of each task's encoder gradient.
    pub grad_norms: Vec<f64>,
    pub combined_norm: f64,
    pub solver_iterations: usize,
    pub degenerate: bool,
    /// Set when a loss or gradient went non-finite; no update was applied.
    pub aborted: bool,
}

/// Gradients seen during a step, for checking the two passes agree.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub task_encoder_grads: Vec<Vec<f64>>,
    pub applied_encoder_grad: Vec<f64>,
    pub weights: SimplexWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub tasks: Vec<Task>,
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn epoch_joint_losses(&self, epoch: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.epoch == epoch && !r.aborted)
            .map(|r| r.joint_loss)
            .collect()
    }

    pub fn epoch_mean_joint(&self, epoch: usize) -> Option<f64> {
        let v = self.epoch_joint_losses(epoch);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn epoch_median_joint(&self, epoch: usize) -> Option<f64> {
        crate::eval::median(&self.epoch_joint_losses(epoch))
    }

    pub fn write_csv(&self, path: &Path, prov: &Provenance) -> Result<()> {
        let mut header = vec![
            "epoch".to_string(),
            "step".to_string(),
            "aborted".to_string(),
        ];
        for prefix in ["loss", "alpha", "grad_norm"] {
            if prefix == "grad_norm" {
                header.push("joint_loss".into());
            }
            header.extend(self.tasks.iter().map(|t| format!("{prefix}_{}", t.name())));
        }
        header.push("combined_norm".into());
        header.push("solver_iterations".into());
        let rows: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.epoch.to_string(),
                    r.step.to_string(),
                    (r.aborted as u8).to_string(),
                ];
                row.extend(r.losses.iter().map(|v| v.to_string()));
                row.extend(r.alpha.iter().map(|v| v.to_string()));
                row.push(r.joint_loss.to_string());
                row.extend(r.grad_norms.iter().map(|v| v.to_string()));
                row.push(r.combined_norm.to_string());
                row.push(r.solver_iterations.to_string());
                row
            })
            .collect();
        write_csv(path, prov, &header, &rows)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Records the forward pass for `batch` and one loss node per task.
fn forward_losses(
    model: &Model,
    batch: &[(&Frame, &[f64])],
    beta: f64,
) -> Result<(Graph, Vec<crate::autodiff::NodeId>)> {
    let mut g = Graph::new();
    let z = batch
        .iter()
        .map(|(f, _)| model.encoder_forward(&mut g, f))
        .collect::<Result<Vec<_>>>()?;
    let losses = model
        .heads
        .iter()
        .enumerate()
        .map(|(t, head)| {
            let targets: Vec<f64> = batch.iter().map(|(_, y)| y[t]).collect();
            task_loss_on(&mut g, &model.store, head, &z, &targets, beta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((g, losses))
}

/// One two-pass update. Targets are ordered like `model.heads`.
pub fn train_step(
    model: &mut Model,
    opt: &mut Sgd,
    batch: &[(&Frame, &[f64])],
    config: &TrainConfig,
) -> Result<(StepRecord, StepGradients)> {
    if batch.is_empty() {
        return Err(invalid!("empty batch"));
    }
    let t = model.heads.len();
    if let Some((_, y)) = batch.iter().find(|(_, y)| y.len() != t) {
        return Err(mismatch!("{} targets for {t} task heads", y.len()));
    }
    let enc_ids = model.encoder.ids();

    // Pass 1: per-task encoder gradients.
    let (g1, losses) = forward_losses(model, batch, config.beta)?;
    let loss_values: Vec<f64> = losses.iter().map(|l| g1.scalar(*l)).collect();
    let mut record = StepRecord {
        epoch: 0,
        step: 0,
        losses: loss_values.clone(),
        alpha: vec![f64::NAN; t],
        joint_loss: f64::NAN,
        grad_norms: vec![f64::NAN; t],
        combined_norm: f64::NAN,
        solver_iterations: 0,
        degenerate: false,
        aborted: false,
    };
    let empty = StepGradients {
        task_encoder_grads: Vec::new(),
        applied_encoder_grad: Vec::new(),
        weights: SimplexWeights {
            alpha: vec![f64::NAN; t],
            achieved_norm_sq: f64::NAN,
            iterations: 0,
            degenerate: false,
        },
    };
    if loss_values.iter().any(|v| !v.is_finite()) {
        record.aborted = true;
        return Ok((record, empty));
    }
    let mut grads = Vec::with_capacity(t);
    for loss in &losses {
        model.store.zero_grad();
        g1.backward(*loss, &mut model.store)?;
        grads.push(model.store.flat_grad(&enc_ids));
    }
    drop(g1);
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        record.aborted = true;
        return Ok((record, empty));
    }
    record.grad_norms = grads.iter().map(|g| norm(g)).collect();

    let names = model.tasks().iter().map(|t| t.name().to_string()).collect();
    let bundle = GradientBundle::new(names, grads)?;
    let weights = mgda::min_norm_solve(&bundle, config.solver_tol, config.solver_max_iter)?;
    record.alpha = weights.alpha.clone();
    record.combined_norm = weights.achieved_norm_sq.sqrt();
    record.solver_iterations = weights.iterations;
    record.degenerate = weights.degenerate;

    // Pass 2: joint loss with the weights held constant.
    let (mut g2, losses) = forward_losses(model, batch, config.beta)?;
    let joint = mgda::compose_joint_loss(&mut g2, &weights, &losses)?;
    record.joint_loss = g2.scalar(joint);
    if !record.joint_loss.is_finite() {
        record.aborted = true;
        return Ok((record, empty));
    }
    model.store.zero_grad();
    g2.backward(joint, &mut model.store)?;
    let applied = model.store.flat_grad(&enc_ids);
    opt.apply(&mut model.store);

    Ok((
        record,
        StepGradients {
            task_encoder_grads: bundle.vectors,
            applied_encoder_grad: applied,
            weights,
        },
    ))
}

/// Trains `model` over `samples` for `config.epochs` epochs. Batches follow
/// a per-epoch seeded shuffle. `on_epoch` runs after every epoch (used to
/// write checkpoints).
pub fn pretrain(
    model: &mut Model,
    samples: &[TrainSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &Model, &TrainLog) -> Result<()>,
) -> Result<TrainLog> {
    config.validate()?;
    if samples.is_empty() {
        return Err(invalid!("no training samples"));
    }
    if model.tasks() != config.tasks {
        return Err(mismatch!(
            "model heads {} differ from configured tasks {}",
            task_list_string(&model.tasks()),
            task_list_string(&config.tasks)
        ));
    }
    for s in samples {
        model.check_frame(&s.frame)?;
        if s.targets.len() != config.tasks.len() {
            return Err(mismatch!(
                "sample c{} l{} f{} has {} targets for {} tasks",
                s.content_id,
                s.level,
                s.frame_index,
                s.targets.len(),
                config.tasks.len()
            ));
        }
    }
    let mut opt = Sgd::new(&model.store, config.learning_rate, config.momentum);
    let mut log = TrainLog {
        tasks: config.tasks.clone(),
        records: Vec::new(),
    };
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, &[tag::SHUFFLE, epoch as u64]));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Frame, &[f64])> = chunk
                .iter()
                .map(|i| (&samples[*i].frame, samples[*i].targets.as_slice()))
                .collect();
            let (mut rec, _) = train_step(model, &mut opt, &batch, config)?;
            rec.epoch = epoch;
            rec.step = step;
            step += 1;
            log.records.push(rec);
        }
        on_epoch(epoch, model, &log)?;
    }
    Ok(log)
}
