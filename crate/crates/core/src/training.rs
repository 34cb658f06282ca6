//! AdamW training with an optional encoder-frozen warm-up phase.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandselect::{select_bands, BandStrategy};
use crate::error::{Error, Result};
use crate::hypercube::{select_channels, DatasetManifest, Sample, Split, WavelengthGrid};
use crate::models::{ChannelNorm, Checkpoint, Model};
use crate::numcore::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Images per optimisation step.
    pub batch: usize,
    pub seed: u64,
    /// Epochs during which encoder parameters are not updated.
    pub freeze_backbone_epochs: usize,
    /// Exclude background pixels from the loss.
    pub ignore_background: bool,
    /// Write an intermediate checkpoint every this many epochs (0 = only
    /// the final one).
    pub checkpoint_every: usize,
    /// Fit per-band standardisation on the training inputs when the model
    /// has none yet.
    pub normalize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            lr: 1e-5,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch: 1,
            seed: 0,
            freeze_backbone_epochs: 0,
            ignore_background: false,
            checkpoint_every: 0,
            normalize_inputs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.freeze_backbone_epochs > self.epochs {
            return Err(Error::Config(format!(
                "freeze_backbone_epochs ({}) exceeds epochs ({})",
                self.freeze_backbone_epochs, self.epochs
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::Config("weight_decay must be >= 0 and eps > 0".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl MomentState {
    pub fn new(len: usize) -> Self {
        MomentState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub slots: Vec<MomentState>,
}

impl OptimizerState {
    pub fn for_model(model: &Model) -> Self {
        OptimizerState {
            slots: model.params().iter().map(|p| MomentState::new(p.value.len())).collect(),
        }
    }
}

/// One AdamW update of a single tensor with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`.
pub fn adamw_update(
    name: &str,
    theta: &mut [f64],
    grad: &[f64],
    state: &mut MomentState,
    config: &TrainConfig,
) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{name}: parameter has {} values, gradient {}, optimizer state {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    let (b1, b2) = config.betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((th, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *th = *th - config.lr * (m_hat / (v_hat.sqrt() + config.eps)) - config.lr * config.weight_decay * *th;
    }
    Ok(())
}

/// AdamW over every model parameter whose gradient is given; `None`
/// entries (frozen parameters) are left untouched along with their state.
pub fn adamw_step(
    model: &mut Model,
    grads: &[Option<Vec<f64>>],
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != model.params().len() || state.slots.len() != grads.len() {
        return Err(Error::Shape("gradient list does not match the model".into()));
    }
    for ((param, grad), slot) in model.params_mut().iter_mut().zip(grads).zip(&mut state.slots) {
        if let Some(grad) = grad {
            adamw_update(&param.name, param.value.data_mut(), grad, slot, config)?;
        }
    }
    Ok(())
}

/// Model input prepared from one sample.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub input: Tensor,
    pub targets: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

/// Selects `indices` from the cube and lays the sample out for the models.
pub fn prepare(sample: &Sample, indices: &[usize]) -> Result<Prepared> {
    let cube = select_channels(&sample.cube, indices)?;
    let (h, w) = (cube.height(), cube.width());
    let input = Tensor::new(&[1, cube.bands(), h, w], cube.to_channel_first())?;
    Ok(Prepared {
        name: sample.name.clone(),
        input,
        targets: sample.mask.labels().iter().map(|&l| l as usize).collect(),
        height: h,
        width: w,
    })
}

/// Stacks same-sized prepared samples into one batch.
fn stack(items: &[&Prepared]) -> Result<(Tensor, Vec<usize>)> {
    let first = items[0];
    let [_, c, h, w] = first.input.dims4()?;
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    let mut targets = Vec::with_capacity(items.len() * h * w);
    for item in items {
        if item.input.shape() != first.input.shape() {
            return Err(Error::Config(format!(
                "batching needs equal image sizes: {} is {:?}, {} is {:?}",
                first.name,
                first.input.shape(),
                item.name,
                item.input.shape()
            )));
        }
        data.extend_from_slice(item.input.data());
        targets.extend_from_slice(&item.targets);
    }
    Ok((Tensor::new(&[items.len(), c, h, w], data)?, targets))
}

/// Where and how often checkpoints are written.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub dir: PathBuf,
    pub experiment: String,
    pub bands: String,
    pub class_names: Vec<String>,
}

impl CheckpointSink {
    pub fn final_path(&self) -> PathBuf {
        self.dir.join(format!("{}.ckpt", self.experiment))
    }

    fn epoch_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("{}_epoch{epoch:05}.ckpt", self.experiment))
    }

    fn write(&self, model: &Model, epoch: usize, path: &Path) -> Result<()> {
        Checkpoint {
            experiment: self.experiment.clone(),
            bands: self.bands.clone(),
            epoch,
            class_names: self.class_names.clone(),
            model: model.clone(),
        }
        .save(path)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// `(epoch, mean training loss)`; epoch 0 is the untrained model.
    pub loss_trace: Vec<(usize, f64)>,
}

fn ignore_index(config: &TrainConfig) -> Option<usize> {
    config.ignore_background.then_some(0)
}

/// Mean loss over `data` without recording gradients.
pub fn evaluate_loss(model: &Model, data: &[Prepared], config: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for item in data {
        let mut g = Graph::new();
        let x = g.constant(item.input.clone());
        let (logits, _) = model.forward_graph(&mut g, x, |_| false)?;
        let loss = g.softmax_ce_loss(logits, &item.targets, ignore_index(config))?;
        total += g.value(loss).item();
    }
    Ok(total / data.len() as f64)
}

/// Trains on already prepared samples.
pub fn train_prepared(
    mut model: Model,
    data: &[Prepared],
    config: &TrainConfig,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    for item in data {
        model.check_input(item.input.shape())?;
    }
    if config.normalize_inputs && model.input_norm().is_none() {
        model.set_input_norm(Some(ChannelNorm::fit(data.iter().map(|d| &d.input))?))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::for_model(&model);
    let mut trace = vec![(0, evaluate_loss(&model, data, config)?)];
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let frozen = epoch < config.freeze_backbone_epochs;
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let (input, targets) = stack(&items)?;
            let mut g = Graph::new();
            let x = g.constant(input);
            let (logits, vars) = model.forward_graph(&mut g, x, |p| !(frozen && p.encoder))?;
            let loss = g.softmax_ce_loss(logits, &targets, ignore_index(config))?;
            g.backward(loss)?;
            let grads: Vec<Option<Vec<f64>>> = vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec)).collect();
            adamw_step(&mut model, &grads, &mut state, config)?;
        }
        let done = epoch + 1;
        trace.push((done, evaluate_loss(&model, data, config)?));
        if let Some(sink) = sink {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.epochs {
                sink.write(&model, done, &sink.epoch_path(done))?;
            }
        }
    }
    if let Some(sink) = sink {
        sink.write(&model, config.epochs, &sink.final_path())?;
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

/// Band indices for `strategy`, checked against the model's input width.
pub fn resolve_bands(grid: &WavelengthGrid, strategy: &BandStrategy, model: &Model) -> Result<Vec<usize>> {
    let indices = select_bands(grid, strategy)?;
    if indices.len() != model.spec().in_channels {
        return Err(Error::Config(format!(
            "band strategy {strategy} yields {} channels but the model expects {}",
            indices.len(),
            model.spec().in_channels
        )));
    }
    Ok(indices)
}

/// Trains `model` on the train split of `manifest`.
pub fn train(
    model: Model,
    manifest: &DatasetManifest,
    bands: &BandStrategy,
    config: &TrainConfig,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let indices = resolve_bands(&manifest.grid, bands, &model)?;
    if model.spec().num_classes != manifest.class_names.len() {
        return Err(Error::Config(format!(
            "model predicts {} classes, manifest lists {}",
            model.spec().num_classes,
            manifest.class_names.len()
        )));
    }
    let samples = manifest.load_split(Split::Train)?;
    if samples.is_empty() {
        return Err(Error::Config("manifest has no train entries".into()));
    }
    let data = samples
        .iter()
        .map(|s| prepare(s, &indices))
        .collect::<Result<Vec<_>>>()?;
    train_prepared(model, &data, config, sink)
}

/// Loss trace as `epoch,loss` CSV.
pub fn loss_trace_csv(trace: &[(usize, f64)]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in trace {
        out.push_str(&format!("{epoch},{loss:.9}\n"));
    }
    out
}
