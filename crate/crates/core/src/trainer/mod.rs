//! Relative H1 loss, AdamW, plateau scheduling and the minibatch training loop.

mod loss;
mod optim;
mod state;

pub use loss::{h1_loss, LossMode};
pub use optim::{AdamW, Moments, Plateau, PlateauState};
pub use state::{load_session, save_session, EpochRecord, TrainState};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::datagen::{invert_dataset, Dataset, Task};
use crate::ivnet::{IvNet, IvNetConfig, Normalization};
use crate::kv::KeyValues;
use crate::rng::{stream_rng, Stream};
use crate::tape::{BnMode, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: AdamW,
    pub scheduler: Plateau,
    pub loss: LossMode,
    pub seed: u64,
    pub task: Task,
    /// Share of the training set held out for validation when no validation set is given.
    pub val_fraction: f64,
    /// Abort once an epoch's training loss exceeds this multiple of the first epoch's.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            lr: 1e-3,
            optimizer: AdamW::default(),
            scheduler: Plateau::default(),
            loss: LossMode::H1,
            seed: 0,
            task: Task::Forward,
            val_fraction: 0.1,
            divergence_factor: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("batch size must be ≥ 1 and lr > 0 (got {}, {})", self.batch_size, self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if self.optimizer.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be non-negative".into()));
        }
        self.scheduler.validate()
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("weight_decay", self.optimizer.weight_decay);
        kv.set("lr_factor", self.scheduler.factor);
        kv.set("lr_patience", self.scheduler.patience);
        kv.set("min_lr", self.scheduler.min_lr);
        kv.set("lr_threshold", self.scheduler.threshold);
        kv.set("loss", self.loss);
        kv.set("seed", self.seed);
        kv.set("task", self.task);
        kv.set("val_fraction", self.val_fraction);
        kv.set("divergence_factor", self.divergence_factor);
    }

    /// Reads the training keys, keeping defaults for absent ones.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: kv.get("epochs")?.unwrap_or(d.epochs),
            batch_size: kv.get("batch_size")?.unwrap_or(d.batch_size),
            lr: kv.get("lr")?.unwrap_or(d.lr),
            optimizer: AdamW { weight_decay: kv.get("weight_decay")?.unwrap_or(d.optimizer.weight_decay), ..d.optimizer },
            scheduler: Plateau {
                factor: kv.get("lr_factor")?.unwrap_or(d.scheduler.factor),
                patience: kv.get("lr_patience")?.unwrap_or(d.scheduler.patience),
                min_lr: kv.get("min_lr")?.unwrap_or(d.scheduler.min_lr),
                threshold: kv.get("lr_threshold")?.unwrap_or(d.scheduler.threshold),
            },
            loss: kv.get("loss")?.unwrap_or(d.loss),
            seed: kv.get("seed")?.unwrap_or(d.seed),
            task: kv.get("task")?.unwrap_or(d.task),
            val_fraction: kv.get("val_fraction")?.unwrap_or(d.val_fraction),
            divergence_factor: kv.get("divergence_factor")?.unwrap_or(d.divergence_factor),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Deterministic hold-out split: `round(fraction·s)` samples (at least one when `s ≥ 2`).
pub fn split_validation(ds: &Dataset, fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let s = ds.len();
    let mut n_val = (fraction * s as f64).round() as usize;
    if fraction > 0.0 && s >= 2 {
        n_val = n_val.clamp(1, s - 1);
    }
    let mut perm: Vec<usize> = (0..s).collect();
    perm.shuffle(&mut stream_rng(seed, Stream::Split, 0));
    let mut val: Vec<usize> = perm[..n_val].to_vec();
    let mut train: Vec<usize> = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (ds.select(&train), ds.select(&val))
}

/// Returns `ds` arranged for `task` (inverting it when the stored task differs).
pub fn for_task(ds: &Dataset, task: Task) -> Dataset {
    if ds.meta.task == task {
        ds.clone()
    } else {
        invert_dataset(ds)
    }
}

/// Network-ready inputs and targets for a whole dataset.
pub struct Prepared {
    pub m: usize,
    pub channels: usize,
    pub h: f64,
    inputs: Vec<Vec<f32>>,
    targets: Vec<Vec<f32>>,
}

impl Prepared {
    pub fn new(model: &IvNet, ds: &Dataset) -> Result<Self> {
        if ds.meta.task != model.task {
            return Err(Error::ConfigMismatch(format!("dataset is for the {} task, model for {}", ds.meta.task, model.task)));
        }
        let include_f = model.config().in_channels == 3;
        let norm = &model.normalization;
        let mut inputs = Vec::with_capacity(ds.len());
        let mut targets = Vec::with_capacity(ds.len());
        for i in 0..ds.len() {
            let chans = norm.inputs(ds, i, include_f);
            inputs.push(chans.iter().flatten().map(|&v| v as f32).collect());
            targets.push(norm.target(ds, i).iter().map(|&v| v as f32).collect());
        }
        let h = 1.0 / (ds.m as f64 - 1.0);
        Ok(Prepared { m: ds.m, channels: model.static_channels(), h, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let m2 = self.m * self.m;
        let mut x = Vec::with_capacity(indices.len() * self.channels * m2);
        let mut y = Vec::with_capacity(indices.len() * m2);
        for &i in indices {
            x.extend_from_slice(&self.inputs[i]);
            y.extend_from_slice(&self.targets[i]);
        }
        let b = indices.len();
        (
            Tensor::new([b, self.channels, self.m, self.m], x).expect("input shape"),
            Tensor::new([b, 1, self.m, self.m], y).expect("target shape"),
        )
    }
}

/// A fresh network for `train`, with normalization fitted on it.
pub fn init_model(net: IvNetConfig, train: &Dataset, seed: u64) -> Result<IvNet> {
    IvNet::new(net, train.meta.task, Normalization::fit(train), seed)
}

/// Everything needed to continue training: current weights, best-so-far weights and optimizer state.
#[derive(Clone, Debug)]
pub struct Session {
    pub model: IvNet,
    pub best: IvNet,
    pub state: TrainState,
}

impl Session {
    pub fn new(model: IvNet, cfg: &TrainConfig) -> Self {
        let state = TrainState::new(&model, cfg.lr);
        Session { best: model.clone(), model, state }
    }
}

fn batch_loss(model: &IvNet, bn: &mut [crate::tape::BatchNormState], data: &Prepared, idx: &[usize], mode: LossMode, bn_mode: BnMode, grads: bool) -> Result<(f64, Option<Vec<Tensor<f32>>>)> {
    let (x, y) = data.batch(idx);
    let mut tape = Tape::<f32>::new();
    let params: Vec<Var> = if grads { model.bind(&mut tape) } else { model.params.iter().map(|p| tape.constant(p.value.clone())).collect() };
    let xv = tape.constant(x);
    let out = model.forward(&mut tape, &params, bn, xv, bn_mode)?;
    let loss = h1_loss(&mut tape, out.output, &y, mode, data.h).map_err(|e| match e {
        Error::DegenerateSample { index } => Error::DegenerateSample { index: idx[index] },
        e => e,
    })?;
    let value = tape.value(loss).data()[0] as f64;
    if !grads {
        return Ok((value, None));
    }
    let mut g = tape.backward(loss)?;
    Ok((value, Some(params.iter().map(|&p| g.take(p)).collect())))
}

/// Mean loss over `data` in evaluation mode.
pub fn evaluate_loss(model: &IvNet, data: &Prepared, mode: LossMode, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    let mut bn = model.bn.clone();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (l, _) = batch_loss(model, &mut bn, data, chunk, mode, BnMode::Eval, false)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Continues `session` until `until` epochs have completed, calling `on_epoch` after each.
pub fn run(
    session: &mut Session,
    train: &Prepared,
    val: &Prepared,
    cfg: &TrainConfig,
    until: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    let plateau = cfg.scheduler;
    let start = Instant::now();
    let base_wall = session.state.history.last().map_or(0.0, |r| r.wall_time);
    while session.state.epoch < until {
        let epoch = session.state.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut total = 0.0;
        let mut counted = 0usize;
        let lr = session.state.scheduler.lr;
        for chunk in order.chunks(cfg.batch_size) {
            let mut bn = session.model.bn.clone();
            let (l, grads) = batch_loss(&session.model, &mut bn, train, chunk, cfg.loss, BnMode::Train, true)?;
            let grads = grads.expect("gradients requested");
            let Session { model, state, .. } = session;
            match cfg.optimizer.step(&mut state.moments, &mut model.params, &grads, lr) {
                Ok(()) => {
                    model.bn = bn;
                    total += l * chunk.len() as f64;
                    counted += chunk.len();
                }
                Err(Error::NumericalFailure(_)) => state.skipped_batches += 1,
                Err(e) => return Err(e),
            }
        }
        if counted == 0 {
            return Err(Error::NumericalFailure(format!("every batch of epoch {} had non-finite gradients", epoch + 1)));
        }
        let train_loss = total / counted as f64;
        let initial = *session.state.initial_train_loss.get_or_insert(train_loss);
        if !(train_loss <= cfg.divergence_factor * initial) {
            return Err(Error::Diverged { epoch: epoch + 1, loss: train_loss, initial });
        }
        let val_loss = evaluate_loss(&session.model, val, cfg.loss, cfg.batch_size)?;
        if val_loss < session.state.best_val {
            session.state.best_val = val_loss;
            session.state.best_epoch = epoch + 1;
            session.best = session.model.clone();
        }
        plateau.observe(&mut session.state.scheduler, val_loss);
        session.state.epoch += 1;
        let record = EpochRecord { epoch: epoch + 1, train_loss, val_loss, lr, wall_time: base_wall + start.elapsed().as_secs_f64() };
        session.state.history.push(record.clone());
        on_epoch(&record);
    }
    Ok(())
}

/// Trains a fresh network on `train` (validated on `val`) for `cfg.epochs` epochs.
pub fn train(model: IvNet, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<Session> {
    let mut session = Session::new(model, cfg);
    let tp = Prepared::new(&session.model, train)?;
    let vp = Prepared::new(&session.model, val)?;
    run(&mut session, &tp, &vp, cfg, cfg.epochs, &mut |_| {})?;
    Ok(session)
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr,wall_time";

/// Appends one CSV row (writing the header first if the file is new or empty).
pub fn append_log(path: &Path, r: &EpochRecord) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{LOG_HEADER}")?;
    }
    writeln!(f, "{},{:e},{:e},{:e},{:.3}", r.epoch, r.train_loss, r.val_loss, r.lr, r.wall_time)?;
    Ok(())
}

/// Evaluation-mode predictions in network units, one vector of `m²` values per sample.
pub fn predict_network_units(model: &IvNet, data: &Prepared, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let m2 = data.m * data.m;
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk);
        let y = model.predict(x)?;
        out.extend(y.data().chunks(m2).map(|c| c.iter().map(|&v| v as f64).collect()));
    }
    Ok(out)
}

/// Evaluation-mode predictions in original units (`u` for forward, the coefficient for inverse).
pub fn predict(model: &IvNet, ds: &Dataset, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let data = Prepared::new(model, ds)?;
    let z = predict_network_units(model, &data, batch_size)?;
    Ok(z.iter().map(|v| model.normalization.decode_output(model.task, v)).collect())
}
