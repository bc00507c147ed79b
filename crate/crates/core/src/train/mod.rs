//! Mini-batch training, accuracy metrics and evaluation reports.

mod loss;
mod metrics;
mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{loss, LossKind};
pub use metrics::{
    alignment_accuracy, check_margins, evaluate, EvalReport, PairPaths, PairRecord, Summary, DEFAULT_MARGINS,
};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{Error, Result};
use crate::model::CaModel;
use crate::softdtw::{LocalCost, SoftDtwParams};
use crate::synth::{path_to_grid, resize_and_pad, Corpus, PerformancePair, Split};
use crate::tensor::{ParamStore, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Soft-DTW smoothing for the custom loss.
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            loss_kind: LossKind::Custom,
            lambda: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".to_string()));
        }
        if self.loss_kind == LossKind::Custom && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be positive for the custom loss", self.lambda)));
        }
        Ok(())
    }

    fn softdtw(&self) -> Result<SoftDtwParams> {
        SoftDtwParams::new(self.lambda.max(0.0), LocalCost::AbsDiff)
    }
}

/// A pair prepared for the network: the resized input and the grid target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub grid: Vec<f64>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn new(pair: &PerformancePair, grid_len: usize, max_perf_frames: usize) -> Result<Self> {
        let (grid, meta) = resize_and_pad(&pair.similarity, grid_len, max_perf_frames)?;
        Ok(Sample {
            id: pair.id.clone(),
            grid: grid.into_data(),
            target: path_to_grid(&pair.gt_path, &meta)?,
        })
    }
}

pub fn prepare(pairs: &[&PerformancePair], model: &CaModel) -> Result<Vec<Sample>> {
    let cfg = model.config();
    pairs.iter().map(|p| Sample::new(p, cfg.grid_len, cfg.max_perf_frames)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub curve: Vec<EpochLoss>,
    /// Epoch whose weights were kept (`None` when no epoch ran).
    pub best_epoch: Option<usize>,
}

fn batch_input(batch: &[&Sample], l: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch.len() * l * l);
    for s in batch {
        data.extend_from_slice(&s.grid);
    }
    Tensor::new(vec![batch.len(), 1, l, l], data)
}

/// Evaluation-mode mean loss over `samples`.
pub fn mean_loss(model: &CaModel, samples: &[Sample], cfg: &TrainConfig) -> Result<f64> {
    let params = cfg.softdtw()?;
    let l = model.config().grid_len;
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let x = tape.input(batch_input(&refs, l)?);
        let (out, _) = model.forward(&mut tape, x, None)?;
        let targets: Vec<Vec<f64>> = chunk.iter().map(|s| s.target.clone()).collect();
        let v = loss(&mut tape, out, &targets, cfg.loss_kind, &params)?;
        total += tape.value(v).data()[0] * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Train on `train`, selecting the weights with the lowest loss on `val`
/// (or the final weights when `val` is empty). `on_epoch` sees every epoch.
pub fn fit_samples(
    model: &mut CaModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".to_string()));
    }
    let params = cfg.softdtw()?;
    let l = model.config().grid_len;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    pairs: batch.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(","),
                },
                other => other,
            };
            let mut tape = Tape::new();
            let x = tape.input(batch_input(&batch, l)?);
            let (out, updates) = model.forward(&mut tape, x, Some(&mut rng)).map_err(diverged)?;
            let targets: Vec<Vec<f64>> = batch.iter().map(|s| s.target.clone()).collect();
            let v = loss(&mut tape, out, &targets, cfg.loss_kind, &params).map_err(diverged)?;
            let value = tape.value(v).data()[0];
            if !value.is_finite() {
                return Err(diverged(Error::NonFinite { op: "loss" }));
            }
            let grads = tape.backward(v).map_err(diverged)?;
            opt.step(model.params_mut(), tape.named_grads(&grads));
            model.apply_bn_updates(updates);
            total += value * batch.len() as f64;
        }
        let val_loss = if val.is_empty() { None } else { Some(mean_loss(model, val, cfg)?) };
        let entry = EpochLoss {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
        };
        on_epoch(&entry);
        if let Some(v) = val_loss {
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, epoch, model.params().clone()));
            }
        }
        curve.push(entry);
    }
    let best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            model.params_mut().load_values_from(&snapshot)?;
            Some(epoch)
        }
        None => curve.last().map(|e| e.epoch),
    };
    Ok(FitResult { curve, best_epoch })
}

/// Train on the corpus's training split, validating on its validation split.
pub fn fit(corpus: &Corpus, model: &mut CaModel, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochLoss)) -> Result<FitResult> {
    let train = prepare(&corpus.split(Split::Train), model)?;
    let val = prepare(&corpus.split(Split::Val), model)?;
    fit_samples(model, &train, &val, cfg, on_epoch)
}

/// `epoch,train_loss,val_loss` with an empty field when there is no validation loss.
pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in curve {
        let val = e.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(out, "{},{:e},{}", e.epoch, e.train_loss, val).expect("write to string");
    }
    out
}

pub fn write_loss_curve(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    fs::write(path, loss_curve_csv(curve)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
