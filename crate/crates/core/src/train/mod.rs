//! Loss, optimizer, pixel metrics and the mini-batch training loop.

mod adam;
pub(crate) mod loss;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{bce_loss, bce_loss_logit_grad, BCE_EPSILON};

use crate::error::{Error, Result};
use crate::nn::{
    batch_from_images, init_params, save_model, unet_backward_logits, unet_forward_batch, Tensor, UNetConfig,
    UNetParams,
};
use crate::rng::{derive_seed, Xoshiro256};
use crate::synth::{Dataset, Sample};

/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle_seed: u64,
    pub metric_threshold: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle_seed: 0,
            metric_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::arg("Adam betas must lie in [0,1) and epsilon must be positive"));
        }
        if !(self.metric_threshold > 0.0 && self.metric_threshold < 1.0) {
            return Err(Error::arg("metric threshold outside (0,1)"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

/// Confusion counts accumulated over every (sample, class, pixel) slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl PixelCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, tn: self.tn + o.tn, fn_: self.fn_ + o.fn_ }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub binary_accuracy: f64,
    /// 0 when nothing was predicted positive (see `precision_undefined`).
    pub precision: f64,
    /// 0 when the targets hold no positives (see `recall_undefined`).
    pub recall: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub counts: PixelCounts,
    /// Mean clipped BCE.
    pub loss: f64,
}

impl MetricsReport {
    pub fn from_counts(counts: PixelCounts, loss: f64) -> Self {
        let PixelCounts { tp, fp, tn, fn_ } = counts;
        let total = counts.total();
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Self {
            binary_accuracy: ratio(tp + tn, total),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            precision_undefined: tp + fp == 0,
            recall_undefined: tp + fn_ == 0,
            counts,
            loss,
        }
    }
}

/// Ground-truth masks of `samples` as a `[n_classes, N, H, W]` 0/1 tensor.
pub fn targets_from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>, n_classes: usize) -> Result<Tensor<f32>> {
    let samples: Vec<&Sample> = samples.into_iter().collect();
    let Some(first) = samples.first() else {
        return Err(Error::arg("no samples"));
    };
    let (h, w) = (first.input.height(), first.input.width());
    let mut data = vec![0.0f32; n_classes * samples.len() * h * w];
    for (i, s) in samples.iter().enumerate() {
        if s.masks.len() != n_classes {
            return Err(Error::arg(format!("sample has {} masks, expected {n_classes}", s.masks.len())));
        }
        for (c, m) in s.masks.iter().enumerate() {
            let dst = &mut data[(c * samples.len() + i) * h * w..][..h * w];
            for (d, &b) in dst.iter_mut().zip(m.bits()) {
                *d = b as f32;
            }
        }
    }
    Tensor::from_vec(&[n_classes, samples.len(), h, w], data)
}

/// Accumulates confusion counts of `probabilities` thresholded at `threshold`
/// against 0/1 `targets` of the same shape.
pub fn count_pixels(probabilities: &[f32], targets: &[f32], threshold: f32) -> PixelCounts {
    let mut c = PixelCounts::default();
    for (&p, &t) in probabilities.iter().zip(targets) {
        c.add(p >= threshold, t >= 0.5);
    }
    c
}

/// Probabilities for every sample of `dataset`, one `[n_classes, N, H, W]`
/// tensor per chunk of [`EVAL_CHUNK`] samples, in dataset order.
pub fn predict_chunks(params: &UNetParams<f32>, config: &UNetConfig, samples: &[Sample]) -> Result<Vec<Tensor<f32>>> {
    samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let input = batch_from_images(chunk.iter().map(|s| &s.input), config)?;
            Ok(unet_forward_batch(params, config, &input)?.into_probabilities())
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect()
}

/// Pixel-level micro-averaged metrics of the network on `dataset`.
pub fn evaluate_metrics(params: &UNetParams<f32>, config: &UNetConfig, dataset: &Dataset, threshold: f32) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot evaluate an empty dataset"));
    }
    let per_chunk: Vec<Result<(PixelCounts, f64)>> = dataset
        .samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let input = batch_from_images(chunk.iter().map(|s| &s.input), config)?;
            let probs = unet_forward_batch(params, config, &input)?.into_probabilities();
            let targets = targets_from_samples(chunk, config.n_classes)?;
            let (loss, _) = bce_loss_logit_grad(&probs, &targets)?;
            Ok((count_pixels(probs.data(), targets.data(), threshold), loss * probs.len() as f64))
        })
        .collect();
    let mut counts = PixelCounts::default();
    let mut loss_sum = 0.0;
    for r in per_chunk {
        let (c, l) = r?;
        counts = counts.merge(c);
        loss_sum += l;
    }
    Ok(MetricsReport::from_counts(counts, loss_sum / counts.total() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: UNetParams<f32>,
    pub history: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// `<prefix>.epochNN.unet`
pub fn checkpoint_path(prefix: &Path, epoch: usize) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".epoch{epoch:02}.unet"));
    PathBuf::from(s)
}

fn check_dataset(ds: &Dataset, config: &UNetConfig, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::arg(format!("{what} dataset is empty")));
    }
    if ds.dims() != (config.height, config.width) || ds.n_classes() != config.n_classes {
        return Err(Error::arg(format!(
            "{what} dataset is {}x{} with {} classes; network expects {}x{} with {}",
            ds.dims().0,
            ds.dims().1,
            ds.n_classes(),
            config.height,
            config.width,
            config.n_classes
        )));
    }
    Ok(())
}

/// One optimisation pass over `order`, returning the mean training loss.
pub fn train_epoch(
    params: &mut UNetParams<f32>,
    state: &mut AdamState,
    config: &UNetConfig,
    train_config: &TrainConfig,
    samples: &[Sample],
    order: &[usize],
    epoch: usize,
) -> Result<f64> {
    let adam = train_config.adam();
    let mut weighted = 0.0;
    for (b, batch) in order.chunks(train_config.batch_size).enumerate() {
        let picked: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
        let input = batch_from_images(picked.iter().map(|s| &s.input), config)?;
        let targets = targets_from_samples(picked.iter().copied(), config.n_classes)?;
        let cache = unet_forward_batch(params, config, &input)
            .map_err(|e| Error::numeric(format!("epoch {epoch} batch {}", b + 1), e.to_string()))?;
        let (loss, grad) = bce_loss_logit_grad(cache.probabilities(), &targets)?;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("epoch {epoch} batch {}", b + 1), format!("loss is {loss}")));
        }
        let grads = unet_backward_logits(params, config, &cache, &grad)?;
        adam_step(params, &grads, state, &adam)
            .map_err(|e| Error::numeric(format!("epoch {epoch} batch {}", b + 1), e.to_string()))?;
        weighted += loss * batch.len() as f64;
    }
    Ok(weighted / order.len() as f64)
}

/// Sample order for `epoch` (1-based): a Fisher–Yates shuffle seeded by
/// `derive_seed(shuffle_seed, epoch)`.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Xoshiro256::seed_from_u64(derive_seed(shuffle_seed, epoch as u64)).shuffle(&mut order);
    order
}

/// Trains from He-initialised weights seeded by `init_seed`.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    unet_config: &UNetConfig,
    train_config: &TrainConfig,
    init_seed: u64,
) -> Result<TrainOutcome> {
    train_with(train_set, val_set, unet_config, train_config, init_seed, None, |_| {})
}

/// [`train`] with optional per-epoch checkpoints and a progress callback.
#[allow(clippy::too_many_arguments)]
pub fn train_with(
    train_set: &Dataset,
    val_set: &Dataset,
    unet_config: &UNetConfig,
    train_config: &TrainConfig,
    init_seed: u64,
    checkpoint_prefix: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    unet_config.validate()?;
    train_config.validate()?;
    check_dataset(train_set, unet_config, "training")?;
    check_dataset(val_set, unet_config, "validation")?;

    let mut params = init_params(unet_config, init_seed)?;
    let mut state = AdamState::new(&params);
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 1..=train_config.epochs {
        let order = epoch_order(train_set.len(), train_config.shuffle_seed, epoch);
        let train_loss =
            train_epoch(&mut params, &mut state, unet_config, train_config, &train_set.samples, &order, epoch)?;
        let val = evaluate_metrics(&params, unet_config, val_set, train_config.metric_threshold)?;
        if let Some(prefix) = checkpoint_prefix {
            let path = checkpoint_path(prefix, epoch);
            let mut f = BufWriter::new(File::create(&path)?);
            save_model(&params, unet_config, &mut f)?;
            f.flush()?;
            checkpoints.push(path);
        }
        let record = EpochRecord { epoch, train_loss, val };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { params, history, checkpoints })
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy,val_precision,val_recall";

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut sink: W) -> Result<()> {
    writeln!(sink, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(
            sink,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val.loss, r.val.binary_accuracy, r.val.precision, r.val.recall
        )?;
    }
    Ok(())
}
