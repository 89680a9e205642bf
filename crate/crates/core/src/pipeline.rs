//! Pretraining, training, prediction and evaluation loops.

use std::fmt;

use plasm_nn::Module;
use plasm_tensor::{Rng, Tensor};

use crate::checkpoint::{Checkpoint, Phase};
use crate::config::{ModelConfig, OptimizerConfig};
use crate::dataio::VideoDataset;
use crate::error::{Error, Result};
use crate::loss::{loss_prediction, loss_reconstruction};
use crate::metrics::{Frames, MetricReport};
use crate::model::{Model, DECODER, ENCODER, MASKING, TRANSLATOR};
use crate::optim::{lr_at, Adam};

// stream ids under the run seed
const INIT_STREAM: u64 = 0;
const ORDER_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub phase: &'static str,
    pub lr: f64,
    pub loss: f64,
}

/// One line per update: `step<TAB>phase<TAB>lr<TAB>loss`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog(pub Vec<LogEntry>);

impl LossLog {
    pub fn losses(&self) -> Vec<f64> {
        self.0.iter().map(|e| e.loss).collect()
    }

    pub fn first(&self) -> Option<f64> {
        self.0.first().map(|e| e.loss)
    }

    pub fn last(&self) -> Option<f64> {
        self.0.last().map(|e| e.loss)
    }
}

impl fmt::Display for LossLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.0 {
            writeln!(f, "{}\t{}\t{}\t{}", e.step, e.phase, e.lr, e.loss)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
    pub log: LossLog,
    /// Mean logged loss of each completed epoch.
    pub epoch_means: Vec<f64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, phase: Phase, config_echo: impl Into<String>) -> Result<Checkpoint> {
        Checkpoint::from_model(&self.model, Some(&self.optimizer), phase, config_echo)
    }
}

/// Where training gets its encoder and decoder weights.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    /// Everything Kaiming-initialised; the encoder trains too.
    Kaiming,
    /// Encoder and decoder from a pretraining checkpoint; the encoder is frozen.
    Pretrained(&'a Checkpoint),
}

struct Loop<'a> {
    ds: &'a VideoDataset,
    opts: &'a TrainOptions,
    rng: &'a Rng,
    phase: &'static str,
}

impl Loop<'_> {
    fn run(
        &self,
        opt: &mut Adam<f32>,
        mut step_loss: impl FnMut(&[usize], usize) -> Result<Tensor<f32>>,
    ) -> Result<(LossLog, Vec<f64>)> {
        let per_epoch = self.ds.n_clips / self.opts.batch_size.max(1);
        if self.ds.n_clips == 0 || per_epoch == 0 {
            return Err(Error::Data(format!(
                "{}: dataset of {} clips yields no batch of {}",
                self.phase, self.ds.n_clips, self.opts.batch_size
            )));
        }
        let mut total = self.opts.epochs.saturating_mul(per_epoch);
        if let Some(cap) = self.opts.max_steps {
            total = total.min(cap);
        }
        let order_rng = self.rng.split(ORDER_STREAM);
        let mut log = LossLog::default();
        let mut means = Vec::new();
        let mut step = 0;
        'epochs: for epoch in 0..self.opts.epochs {
            let mut sum = 0.0;
            let batches = self.ds.epoch_batches(self.opts.batch_size, epoch, &order_rng)?;
            for (i, idx) in batches.iter().enumerate() {
                if step == total {
                    break 'epochs;
                }
                let lr = lr_at(self.opts.optimizer.schedule, step, total, self.opts.optimizer.lr)?;
                opt.zero_grad();
                let loss = step_loss(idx, step)?;
                let value = loss.item()? as f64;
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        phase: self.phase,
                        step,
                    });
                }
                loss.backward()?;
                opt.step(lr)?;
                log.0.push(LogEntry {
                    step,
                    phase: self.phase,
                    lr,
                    loss: value,
                });
                sum += value;
                step += 1;
                if i + 1 == batches.len() {
                    means.push(sum / batches.len() as f64);
                }
            }
        }
        Ok((log, means))
    }
}

fn trainable(model: &Model<f32>, groups: &[&str]) -> Vec<(String, Tensor<f32>)> {
    groups.iter().flat_map(|g| model.group(g)).collect()
}

/// Masked-reconstruction pretraining of encoder, attention module and decoder.
pub fn pretrain(ds: &VideoDataset, cfg: &ModelConfig, opts: &TrainOptions, rng: &Rng) -> Result<TrainOutcome> {
    ds.check_split(cfg.t_in, 0)?;
    let model = Model::<f32>::new(cfg, &rng.split(INIT_STREAM))?;
    let mut groups = vec![ENCODER, DECODER];
    if cfg.use_sm {
        groups.push(MASKING);
    }
    let mut opt = Adam::new(trainable(&model, &groups), opts.optimizer.clone())?;
    let mask_rng = rng.split(MASK_STREAM);
    let driver = Loop {
        ds,
        opts,
        rng,
        phase: "pretrain",
    };
    let (log, epoch_means) = driver.run(&mut opt, |idx, step| {
        let (x, _) = ds.batch(idx, cfg.t_in, 0)?;
        let x_hat = model.reconstruct(&x, &mask_rng.split(step as u64))?;
        loss_reconstruction(&x, &x_hat)
    })?;
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        log,
        epoch_means,
    })
}

/// Prediction training. With a pretrained init the encoder is frozen and
/// only translator and decoder update.
pub fn train(
    ds: &VideoDataset,
    cfg: &ModelConfig,
    opts: &TrainOptions,
    init: Init,
    rng: &Rng,
) -> Result<TrainOutcome> {
    ds.check_split(cfg.t_in, cfg.t_out)?;
    let model = Model::<f32>::new(cfg, &rng.split(INIT_STREAM))?;
    let frozen = match init {
        Init::Kaiming => false,
        Init::Pretrained(ck) => {
            ck.load_into(&model, &[ENCODER, DECODER, MASKING])?;
            true
        }
    };
    let groups: &[&str] = if frozen {
        &[TRANSLATOR, DECODER]
    } else {
        &[ENCODER, TRANSLATOR, DECODER]
    };
    let mut opt = Adam::new(trainable(&model, groups), opts.optimizer.clone())?;
    let driver = Loop {
        ds,
        opts,
        rng,
        phase: "train",
    };
    let (log, epoch_means) = driver.run(&mut opt, |idx, _| {
        let (x, y) = ds.batch(idx, cfg.t_in, cfg.t_out)?;
        let s = model.encoder.forward(&x, None)?;
        let s = if frozen { s.detach() } else { s };
        let y_hat = model.predict_from_features(&s)?;
        loss_prediction(&y, &y_hat)
    })?;
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        log,
        epoch_means,
    })
}

/// Rebuild a model from a checkpoint's tensors.
pub fn model_from_checkpoint(ck: &Checkpoint, cfg: &ModelConfig) -> Result<Model<f32>> {
    let model = Model::<f32>::new(cfg, &Rng::new(0, 0))?;
    let groups: &[&str] = match ck.phase {
        Phase::Trained => &[ENCODER, TRANSLATOR, DECODER],
        Phase::Pretrained => &[ENCODER, DECODER],
    };
    ck.load_into(&model, groups)?;
    Ok(model)
}

/// Predictions for clips `[N, T, C, H, W]` in chunks of `batch` clips.
pub fn predict(model: &Model<f32>, frames: &Tensor<f32>, batch: usize) -> Result<Tensor<f32>> {
    let n = frames.shape().first().copied().unwrap_or(0);
    let batch = batch.max(1);
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let len = batch.min(n - start);
        parts.push(model.predict(&frames.narrow(0, start, len)?)?);
        start += len;
    }
    if parts.is_empty() {
        return Err(Error::Data("no clips to predict".into()));
    }
    let refs: Vec<&Tensor<f32>> = parts.iter().collect();
    Ok(Tensor::concat(&refs, 0)?)
}

/// Predict every clip of `ds` and score against its target frames.
pub fn evaluate(model: &Model<f32>, ds: &VideoDataset, batch: usize) -> Result<(Tensor<f32>, MetricReport)> {
    let cfg = &model.cfg;
    let all: Vec<usize> = (0..ds.n_clips).collect();
    let (x, y) = ds.batch(&all, cfg.t_in, cfg.t_out)?;
    let y_hat = predict(model, &x, batch)?;
    let report = report_for(&y, &y_hat, false)?;
    Ok((y_hat, report))
}

/// Metrics of two `[B, T, C, H, W]` tensors.
pub fn report_for(y: &Tensor<f32>, y_hat: &Tensor<f32>, per_step: bool) -> Result<MetricReport> {
    let shape: [usize; 5] = y
        .shape()
        .try_into()
        .map_err(|_| Error::Data(format!("expected rank-5 frames, got {:?}", y.shape())))?;
    let (a, b) = (y.to_f64_vec(), y_hat.to_f64_vec());
    MetricReport::compute(&Frames::new(&a, shape)?, &Frames::new(&b, y_hat.shape().try_into().unwrap_or(shape))?, per_step)
}

/// Number of trainable scalars per group, for diagnostics.
pub fn parameter_counts(model: &Model<f32>) -> [(&'static str, usize); 4] {
    let count = |g| model.group(g).iter().map(|(_, t)| t.numel()).sum();
    [
        (ENCODER, count(ENCODER)),
        (TRANSLATOR, count(TRANSLATOR)),
        (DECODER, count(DECODER)),
        (MASKING, model.masking.num_parameters()),
    ]
}
