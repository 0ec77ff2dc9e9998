//! Teacher-forced training with fixed-pivot validation and early stopping.

mod checkpoint;

pub use checkpoint::{Checkpoint, TrainingMetadata, FORMAT_VERSION, MAGIC};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryVocab, Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::model::{Model, Parameters};
use crate::numeric::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::sampler::{last_session_sample, make_epoch, Batch, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Pivots drawn per customer per epoch.
    pub samples_per_customer: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            clip_norm: 0.5,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            samples_per_customer: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning_rate and clip_norm must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.samples_per_customer == 0 {
            return bad("batch_size and samples_per_customer must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// One line of the JSONL run log. Epoch 0 describes the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub wall_time: f64,
}

pub fn write_run_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for entry in log {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Source of the per-epoch early-stopping signal.
pub trait Validator {
    fn validation_loss(&mut self, model: &Model, params: &Parameters) -> Result<f64>;
}

/// Eval-mode loss on each validation customer's last session, with pivots
/// fixed once up front.
#[derive(Debug, Clone)]
pub struct FixedValidation {
    batches: Vec<Batch>,
}

impl FixedValidation {
    pub fn new(customers: &Dataset, cfg: &SamplerConfig, batch_size: usize) -> Result<Self> {
        let samples: Vec<_> = customers
            .customers
            .iter()
            .filter(|h| h.len() >= 2)
            .map(|h| last_session_sample(h, cfg, &customers.vocab))
            .collect::<Result<_>>()?;
        if samples.is_empty() {
            return Err(Error::InvalidConfig("no validation customer has two sessions".into()));
        }
        let batches = samples.chunks(batch_size.max(1)).map(|c| Batch::new(c.to_vec())).collect();
        Ok(Self { batches })
    }
}

impl Validator for FixedValidation {
    fn validation_loss(&mut self, model: &Model, params: &Parameters) -> Result<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for b in &self.batches {
            let t = b.target_tokens(model.pad());
            sum += model.batch_loss(params, b)? * t as f64;
            n += t;
        }
        Ok(sum / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records an epoch's validation loss; true when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.log.iter().rev().find_map(|e| e.train_loss)
    }
}

/// Forward, backward, clip and Adam update on one batch. Returns the loss
/// before the update.
pub fn train_step<R: Rng>(
    model: &Model,
    params: &mut Parameters,
    state: &mut AdamState,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: Option<&mut R>,
) -> Result<f64> {
    let (loss, mut grads) = model.batch_gradients(params, batch, rng)?;
    clip_global_norm(&mut grads, cfg.clip_norm);
    adam_step(&mut params.tensors, &grads, state, &cfg.adam())?;
    Ok(loss)
}

/// Runs the training loop from freshly initialized parameters.
pub fn fit(
    model: &Model,
    cfg: &TrainConfig,
    train: &Dataset,
    validator: &mut dyn Validator,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.vocab.size() != model.config().vocab_size {
        return Err(Error::InvalidConfig(format!(
            "model vocab_size {} but dataset vocabulary has {} tokens",
            model.config().vocab_size,
            train.vocab.size()
        )));
    }
    let sampler = model.config().sampler();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.init_params(master.random());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut state = AdamState::new(&params.tensors);
    let start = Instant::now();

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let val0 = validator.validation_loss(model, &params)?;
    stopper.observe(0, val0);
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: None,
        val_loss: val0,
        wall_time: start.elapsed().as_secs_f64(),
    }];
    on_epoch(&log[0]);

    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let batches = make_epoch(train, cfg.samples_per_customer, &sampler, cfg.batch_size, master.random())?;
        let (mut sum, mut tokens) = (0.0, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let loss = train_step(model, &mut params, &mut state, batch, cfg, Some(&mut dropout_rng))?;
            if !loss.is_finite() || !params.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            let t = batch.target_tokens(model.pad());
            sum += loss * t as f64;
            tokens += t;
        }
        let val = validator.validation_loss(model, &params)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches.len(),
            });
        }
        if stopper.observe(epoch, val) {
            best = params.clone();
        }
        let entry = EpochLog {
            epoch,
            train_loss: (tokens > 0).then(|| sum / tokens as f64),
            val_loss: val,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {val:.4}",
            entry.train_loss.unwrap_or(f64::NAN)
        );
        on_epoch(&entry);
        log.push(entry);
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: model.config().clone(),
            vocab: train.vocab.clone(),
            params: best,
            meta: TrainingMetadata {
                epoch: stopper.best_epoch(),
                best_val_loss: stopper.best_loss(),
                seed: cfg.seed,
                epochs_run: log.len() - 1,
            },
        },
        log,
        stopped_early,
    })
}

/// Trains on `split.train`, validating on `split.validation` (or on the
/// training customers when there are no validation customers), and saves
/// the best checkpoint to `out_path` if given.
pub fn train(
    model: &Model,
    cfg: &TrainConfig,
    split: &SplitDataset,
    out_path: Option<&Path>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if split.train.customers.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let sampler = model.config().sampler();
    let val_source = if split.validation.customers.iter().any(|h| h.len() >= 2) {
        &split.validation
    } else {
        log::warn!("no usable validation customers; validating on training customers");
        &split.train
    };
    let mut validator = FixedValidation::new(val_source, &sampler, cfg.batch_size)?;
    let outcome = fit(model, cfg, &split.train, &mut validator, on_epoch)?;
    if let Some(p) = out_path {
        outcome.checkpoint.save(p)?;
    }
    Ok(outcome)
}

/// Vocabulary check shared by everything that consumes a checkpoint.
pub fn check_vocab(ckpt: &Checkpoint, vocab: &CategoryVocab) -> Result<()> {
    if ckpt.vocab.names() != vocab.names() {
        return Err(Error::InvalidConfig(
            "checkpoint vocabulary differs from the dataset vocabulary".into(),
        ));
    }
    Ok(())
}
