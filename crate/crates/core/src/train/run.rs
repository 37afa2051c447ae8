use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{batches, synthetic_blobs, BatchOptions, ImageBatch, ImageSet, Normalization, Split};
use crate::error::{Error, Result};
use crate::models::{checkpoint, Model};
use crate::nn::Mode;
use crate::profiler;
use crate::tensor::Tensor;
use crate::train::config::{DataSource, TrainConfig};
use crate::train::sgd::Sgd;

/// Train and test images with the normalization derived from the former.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: ImageSet,
    pub test: ImageSet,
    pub norm: Normalization,
}

impl TrainData {
    pub fn load(config: &TrainConfig) -> Result<Self> {
        match config.dataset {
            DataSource::Synthetic => {
                let train = synthetic_blobs(config.synthetic_train, config.seed);
                let test = synthetic_blobs(config.synthetic_test, config.seed.wrapping_add(1));
                let norm = Normalization::compute(&train)?;
                Ok(TrainData { train, test, norm })
            }
            DataSource::Cifar(dataset) => {
                let dir = config
                    .data_dir
                    .as_deref()
                    .ok_or_else(|| Error::Usage(format!("--data-dir is required for {dataset}")))?;
                let train = ImageSet::load(dir, dataset, Split::Train, config.train_limit)?;
                let test = ImageSet::load(dir, dataset, Split::Test, config.test_limit)?;
                let cache = match config.train_limit {
                    None => format!("{dataset}-normalization.txt"),
                    Some(n) => format!("{dataset}-normalization-{n}.txt"),
                };
                let norm = Normalization::cached(&dir.join(cache), &train)?;
                Ok(TrainData { train, test, norm })
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub errors: usize,
    pub count: usize,
}

/// One optimizer step on `batch`; returns the mean cross-entropy before
/// the update.
pub fn sgd_step(model: &mut Model<f32>, opt: &mut Sgd<f32>, batch: &ImageBatch, lr: f64, batch_index: usize) -> Result<StepStats> {
    let tape = Tape::new();
    let x = tape.constant(batch.images.clone());
    let (stats, grads) = {
        let out = model.forward(&tape, &x)?;
        let loss = out.logits.softmax_cross_entropy(&batch.labels)?;
        let loss_value = loss.value().item()? as f64;
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is {loss_value} at batch {batch_index}; max |logit| = {}",
                out.logits.value().max_abs()
            )));
        }
        let predicted = out.logits.value().argmax(1)?;
        let errors = predicted.iter().zip(&batch.labels).filter(|(p, l)| p != l).count();
        loss.backward()?;
        let grads: HashMap<_, Tensor<f32>> = out.bindings.iter().filter_map(|(id, v)| v.grad().map(|g| (*id, g))).collect();
        let stats = StepStats {
            loss: loss_value,
            errors,
            count: batch.labels.len(),
        };
        (stats, grads)
    };
    drop(tape);
    opt.step(model.store_mut(), &grads, lr)?;
    Ok(stats)
}

/// Top-1 error in percent, computed in evaluation mode.
pub fn evaluate(model: &mut Model<f32>, set: &ImageSet, norm: &Normalization, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty split".into()));
    }
    let previous = model.mode();
    model.set_mode(Mode::Eval);
    let result = (|| {
        let mut wrong = 0;
        let options = BatchOptions {
            batch_size,
            shuffle: None,
            augment: false,
        };
        for batch in batches(set, norm, options)? {
            let logits = model.predict(&batch.images)?;
            let predicted = logits.argmax(1)?;
            wrong += predicted.iter().zip(&batch.labels).filter(|(p, l)| p != l).count();
        }
        Ok(100.0 * wrong as f64 / set.len() as f64)
    })();
    model.set_mode(previous);
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub run: String,
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub test_error: f64,
    pub wall_time: f64,
    pub params: u64,
    pub macs: u64,
    pub bam_params: u64,
    pub config: HashMap<String, String>,
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub bam_params: u64,
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    pub fn final_test_error(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_error)
    }

    /// Parses a `runs/<name>.log` file.
    pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
        fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// A configured model with its optimizer and progress counters.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub opt: Sgd<f32>,
    pub epoch: usize,
    pub step: usize,
    cost: profiler::CostReport,
}

impl Trainer {
    pub fn new(config: TrainConfig, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let spec = config.spec(num_classes)?;
        let model = Model::build(&spec, config.seed)?;
        let cost = profiler::profile(&spec, [3, 32, 32])?;
        if cost.params() != model.param_count() as u64 {
            return Err(Error::Contract(format!(
                "analytic count {} differs from built model {}",
                cost.params(),
                model.param_count()
            )));
        }
        let opt = Sgd::new(config.momentum, config.weight_decay);
        Ok(Trainer {
            config,
            model,
            opt,
            epoch: 0,
            step: 0,
            cost,
        })
    }

    pub fn cost(&self) -> &profiler::CostReport {
        &self.cost
    }

    fn total_steps(&self, per_epoch: usize) -> usize {
        let full = self.config.epochs * per_epoch;
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn finished(&self, data: &TrainData) -> bool {
        let per_epoch = data.train.len().div_ceil(self.config.batch_size);
        self.epoch >= self.config.epochs || self.step >= self.total_steps(per_epoch)
    }

    /// Runs one epoch (or what remains of the step budget).
    pub fn train_epoch(&mut self, data: &TrainData) -> Result<EpochRecord> {
        let start = Instant::now();
        let per_epoch = data.train.len().div_ceil(self.config.batch_size);
        let total = self.total_steps(per_epoch);
        if data.train.is_empty() {
            return Err(Error::Contract("empty training split".into()));
        }
        self.model.set_mode(Mode::Train);
        let options = BatchOptions {
            batch_size: self.config.batch_size,
            shuffle: Some(epoch_seed(self.config.seed, self.epoch)),
            augment: self.config.augment,
        };
        let (mut loss, mut errors, mut seen) = (0.0, 0, 0);
        for (i, batch) in batches(&data.train, &data.norm, options)?.enumerate() {
            if self.step >= total {
                break;
            }
            let lr = self.config.lr * self.config.schedule.factor(self.step, total);
            let s = sgd_step(&mut self.model, &mut self.opt, &batch, lr, i)?;
            loss += s.loss * s.count as f64;
            errors += s.errors;
            seen += s.count;
            self.step += 1;
        }
        let test_error = if data.test.is_empty() {
            f64::NAN
        } else {
            evaluate(&mut self.model, &data.test, &data.norm, self.config.batch_size.max(64))?
        };
        let record = EpochRecord {
            run: self.config.name.clone(),
            epoch: self.epoch,
            steps: self.step,
            train_loss: if seen > 0 { loss / seen as f64 } else { f64::NAN },
            train_error: if seen > 0 { 100.0 * errors as f64 / seen as f64 } else { f64::NAN },
            test_error,
            wall_time: start.elapsed().as_secs_f64(),
            params: self.cost.params(),
            macs: self.cost.macs(),
            bam_params: self.cost.params_with_prefix("bam."),
            config: self.config.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        };
        self.epoch += 1;
        Ok(record)
    }

    /// Model, velocities and counters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut extra: Vec<(String, Tensor<f32>)> = self
            .opt
            .named_state(self.model.store())
            .into_iter()
            .map(|(n, v)| (format!("{}velocity.{n}", checkpoint::STATE_PREFIX), v))
            .collect();
        let counters = Tensor::new([2], vec![self.epoch as f32, self.step as f32])?;
        extra.push((format!("{}counters", checkpoint::STATE_PREFIX), counters));
        self.model.save_with_state(path, &extra)
    }

    /// Restores what [`Trainer::save`] wrote.
    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let state = self.model.load_with_state(path)?;
        let prefix = format!("{}velocity.", checkpoint::STATE_PREFIX);
        let mut velocity = Vec::new();
        let mut counters = None;
        for (name, t) in state {
            if let Some(param) = name.strip_prefix(&prefix) {
                velocity.push((param.to_string(), t));
            } else if name.ends_with("counters") {
                counters = Some(t);
            }
        }
        self.opt.load_named_state(self.model.store(), velocity)?;
        let c = counters.ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: "checkpoint has no training counters".into(),
        })?;
        self.epoch = c.data()[0] as usize;
        self.step = c.data()[1] as usize;
        Ok(())
    }
}

/// Appends one JSON line and flushes it.
pub fn append_record(path: &Path, record: &EpochRecord) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut line = serde_json::to_string(record).map_err(|e| Error::Contract(e.to_string()))?;
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn log_path(out: &Path, name: &str) -> PathBuf {
    out.join("runs").join(format!("{name}.log"))
}

/// Trains to completion, logging and checkpointing after every epoch. A
/// checkpoint that already exists at `config.checkpoint` is resumed.
pub fn train(config: &TrainConfig, data: &TrainData) -> Result<(Trainer, RunRecord)> {
    train_with(config, data, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(config: &TrainConfig, data: &TrainData, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<(Trainer, RunRecord)> {
    let mut trainer = Trainer::new(config.clone(), data.num_classes())?;
    if let Some(path) = config.checkpoint.as_deref().filter(|p| p.exists()) {
        trainer.resume(path)?;
    }
    let mut record = RunRecord {
        name: config.name.clone(),
        params: trainer.cost.params(),
        macs: trainer.cost.macs(),
        bam_params: trainer.cost.params_with_prefix("bam."),
        epochs: Vec::new(),
    };
    while !trainer.finished(data) {
        let epoch = trainer.train_epoch(data)?;
        if let Some(out) = &config.out {
            append_record(&log_path(out, &config.name), &epoch)?;
        }
        if let Some(path) = &config.checkpoint {
            trainer.save(path)?;
        }
        on_epoch(&epoch);
        record.epochs.push(epoch);
    }
    Ok((trainer, record))
}
