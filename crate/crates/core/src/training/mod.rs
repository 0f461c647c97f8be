//! Objective, schedules, optimisation loop and checkpoints.

pub mod batch;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod schedule;

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{augment, draw_key_offset, make_batches, step_rng, usable};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState, CHECKPOINT_VERSION};
pub use loss::{elbo_loss, Elbo, LossBreakdown, LossMode};
pub use optim::{Adam, AdamConfig};
pub use schedule::{step_schedule, ScheduleConfig, ScheduleState};

use crate::error::{Error, Result};
use crate::instrument::InstrumentTable;
use crate::nn::{Model, ModelConfig};
use crate::score::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Transpose every batch by a random key offset.
    pub augment: bool,
    pub double_precision: bool,
    pub validation_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 64,
            seed: 0,
            augment: true,
            double_precision: false,
            validation_batch_size: 64,
        }
    }
}

impl TrainConfig {
    /// Small batches and narrow recurrent layers for CPU runs.
    pub fn desk() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            batch_size: 8,
            validation_batch_size: 16,
            ..TrainConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn dtype(&self) -> DType {
        if self.double_precision {
            DType::F64
        } else {
            DType::F32
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub beta_function: f64,
    pub beta_other: f64,
    pub tf_rate: f64,
    pub train: LossBreakdown,
    pub validation: Option<LossBreakdown>,
    pub validation_pitch_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    /// Teacher-forced per-note pitch accuracy.
    pub pitch_accuracy: f64,
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub table: InstrumentTable,
    pub optimizer: Adam,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, table: &InstrumentTable) -> Result<Self> {
        let model = Model::new(cfg.model.clone(), table.len(), cfg.dtype(), cfg.seed)?;
        Ok(Trainer {
            model,
            optimizer: Adam::new(cfg.adam),
            cfg,
            table: table.clone(),
            state: TrainState {
                next_epoch: 0,
                best_validation: None,
            },
        })
    }

    /// Wraps an existing model, e.g. for fine-tuning a loaded checkpoint.
    pub fn with_model(model: Model, mut cfg: TrainConfig, table: &InstrumentTable) -> Self {
        cfg.model = model.config.clone();
        Trainer {
            model,
            optimizer: Adam::new(cfg.adam),
            cfg,
            table: table.clone(),
            state: TrainState {
                next_epoch: 0,
                best_validation: None,
            },
        }
    }

    pub fn resume(path: &Path, table: &InstrumentTable) -> Result<Self> {
        let ck = load_checkpoint(path, table)?;
        Ok(Trainer {
            optimizer: ck.optimizer.unwrap_or_else(|| Adam::new(ck.train.adam)),
            model: ck.model,
            cfg: ck.train,
            table: table.clone(),
            state: ck.state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.model, &self.cfg, &self.table, &self.state, Some(&self.optimizer))
    }

    pub fn schedule(&self, epoch: usize) -> ScheduleState {
        step_schedule(&self.cfg.schedule, epoch)
    }

    /// Loss of training step `step` of `epoch`, without updating anything.
    pub fn step_loss(&self, segments: &[Segment], epoch: usize, step: usize) -> Result<Elbo> {
        let batches = make_batches(segments, self.cfg.batch_size, self.cfg.seed, epoch);
        let idx = batches
            .get(step)
            .ok_or_else(|| Error::Config(format!("epoch {epoch} has only {} steps", batches.len())))?;
        self.batch_loss(segments, idx, epoch, step)
    }

    fn batch_loss(&self, segments: &[Segment], idx: &[usize], epoch: usize, step: usize) -> Result<Elbo> {
        let mut rng = step_rng(self.cfg.seed, epoch, step);
        let batch: Vec<Segment> = idx.iter().map(|&i| segments[i].clone()).collect();
        let batch = if self.cfg.augment {
            augment(&batch, draw_key_offset(&mut rng))?
        } else {
            batch
        };
        elbo_loss(&self.model, &batch, &self.schedule(epoch), LossMode::TRAIN, &mut rng)
    }

    /// Loss of the first step of the next epoch to run.
    pub fn next_step_loss(&self, segments: &[Segment]) -> Result<f64> {
        Ok(self.step_loss(segments, self.state.next_epoch, 0)?.breakdown.total)
    }

    /// Runs one epoch over `segments` (already filtered with [`usable`]) and
    /// returns the mean training loss.
    pub fn run_epoch(&mut self, segments: &[Segment]) -> Result<LossBreakdown> {
        if segments.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let epoch = self.state.next_epoch;
        let sched = self.schedule(epoch);
        let batches = make_batches(segments, self.cfg.batch_size, self.cfg.seed, epoch);
        let mut mean = LossBreakdown::default();
        let mut seen = 0usize;
        for (step, idx) in batches.iter().enumerate() {
            let elbo = self.batch_loss(segments, idx, epoch, step)?;
            let grads = elbo.total.backward()?;
            self.optimizer.step(&self.model.params, &grads, sched.lr)?;
            mean.add_scaled(&elbo.breakdown, idx.len() as f64);
            seen += idx.len();
            log::debug!("epoch {epoch} step {step} loss {:.4}", elbo.breakdown.total);
        }
        let mut out = LossBreakdown::default();
        out.add_scaled(&mean, 1.0 / seen as f64);
        self.state.next_epoch += 1;
        Ok(out)
    }

    pub fn evaluate(&self, segments: &[Segment]) -> Result<Evaluation> {
        evaluate(&self.model, segments, &self.cfg, self.cfg.validation_batch_size)
    }

    /// Trains until the configured epoch count. With `out_dir`, writes
    /// `train_log.jsonl`, `last.ckpt` after every epoch and `best.ckpt`
    /// whenever the validation loss improves.
    pub fn fit(
        &mut self,
        train: &[Segment],
        validation: &[Segment],
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        let train = usable(train);
        let validation = usable(validation);
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let mut log_file = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join("train_log.jsonl");
                let append = self.state.next_epoch > 0;
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(append)
                    .truncate(!append)
                    .open(&p)
                    .map_err(|e| Error::io(&p, e))?;
                Some((p, f))
            }
            None => None,
        };
        let mut records = Vec::new();
        while self.state.next_epoch < self.cfg.schedule.total_epochs {
            let epoch = self.state.next_epoch;
            let sched = self.schedule(epoch);
            let train_loss = self.run_epoch(&train)?;
            let eval = if validation.is_empty() {
                None
            } else {
                Some(self.evaluate(&validation)?)
            };
            let rec = EpochRecord {
                epoch,
                lr: sched.lr,
                beta_function: sched.beta_function,
                beta_other: sched.beta_other,
                tf_rate: sched.tf_rate,
                train: train_loss,
                validation: eval.as_ref().map(|e| e.loss),
                validation_pitch_accuracy: eval.as_ref().map(|e| e.pitch_accuracy),
            };
            log::info!(
                "epoch {epoch}: train {:.4} val {}",
                train_loss.total,
                rec.validation.map(|v| format!("{:.4}", v.total)).unwrap_or_else(|| "-".into())
            );
            let score = rec.validation.map(|v| v.total).unwrap_or(train_loss.total);
            let improved = self.state.best_validation.is_none_or(|b| score < b);
            if improved {
                self.state.best_validation = Some(score);
            }
            if let Some((p, f)) = log_file.as_mut() {
                let line = serde_json::to_string(&rec)?;
                writeln!(f, "{line}").map_err(|e| Error::io(p.clone(), e))?;
            }
            if let Some(dir) = out_dir {
                self.save(&dir.join("last.ckpt"))?;
                if improved {
                    self.save(&dir.join("best.ckpt"))?;
                }
            }
            on_epoch(&rec);
            records.push(rec);
        }
        Ok(records)
    }
}

/// Evaluation-mode loss (posterior means, full teacher forcing, final KL
/// weights) and teacher-forced pitch accuracy.
pub fn evaluate(model: &Model, segments: &[Segment], cfg: &TrainConfig, batch_size: usize) -> Result<Evaluation> {
    let segments = usable(segments);
    if segments.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let sched = ScheduleState::evaluation(&cfg.schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sum = LossBreakdown::default();
    let (mut hits, mut notes) = (0usize, 0usize);
    for idx in make_batches(&segments, batch_size, 0, 0) {
        let batch: Vec<Segment> = idx.iter().map(|&i| segments[i].clone()).collect();
        let e = elbo_loss(model, &batch, &sched, LossMode::EVAL, &mut rng)?;
        sum.add_scaled(&e.breakdown, batch.len() as f64);
        if let Some((h, n)) = e.pitch_hits {
            hits += h;
            notes += n;
        }
    }
    let mut loss = LossBreakdown::default();
    loss.add_scaled(&sum, 1.0 / segments.len() as f64);
    Ok(Evaluation {
        loss,
        pitch_accuracy: if notes == 0 { 1.0 } else { hits as f64 / notes as f64 },
    })
}

/// Default artifact locations inside a training output directory.
pub fn best_checkpoint(dir: &Path) -> PathBuf {
    dir.join("best.ckpt")
}
