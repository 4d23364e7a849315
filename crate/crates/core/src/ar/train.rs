use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_seed, stream};
use crate::stats::Moments;
use crate::tensor::{AdamW, AdamWConfig, Checkpoint};

use super::head::RfNoise;
use super::sequence::TokenSequence;
use super::transformer::{ArConfig, ArModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArLogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ArTrainLog {
    pub rows: Vec<ArLogRow>,
}

impl ArTrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,wall_time\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:e},{:.3}\n", r.step, r.loss, r.wall_time));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

pub struct ArTrainer {
    pub model: ArModel,
    pub opt: AdamW,
    /// Steps averaged per log row.
    pub log_every: usize,
}

impl ArTrainer {
    pub fn new(config: ArConfig) -> Result<Self> {
        let model = ArModel::new(config)?;
        let opt = AdamW::new(
            AdamWConfig {
                lr: model.config.lr,
                weight_decay: model.config.weight_decay,
                max_grad_norm: Some(5.0),
                ..Default::default()
            },
            &model.store,
        );
        Ok(Self { model, opt, log_every: 50 })
    }

    fn check_data(&self, data: &[TokenSequence]) -> Result<()> {
        let cfg = &self.model.config;
        if data.is_empty() {
            return Err(Error::Config("cannot train on an empty token set".into()));
        }
        for s in data {
            if s.grid != (cfg.grid_h, cfg.grid_w) || s.dim() != cfg.token_dim {
                return Err(Error::Config(format!(
                    "sequence grid {:?} / dim {} does not match model grid ({}, {}) / dim {}",
                    s.grid,
                    s.dim(),
                    cfg.grid_h,
                    cfg.grid_w,
                    cfg.token_dim
                )));
            }
            self.model.class_row(s.class_id)?;
        }
        Ok(())
    }

    /// One teacher-forced step on `batch`; the class of each sequence is
    /// replaced by the null row with probability `class_dropout`.
    pub fn rf_train_step(&mut self, batch: &[&TokenSequence], rng: &mut crate::rng::Rng) -> Result<f64> {
        let cfg = self.model.config.clone();
        let mut pairs = Vec::with_capacity(batch.len());
        for s in batch {
            let mut row = self.model.class_row(s.class_id)?;
            if rng.random::<f64>() < cfg.class_dropout {
                row = self.model.null_class();
            }
            pairs.push((s.tokens.as_slice(), row));
        }
        let noise = RfNoise::draw(batch.len() * cfg.seq_len(), cfg.token_dim, rng);
        self.model.store.zero_grad();
        let (mut g, loss) = self.model.rf_loss_graph(&self.model.store, &pairs, &noise)?;
        let value = g.value(loss).item();
        let step = self.opt.step_count();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("rf loss={value}"),
            });
        }
        g.backward(loss, &mut self.model.store)?;
        self.model.fill_unused_grads();
        let gn = self.model.store.global_grad_norm();
        if !gn.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("gradient norm={gn} loss={value}"),
            });
        }
        self.opt.step(&mut self.model.store)?;
        Ok(value)
    }

    /// Train until `steps` optimizer steps have been taken in total. The
    /// learning-rate schedule spans `config.steps`, so stopping early and
    /// resuming reproduces an uninterrupted run.
    pub fn train(&mut self, data: &[TokenSequence], steps: usize) -> Result<ArTrainLog> {
        self.check_data(data)?;
        let seed = child_seed(self.model.config.seed, "ar-batch");
        let bs = self.model.config.batch_size;
        let start = Instant::now();
        let mut log = ArTrainLog::default();
        let mut acc = Moments::new();
        while (self.opt.step_count() as usize) < steps {
            let step = self.opt.step_count() as usize;
            self.opt.config.lr = self.model.config.lr_at(step, self.model.config.steps);
            let mut rng = stream(seed, step as u64);
            let batch: Vec<&TokenSequence> = (0..bs).map(|_| &data[rng.random_range(0..data.len())]).collect();
            acc.push(self.rf_train_step(&batch, &mut rng)?);
            if (step + 1) % self.log_every == 0 || step + 1 == steps {
                log.rows.push(ArLogRow {
                    step: step + 1,
                    loss: acc.mean(),
                    wall_time: start.elapsed().as_secs_f64(),
                });
                acc = Moments::new();
            }
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_training(&self.model.store, &self.opt)
    }

    pub fn restore(config: ArConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(config)?;
        ck.load_params(&mut t.model.store)?;
        ck.load_optimizer(&t.model.store, &mut t.opt)?;
        Ok(t)
    }
}

/// Train a fresh model for `config.steps` steps.
pub fn train_ar(config: &ArConfig, data: &[TokenSequence]) -> Result<(ArModel, ArTrainLog)> {
    let mut t = ArTrainer::new(config.clone())?;
    let log = t.train(data, config.steps)?;
    Ok((t.model, log))
}
