use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_seed, stream};
use crate::stats::Moments;
use crate::tensor::{AdamW, AdamWConfig, Checkpoint};

use super::data::ToyDataset;
use super::model::{SvaeConfig, SvaeModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,recon,kl,total,wall_time\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:e},{:e},{:e},{:.3}\n", e.epoch, e.recon, e.kl, e.total, e.wall_time));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub struct SvaeTrainer {
    pub model: SvaeModel,
    pub opt: AdamW,
}

impl SvaeTrainer {
    pub fn new(config: SvaeConfig, height: usize, width: usize) -> Result<Self> {
        let model = SvaeModel::new(config, height, width)?;
        let opt = AdamW::new(Self::adam_config(&model.config), &model.store);
        Ok(Self { model, opt })
    }

    fn adam_config(c: &SvaeConfig) -> AdamWConfig {
        AdamWConfig {
            lr: c.lr,
            weight_decay: c.weight_decay,
            max_grad_norm: Some(5.0),
            ..Default::default()
        }
    }

    pub fn steps_per_epoch(&self, n_items: usize) -> usize {
        n_items.div_ceil(self.model.config.batch_size).max(1)
    }

    /// Train until `epochs` epochs have been completed in total, resuming from
    /// the optimizer's step counter.
    pub fn train(&mut self, data: &ToyDataset, epochs: usize) -> Result<TrainLog> {
        if data.is_empty() {
            return Err(Error::Config("cannot train on an empty dataset".into()));
        }
        let cfg = self.model.config.clone();
        let per_epoch = self.steps_per_epoch(data.len());
        let start = Instant::now();
        let mut log = TrainLog::default();
        let mut epoch_stats = (Moments::new(), Moments::new(), Moments::new());
        while (self.opt.step_count() as usize) < epochs * per_epoch {
            let step = self.opt.step_count() as usize;
            let epoch = step / per_epoch;
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut stream(child_seed(cfg.data_seed, "svae-order"), epoch as u64));
            let k = step % per_epoch;
            let idx = &order[k * cfg.batch_size..((k + 1) * cfg.batch_size).min(order.len())];
            let images: Vec<&[f64]> = idx.iter().map(|&i| data.items[i].as_slice()).collect();
            let x = self.model.batch_tokens(&images);
            let mut rng = stream(child_seed(cfg.seed, "svae-noise"), step as u64);
            let noise = self.model.batch_noise(x.rows(), &mut rng);
            self.model.store.zero_grad();
            let mut lg = self.model.loss_graph(&self.model.store, &x, &noise)?;
            let (loss, recon, kl) = (lg.graph.value(lg.loss).item(), lg.graph.value(lg.recon).item(), lg.graph.value(lg.kl).item());
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step: step as u64,
                    detail: format!("recon={recon} kl={kl} total={loss}"),
                });
            }
            lg.graph.backward(lg.loss, &mut self.model.store)?;
            if !self.model.store.global_grad_norm().is_finite() {
                return Err(Error::NonFinite {
                    step: step as u64,
                    detail: format!("gradient; recon={recon} kl={kl} total={loss}"),
                });
            }
            self.opt.step(&mut self.model.store)?;
            epoch_stats.0.push(recon);
            epoch_stats.1.push(kl);
            epoch_stats.2.push(loss);
            if k + 1 == per_epoch {
                log.epochs.push(EpochLog {
                    epoch,
                    recon: epoch_stats.0.mean(),
                    kl: epoch_stats.1.mean(),
                    total: epoch_stats.2.mean(),
                    wall_time: start.elapsed().as_secs_f64(),
                });
                epoch_stats = (Moments::new(), Moments::new(), Moments::new());
            }
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_training(&self.model.store, &self.opt)
    }

    pub fn restore(config: SvaeConfig, height: usize, width: usize, ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(config, height, width)?;
        ck.load_params(&mut t.model.store)?;
        ck.load_optimizer(&t.model.store, &mut t.opt)?;
        Ok(t)
    }
}

/// Train a fresh model for `config.epochs` epochs.
pub fn train_svae(config: &SvaeConfig, data: &ToyDataset) -> Result<(SvaeModel, TrainLog)> {
    let mut t = SvaeTrainer::new(config.clone(), data.spec.height, data.spec.width)?;
    let log = t.train(data, config.epochs)?;
    Ok((t.model, log))
}
