use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ar::{decode_sequence, ArModel, ArTrainer, CfgSchedule, DecodeOptions, MarkovSphereProcess};
use crate::directional::norm;
use crate::error::{Error, Result};
use crate::rng::{child_seed, stream};
use crate::svae::{DatasetManifest, SvaeTrainer, ToyDataset};
use crate::tensor::Checkpoint;

use super::config::ExperimentConfig;
use super::{write_json, write_text, NormStats, ReportMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub meta: ReportMeta,
    pub steps: u64,
    pub final_losses: BTreeMap<String, f64>,
    pub checkpoint_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSummary {
    pub meta: ReportMeta,
    pub n_sequences: usize,
    pub cfg_scale: f64,
    pub pre_norm: NormStats,
    pub refed_norm: NormStats,
    pub post_norm: NormStats,
    pub guard_count: usize,
}

fn sha(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

fn write_timing(out: &Path, seconds: f64) -> Result<()> {
    write_json(&out.join("timing.json"), &BTreeMap::from([("wall_seconds", seconds)]))
}

/// Generate the image dataset into `out/data`.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetManifest> {
    ToyDataset::generate(&cfg.data).save(&out.join("data"))
}

fn load_or_generate(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<ToyDataset> {
    match data_dir {
        Some(dir) => {
            let ds = ToyDataset::load(dir)?;
            if ds.spec.height != cfg.data.height || ds.spec.width != cfg.data.width {
                return Err(Error::Config(format!(
                    "dataset at {} is {}x{}, config expects {}x{}",
                    dir.display(),
                    ds.spec.height,
                    ds.spec.width,
                    cfg.data.height,
                    cfg.data.width
                )));
            }
            Ok(ds)
        }
        None => Ok(ToyDataset::generate(&cfg.data)),
    }
}

/// Train the SVAE for `svae.epochs` epochs, optionally resuming from a
/// training checkpoint.
pub fn cmd_train_svae(cfg: &ExperimentConfig, out: &Path, data_dir: Option<&Path>, resume: Option<&Path>) -> Result<TrainSummary> {
    let start = Instant::now();
    let data = load_or_generate(cfg, data_dir)?;
    let (h, w) = (data.spec.height, data.spec.width);
    let mut t = match resume {
        Some(p) => SvaeTrainer::restore(cfg.svae.clone(), h, w, &Checkpoint::read(p)?)?,
        None => SvaeTrainer::new(cfg.svae.clone(), h, w)?,
    };
    let log = t.train(&data, cfg.svae.epochs)?;
    let ck = t.checkpoint().to_bytes();
    write_text(&out.join("svae_log.csv"), &log.to_csv())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(out.join("svae.ckpt"), &ck).map_err(|e| Error::io(out.join("svae.ckpt"), e))?;
    let mut final_losses = BTreeMap::new();
    if let Some(e) = log.epochs.last() {
        final_losses.insert("recon".into(), e.recon);
        final_losses.insert("kl".into(), e.kl);
        final_losses.insert("total".into(), e.total);
    }
    let summary = TrainSummary {
        meta: ReportMeta::new("train-svae", cfg),
        steps: t.opt.step_count(),
        final_losses,
        checkpoint_sha256: sha(&ck),
    };
    write_json(&out.join("svae_summary.json"), &summary)?;
    write_timing(out, start.elapsed().as_secs_f64())?;
    Ok(summary)
}

/// Train the AR model on clean process sequences for `ar.steps` steps.
pub fn cmd_train_ar(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let start = Instant::now();
    let ar = cfg.process_ar()?;
    let process = MarkovSphereProcess::new(cfg.process.clone())?;
    let data = process.dataset(cfg.drift.n_train_sequences, (ar.grid_h, ar.grid_w), ar.radius(), child_seed(cfg.process.seed, "drift-train"))?;
    let mut t = match resume {
        Some(p) => ArTrainer::restore(ar.clone(), &Checkpoint::read(p)?)?,
        None => ArTrainer::new(ar.clone())?,
    };
    let log = t.train(&data, ar.steps)?;
    let ck = t.checkpoint().to_bytes();
    let csv: String = log.to_csv();
    write_text(&out.join("ar_log.csv"), &csv)?;
    std::fs::write(out.join("ar.ckpt"), &ck).map_err(|e| Error::io(out.join("ar.ckpt"), e))?;
    let mut final_losses = BTreeMap::new();
    if let Some(l) = log.final_loss() {
        final_losses.insert("rf".into(), l);
    }
    let summary = TrainSummary {
        meta: ReportMeta::new("train-ar", cfg),
        steps: t.opt.step_count(),
        final_losses,
        checkpoint_sha256: sha(&ck),
    };
    write_json(&out.join("ar_summary.json"), &summary)?;
    write_timing(out, start.elapsed().as_secs_f64())?;
    Ok(summary)
}

/// Decode `decode.n_sequences` sequences at scale `decode.s_max` from a
/// process-trained AR checkpoint.
pub fn cmd_decode(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<DecodeSummary> {
    let start = Instant::now();
    if !checkpoint.exists() {
        return Err(Error::MissingCheckpoint {
            variant: "ar".into(),
            path: checkpoint.to_path_buf(),
        });
    }
    let ar = cfg.process_ar()?;
    let model = ArModel::from_checkpoint(ar.clone(), &Checkpoint::read(checkpoint)?)?;
    let opts = DecodeOptions {
        n_steps: cfg.decode.n_steps,
        cfg: CfgSchedule::new(cfg.decode.schedule, cfg.decode.s_max)?,
        refeed: cfg.decode.refeed,
        use_cache: true,
    };
    let seed = child_seed(cfg.seeds().decode, "decode");
    let mut csv = String::from("sequence,class,step,pre_norm,post_norm,refed_norm,guard,cfg_scale\n");
    let mut tokens = vec![];
    let (mut pre, mut post, mut refed) = (vec![], vec![], vec![]);
    let mut guard_count = 0;
    for i in 0..cfg.decode.n_sequences {
        let class = cfg.decode.class_id.unwrap_or(i % ar.n_classes);
        let o = decode_sequence(&model, Some(class), &opts, &mut stream(seed, i as u64))?;
        for d in &o.diagnostics {
            csv.push_str(&format!(
                "{i},{class},{},{:e},{:e},{:e},{},{}\n",
                d.step.step, d.step.pre_norm, d.step.post_norm, d.refed_norm, d.step.guard_fired as u8, d.step.cfg_scale
            ));
            pre.push(d.step.pre_norm);
            post.push(d.step.post_norm);
            refed.push(d.refed_norm);
            guard_count += d.step.guard_fired as usize;
        }
        tokens.push(serde_json::json!({
            "class": class,
            "projected": o.projected,
            "raw_norms": o.raw.iter().map(|z| norm(z)).collect::<Vec<_>>(),
        }));
    }
    write_text(&out.join("decode_steps.csv"), &csv)?;
    write_json(&out.join("decoded_tokens.json"), &tokens)?;
    let summary = DecodeSummary {
        meta: ReportMeta::new("decode", cfg),
        n_sequences: cfg.decode.n_sequences,
        cfg_scale: cfg.decode.s_max,
        pre_norm: NormStats::of(pre),
        refed_norm: NormStats::of(refed),
        post_norm: NormStats::of(post),
        guard_count,
    };
    write_json(&out.join("decode_summary.json"), &summary)?;
    write_timing(out, start.elapsed().as_secs_f64())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::{ArConfig, ProcessSpec, RefeedMode};
    use crate::svae::DatasetSpec;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.data = DatasetSpec {
            n_items: 16,
            ..Default::default()
        };
        c.svae.latent_dim = 4;
        c.svae.hidden = 8;
        c.svae.layers = 2;
        c.svae.epochs = 2;
        c.svae.batch_size = 8;
        c.process = ProcessSpec {
            dim: 4,
            n_classes: 2,
            ..Default::default()
        };
        c.ar = ArConfig {
            grid_h: 1,
            grid_w: 3,
            width: 8,
            blocks: 1,
            heads: 2,
            head_hidden: 8,
            head_layers: 2,
            time_freqs: 2,
            cond_tokens: 2,
            batch_size: 4,
            steps: 6,
            ..Default::default()
        };
        c.drift.n_train_sequences = 8;
        c.decode.n_steps = 3;
        c.decode.n_sequences = 3;
        c.resolve().unwrap()
    }

    #[test]
    fn gen_data_is_deterministic_and_handles_empty_specs() {
        let c = small();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = cmd_gen_data(&c, a.path()).unwrap();
        let mb = cmd_gen_data(&c, b.path()).unwrap();
        assert_eq!(ma.sha256, mb.sha256);
        assert_eq!(ma.n_items, 16);
        assert_eq!(ToyDataset::load(&a.path().join("data")).unwrap().len(), 16);
        let mut empty = c.clone();
        empty.data.n_items = 0;
        let m = cmd_gen_data(&empty, a.path()).unwrap();
        assert_eq!(m.n_items, 0);
        assert!(ToyDataset::load(&a.path().join("data")).unwrap().is_empty());
    }

    #[test]
    fn svae_training_is_reproducible_and_resumable() {
        let c = small();
        let (a, b, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        cmd_gen_data(&c, a.path()).unwrap();
        let data = a.path().join("data");
        let sa = cmd_train_svae(&c, a.path(), Some(&data), None).unwrap();
        let sb = cmd_train_svae(&c, b.path(), None, None).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(std::fs::read(a.path().join("svae_summary.json")).unwrap(), std::fs::read(b.path().join("svae_summary.json")).unwrap());

        let mut half = c.clone();
        half.svae.epochs = 1;
        cmd_train_svae(&half, r.path(), None, None).unwrap();
        let resumed = cmd_train_svae(&c, r.path(), None, Some(&r.path().join("svae.ckpt"))).unwrap();
        assert_eq!(resumed.steps, sa.steps);
        assert_eq!(resumed.checkpoint_sha256, sa.checkpoint_sha256);
    }

    #[test]
    fn ar_training_resumes_exactly_and_decode_reads_its_checkpoint() {
        let c = small();
        let (a, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let full = cmd_train_ar(&c, a.path(), None).unwrap();
        assert_eq!(full.steps, 6);
        // the schedule horizon must stay at the full run's length
        let mut t = ArTrainer::new(c.process_ar().unwrap()).unwrap();
        let process = MarkovSphereProcess::new(c.process.clone()).unwrap();
        let ar = c.process_ar().unwrap();
        let data = process.dataset(8, (1, 3), ar.radius(), child_seed(c.process.seed, "drift-train")).unwrap();
        t.train(&data, 2).unwrap();
        t.checkpoint().write(&r.path().join("part.ckpt")).unwrap();
        let resumed = cmd_train_ar(&c, r.path(), Some(&r.path().join("part.ckpt"))).unwrap();
        assert_eq!(resumed.checkpoint_sha256, full.checkpoint_sha256);

        let mut d = c.clone();
        d.decode.refeed = RefeedMode::Projected;
        let s = cmd_decode(&d, &a.path().join("ar.ckpt"), a.path()).unwrap();
        let r_ = ar.radius();
        assert!((s.post_norm.mean - r_).abs() < 1e-9 && s.post_norm.std < 1e-9);
        assert!(a.path().join("decode_steps.csv").exists());
        assert!(matches!(cmd_decode(&d, &a.path().join("none.ckpt"), a.path()), Err(Error::MissingCheckpoint { .. })));
    }
}
