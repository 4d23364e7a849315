//! Norm drift of decoded tokens under guidance, per token representation.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ar::{decode_sequence, train_ar, ArConfig, ArModel, CfgSchedule, DecodeOptions, MarkovSphereProcess, TokenSequence};
use crate::directional::norm;
use crate::error::{Error, Result};
use crate::geometry::{project_to_sphere, DEFAULT_EPS};
use crate::rng::{child_seed, stream};
use crate::stats::{sliced_wasserstein, Moments};
use crate::tensor::Checkpoint;

use super::config::{DriftVariant, ExperimentConfig};
use super::{run_jobs, write_json, write_text, NormStats, ReportMeta};

/// Token representation a model is trained on. Two variants share the
/// Gaussian model and differ only at decode time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TokenKind {
    Sphere,
    Gaussian,
    GaussianProjected,
}

fn token_kind(v: DriftVariant) -> TokenKind {
    match v {
        DriftVariant::Spherical => TokenKind::Sphere,
        DriftVariant::GaussianRaw | DriftVariant::DecoderNorm => TokenKind::Gaussian,
        DriftVariant::DecoderArNorm => TokenKind::GaussianProjected,
    }
}

/// Training sequences for `variant`: clean process tokens, or the same tokens
/// with per-dimension Gaussian noise `σ_j = σ·(0.5 + j/(d−1))` (optionally
/// projected back to radius R).
pub fn drift_training_tokens(cfg: &ExperimentConfig, variant: DriftVariant) -> Result<Vec<TokenSequence>> {
    let process = MarkovSphereProcess::new(cfg.process.clone())?;
    let ar = cfg.process_ar()?;
    let radius = ar.radius();
    let clean = process.dataset(cfg.drift.n_train_sequences, (ar.grid_h, ar.grid_w), radius, child_seed(cfg.process.seed, "drift-train"))?;
    let kind = token_kind(variant);
    if kind == TokenKind::Sphere {
        return Ok(clean);
    }
    let d = ar.token_dim;
    let sigma: Vec<f64> = (0..d)
        .map(|j| cfg.drift.gaussian_sigma * (0.5 + j as f64 / (d - 1).max(1) as f64))
        .collect();
    let noise_seed = child_seed(cfg.process.seed, "gaussian-noise");
    clean
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream(noise_seed, i as u64);
            let tokens: Vec<Vec<f64>> = s
                .tokens
                .iter()
                .map(|t| {
                    let noisy: Vec<f64> = t.iter().zip(&sigma).map(|(x, sj)| x + sj * rng.sample::<f64, _>(StandardNormal)).collect();
                    match kind {
                        TokenKind::GaussianProjected => project_to_sphere(&noisy, radius, DEFAULT_EPS).into_vec(),
                        _ => noisy,
                    }
                })
                .collect();
            let r = if kind == TokenKind::GaussianProjected { radius } else { 0.0 };
            TokenSequence::new(tokens, s.grid, r, s.class_id)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub variant: DriftVariant,
    pub scale: f64,
    pub n_tokens: usize,
    /// Euler endpoint norms before projection.
    pub pre_norm: NormStats,
    /// Norms of the vectors fed back to the AR model.
    pub refed_norm: NormStats,
    /// Norms of the tokens handed to the decoder.
    pub output_norm: NormStats,
    /// Pre-projection norm std at each sequence position.
    pub pre_norm_std_by_position: Vec<f64>,
    pub guard_count: usize,
    pub sliced_wasserstein: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftChecks {
    /// Raw-refeed Gaussian variants: pre-projection norm std is positive at
    /// every scale and larger at the top scale than at scale 1.
    pub raw_drift_positive: bool,
    pub raw_drift_grows_with_scale: bool,
    pub spherical_output_std_max: f64,
    pub spherical_zero_drift: bool,
    pub spherical_sw_at_max_scale: f64,
    pub best_gaussian_sw_at_max_scale: f64,
    pub spherical_sw_not_worse: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub meta: ReportMeta,
    pub scales: Vec<f64>,
    pub rows: Vec<DriftRow>,
    pub checks: Option<DriftChecks>,
    pub note: String,
}

pub struct DriftOutputs {
    pub report: DriftReport,
    /// One line per decoded token.
    pub steps_csv: String,
    /// Models trained in-process, keyed by variant.
    pub trained: Vec<(DriftVariant, Checkpoint)>,
    pub timing: BTreeMap<String, f64>,
}

impl DriftOutputs {
    pub fn write(&self, out: &Path) -> Result<()> {
        write_json(&out.join("drift_report.json"), &self.report)?;
        write_text(&out.join("drift_steps.csv"), &self.steps_csv)?;
        write_json(&out.join("timing.json"), &self.timing)?;
        for (v, ck) in &self.trained {
            let dir = out.join("checkpoints");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            ck.write(&dir.join(format!("{}.ckpt", v.name())))?;
        }
        Ok(())
    }
}

const CSV_HEADER: &str = "variant,scale,sequence,step,pre_norm,refed_norm,output_norm,guard,cfg_scale\n";

struct Decoded {
    row: DriftRow,
    csv: String,
}

fn decode_variant(
    cfg: &ExperimentConfig,
    model: &ArModel,
    variant: DriftVariant,
    scale: f64,
    gt_tokens: &[Vec<f64>],
) -> Result<Decoded> {
    let ar = &model.config;
    let opts = DecodeOptions {
        n_steps: cfg.decode.n_steps,
        cfg: CfgSchedule::new(cfg.decode.schedule, scale)?,
        refeed: variant.refeed(),
        use_cache: true,
    };
    let seed = child_seed(cfg.seeds().decode, "drift-decode");
    let l = ar.seq_len();
    let (mut pre, mut refed, mut output) = (vec![], vec![], vec![]);
    let mut by_pos = vec![Moments::new(); l];
    let mut tokens = vec![];
    let mut guard_count = 0;
    let mut csv = String::new();
    for i in 0..cfg.decode.n_sequences {
        let class = cfg.decode.class_id.unwrap_or(i % ar.n_classes);
        let o = decode_sequence(model, Some(class), &opts, &mut stream(seed, i as u64))?;
        for (k, d) in o.diagnostics.iter().enumerate() {
            let tok = if variant.projects_output() { &o.projected[k] } else { &o.raw[k] };
            let on = norm(tok);
            pre.push(d.step.pre_norm);
            refed.push(d.refed_norm);
            output.push(on);
            by_pos[k].push(d.step.pre_norm);
            guard_count += d.step.guard_fired as usize;
            tokens.push(tok.clone());
            csv.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{},{}\n",
                variant.name(),
                scale,
                i,
                k,
                d.step.pre_norm,
                d.refed_norm,
                on,
                d.step.guard_fired as u8,
                d.step.cfg_scale
            ));
        }
    }
    let sw = if tokens.is_empty() {
        f64::NAN
    } else {
        let mut rng = stream(child_seed(cfg.seeds().decode, "drift-sw"), 0);
        sliced_wasserstein(&tokens, gt_tokens, cfg.drift.sw_projections, &mut rng)
    };
    Ok(Decoded {
        row: DriftRow {
            variant,
            scale,
            n_tokens: tokens.len(),
            pre_norm: NormStats::of(pre),
            refed_norm: NormStats::of(refed),
            output_norm: NormStats::of(output),
            pre_norm_std_by_position: by_pos.iter().map(|m| m.population_variance().sqrt()).collect(),
            guard_count,
            sliced_wasserstein: sw,
        },
        csv,
    })
}

fn evaluate(rows: &[DriftRow], scales: &[f64]) -> Option<DriftChecks> {
    let (s_lo, s_hi) = (*scales.first()?, *scales.last()?);
    let at = |v: DriftVariant, s: f64| rows.iter().find(|r| r.variant == v && r.scale == s);
    let raw: Vec<DriftVariant> = [DriftVariant::GaussianRaw, DriftVariant::DecoderNorm]
        .into_iter()
        .filter(|v| rows.iter().any(|r| r.variant == *v))
        .collect();
    let sph: Vec<&DriftRow> = rows.iter().filter(|r| r.variant == DriftVariant::Spherical).collect();
    if raw.is_empty() || sph.is_empty() {
        return None;
    }
    let raw_drift_positive = raw.iter().all(|&v| rows.iter().filter(|r| r.variant == v).all(|r| r.pre_norm.std > 0.0));
    let raw_drift_grows_with_scale = s_hi > s_lo && raw.iter().all(|&v| matches!((at(v, s_lo), at(v, s_hi)), (Some(a), Some(b)) if b.pre_norm.std > a.pre_norm.std));
    let spherical_output_std_max = sph.iter().map(|r| r.output_norm.std.max(r.refed_norm.std)).fold(0.0, f64::max);
    let spherical_sw_at_max_scale = at(DriftVariant::Spherical, s_hi)?.sliced_wasserstein;
    let best_gaussian_sw_at_max_scale = rows
        .iter()
        .filter(|r| r.variant.is_gaussian() && r.scale == s_hi)
        .map(|r| r.sliced_wasserstein)
        .fold(f64::INFINITY, f64::min);
    let spherical_zero_drift = spherical_output_std_max <= 1e-9;
    let spherical_sw_not_worse = spherical_sw_at_max_scale <= best_gaussian_sw_at_max_scale;
    Some(DriftChecks {
        raw_drift_positive,
        raw_drift_grows_with_scale,
        spherical_output_std_max,
        spherical_zero_drift,
        spherical_sw_at_max_scale,
        best_gaussian_sw_at_max_scale,
        spherical_sw_not_worse,
        passed: raw_drift_positive && raw_drift_grows_with_scale && spherical_zero_drift && spherical_sw_not_worse,
    })
}

fn obtain_models(cfg: &ExperimentConfig, ar: &ArConfig, timing: &mut BTreeMap<String, f64>) -> Result<(BTreeMap<DriftVariant, ArModel>, Vec<(DriftVariant, Checkpoint)>)> {
    let variants = &cfg.drift.variants;
    if let Some(dir) = &cfg.drift.checkpoints {
        let mut models = BTreeMap::new();
        for &v in variants {
            let path = dir.join(format!("{}.ckpt", v.name()));
            if !path.exists() {
                return Err(Error::MissingCheckpoint {
                    variant: v.name().to_string(),
                    path,
                });
            }
            models.insert(v, ArModel::from_checkpoint(ar.clone(), &Checkpoint::read(&path)?)?);
        }
        return Ok((models, vec![]));
    }
    let mut kinds: Vec<(TokenKind, DriftVariant)> = vec![];
    for &v in variants {
        if !kinds.iter().any(|(k, _)| *k == token_kind(v)) {
            kinds.push((token_kind(v), v));
        }
    }
    let start = Instant::now();
    let trained = run_jobs(kinds.len(), cfg.threads, |i| -> Result<ArModel> {
        let data = drift_training_tokens(cfg, kinds[i].1)?;
        Ok(train_ar(ar, &data)?.0)
    });
    timing.insert("train_seconds".into(), start.elapsed().as_secs_f64());
    let mut by_kind = BTreeMap::new();
    for ((k, _), m) in kinds.iter().zip(trained) {
        by_kind.insert(*k, m?);
    }
    let mut models = BTreeMap::new();
    let mut cks = vec![];
    for &v in variants {
        let m = by_kind[&token_kind(v)].clone();
        cks.push((v, Checkpoint::from_params(&m.store)));
        models.insert(v, m);
    }
    Ok((models, cks))
}

/// Train (or load) one model per requested variant, decode a guidance sweep
/// and compare decoded token marginals with fresh process samples.
pub fn run_drift(cfg: &ExperimentConfig) -> Result<DriftOutputs> {
    let ar = cfg.process_ar()?;
    let mut timing = BTreeMap::new();
    let (models, trained) = obtain_models(cfg, &ar, &mut timing)?;
    let process = MarkovSphereProcess::new(cfg.process.clone())?;
    let gt = process.dataset(cfg.drift.n_gt_sequences.max(1), (ar.grid_h, ar.grid_w), ar.radius(), child_seed(cfg.process.seed, "drift-gt"))?;
    let gt_tokens: Vec<Vec<f64>> = gt.into_iter().flat_map(|s| s.tokens).collect();
    let scales = cfg.decode.scales();
    let jobs: Vec<(DriftVariant, f64)> = cfg.drift.variants.iter().flat_map(|&v| scales.iter().map(move |&s| (v, s))).collect();
    let start = Instant::now();
    let decoded = run_jobs(jobs.len(), cfg.threads, |i| decode_variant(cfg, &models[&jobs[i].0], jobs[i].0, jobs[i].1, &gt_tokens));
    timing.insert("decode_seconds".into(), start.elapsed().as_secs_f64());
    let mut rows = vec![];
    let mut steps_csv = String::from(CSV_HEADER);
    for d in decoded {
        let d = d?;
        rows.push(d.row);
        steps_csv.push_str(&d.csv);
    }
    let checks = evaluate(&rows, &scales);
    Ok(DriftOutputs {
        report: DriftReport {
            meta: ReportMeta::new("drift", cfg),
            scales,
            rows,
            checks,
            note: "sliced Wasserstein distance on token marginals stands in for image-level fidelity metrics; orderings are meaningful, magnitudes are not comparable to them".into(),
        },
        steps_csv,
        trained,
        timing,
    })
}
