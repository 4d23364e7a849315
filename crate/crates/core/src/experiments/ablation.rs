//! Posterior-family ablation: SVAE, then an AR prior over its latent tokens,
//! then decoded images compared with the data.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ar::{decode_sequence, train_ar, ArConfig, CfgSchedule, DecodeOptions, RefeedMode, TokenSequence};
use crate::directional::norm;
use crate::error::Result;
use crate::geometry::{project_to_sphere, DEFAULT_EPS};
use crate::rng::{child_seed, stream};
use crate::stats::{sliced_wasserstein, Moments};
use crate::svae::{train_svae, LatentNoise, Posterior, PosteriorFamily, ShapeKind, SvaeConfig, SvaeModel, ToyDataset};
use crate::tensor::Checkpoint;

use super::config::{AblationVariant, ExperimentConfig};
use super::{run_jobs, write_json, write_text, ReportMeta};

impl AblationVariant {
    pub fn family(self, kl_weight: f64) -> PosteriorFamily {
        match self {
            Self::NoNorm => PosteriorFamily::DiagGaussian { kl_weight },
            Self::DecoderNorm | Self::DecoderArNorm => PosteriorFamily::GaussianNorm { kl_weight },
            Self::Spherical => PosteriorFamily::PowerSpherical { kl_weight },
        }
    }

    /// Whether the AR prior sees (and refeeds) radius-R tokens.
    pub fn ar_on_sphere(self) -> bool {
        matches!(self, Self::DecoderArNorm | Self::Spherical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMetrics {
    pub recon_mse: f64,
    /// Sliced Wasserstein distance between decoded samples and data images.
    pub image_sw: f64,
    /// Same distance between decoded tokens and the AR training tokens.
    pub token_sw: f64,
    /// Variance of encoder sample norms before any projection.
    pub encoder_latent_norm_var: f64,
    pub ar_input_norm_var: f64,
    pub decoded_refed_norm_std: f64,
    pub final_svae_loss: f64,
    pub final_ar_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub family: String,
    pub kl_weight: f64,
    pub metrics: Option<AblationMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub meta: ReportMeta,
    pub cfg_scale: f64,
    pub rows: Vec<AblationRow>,
    pub note: String,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,family,kl_weight,recon_mse,image_sw,token_sw,encoder_latent_norm_var,ar_input_norm_var,decoded_refed_norm_std,status\n");
        for r in &self.rows {
            match &r.metrics {
                Some(m) => s.push_str(&format!(
                    "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},ok\n",
                    r.variant.name(),
                    r.family,
                    r.kl_weight,
                    m.recon_mse,
                    m.image_sw,
                    m.token_sw,
                    m.encoder_latent_norm_var,
                    m.ar_input_norm_var,
                    m.decoded_refed_norm_std
                )),
                None => s.push_str(&format!("{},{},{},,,,,,,failed\n", r.variant.name(), r.family, r.kl_weight)),
            }
        }
        s
    }
}

pub struct VariantArtifacts {
    pub svae: Checkpoint,
    pub ar: Checkpoint,
}

pub struct AblationOutputs {
    pub report: AblationReport,
    pub artifacts: Vec<(AblationVariant, Option<VariantArtifacts>)>,
    pub timing: BTreeMap<String, f64>,
}

impl AblationOutputs {
    pub fn write(&self, out: &Path) -> Result<()> {
        write_json(&out.join("ablation_report.json"), &self.report)?;
        write_text(&out.join("ablation_table.csv"), &self.report.to_csv())?;
        write_json(&out.join("timing.json"), &self.timing)?;
        for (v, a) in &self.artifacts {
            if let Some(a) = a {
                let dir = out.join(v.name());
                std::fs::create_dir_all(&dir).map_err(|e| crate::error::Error::io(&dir, e))?;
                a.svae.write(&dir.join("svae.ckpt"))?;
                a.ar.write(&dir.join("ar.ckpt"))?;
            }
        }
        Ok(())
    }
}

/// Encoder draw before any projection.
fn raw_latent(post: &Posterior, radius: f64, noise: &LatentNoise) -> Vec<f64> {
    match post {
        Posterior::Gaussian(g) => g.mean().iter().zip(g.scale()).zip(&noise.eps).map(|((m, s), e)| m + s * e).collect(),
        Posterior::FixedScale(m) => m.clone(),
        Posterior::Spherical(ps) => ps.sample_from_base(&noise.base).as_slice().iter().map(|u| radius * u).collect(),
    }
}

fn variance(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().collect::<Moments>().population_variance()
}

fn ar_config(cfg: &ExperimentConfig, model: &SvaeModel) -> ArConfig {
    let (gh, gw) = model.grid();
    ArConfig {
        token_dim: model.latent_dim(),
        radius: Some(model.radius()),
        grid_h: gh,
        grid_w: gw,
        n_classes: ShapeKind::COUNT,
        ..cfg.ar.clone()
    }
}

fn run_variant(cfg: &ExperimentConfig, data: &ToyDataset, variant: AblationVariant) -> Result<(AblationMetrics, VariantArtifacts)> {
    let svae_cfg = SvaeConfig {
        family: variant.family(cfg.ablation.kl_weight),
        ..cfg.svae.clone()
    };
    let (svae, svae_log) = train_svae(&svae_cfg, data)?;
    let radius = svae.radius();
    let d = svae.latent_dim();
    let recon_mse = data.items.iter().map(|x| svae.reconstruct(x).map(|r| r.1)).sum::<Result<f64>>()? / data.len().max(1) as f64;

    // every variant draws the same latent noise for the same (item, draw)
    let noise_seed = child_seed(cfg.seeds().svae, "ablation-latents");
    let ar_cfg = ar_config(cfg, &svae);
    let mut seqs = vec![];
    let mut raw_norms = vec![];
    for (i, (x, &label)) in data.items.iter().zip(&data.labels).enumerate() {
        let posts = svae.encode(x)?;
        for r in 0..cfg.ablation.latent_draws {
            let mut rng = stream(noise_seed, (i * cfg.ablation.latent_draws + r) as u64);
            let tokens: Vec<Vec<f64>> = posts
                .iter()
                .map(|p| {
                    let z = raw_latent(p, radius, &LatentNoise::draw(d, &mut rng));
                    raw_norms.push(norm(&z));
                    if variant.ar_on_sphere() {
                        project_to_sphere(&z, radius, DEFAULT_EPS).into_vec()
                    } else {
                        z
                    }
                })
                .collect();
            let r = if variant.ar_on_sphere() { radius } else { 0.0 };
            seqs.push(TokenSequence::new(tokens, svae.grid(), r, Some(label))?);
        }
    }
    let ar_input_norm_var = variance(seqs.iter().flat_map(|s| s.tokens.iter().map(|t| norm(t))));
    let (ar, ar_log) = train_ar(&ar_cfg, &seqs)?;

    let opts = DecodeOptions {
        n_steps: cfg.decode.n_steps,
        cfg: CfgSchedule::new(cfg.decode.schedule, cfg.decode.s_max)?,
        refeed: if variant.ar_on_sphere() { RefeedMode::Projected } else { RefeedMode::Raw },
        use_cache: true,
    };
    let decode_seed = child_seed(cfg.seeds().decode, "ablation-decode");
    let mut images = vec![];
    let mut tokens = vec![];
    let mut refed = Moments::new();
    for i in 0..cfg.decode.n_sequences {
        let o = decode_sequence(&ar, Some(i % ShapeKind::COUNT), &opts, &mut stream(decode_seed, i as u64))?;
        let emitted = if variant.ar_on_sphere() { o.projected } else { o.raw };
        o.diagnostics.iter().for_each(|dg| refed.push(dg.refed_norm));
        images.push(svae.decode(&emitted));
        tokens.extend(emitted);
    }
    let sw_seed = child_seed(cfg.seeds().decode, "ablation-sw");
    let gt_tokens: Vec<Vec<f64>> = seqs.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    let (image_sw, token_sw) = if images.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            sliced_wasserstein(&images, &data.items, cfg.ablation.sw_projections, &mut stream(sw_seed, 0)),
            sliced_wasserstein(&tokens, &gt_tokens, cfg.ablation.sw_projections, &mut stream(sw_seed, 1)),
        )
    };
    let metrics = AblationMetrics {
        recon_mse,
        image_sw,
        token_sw,
        encoder_latent_norm_var: variance(raw_norms),
        ar_input_norm_var,
        decoded_refed_norm_std: refed.population_variance().sqrt(),
        final_svae_loss: svae_log.epochs.last().map_or(f64::NAN, |e| e.total),
        final_ar_loss: ar_log.final_loss().unwrap_or(f64::NAN),
    };
    Ok((
        metrics,
        VariantArtifacts {
            svae: Checkpoint::from_params(&svae.store),
            ar: Checkpoint::from_params(&ar.store),
        },
    ))
}

/// Train every requested variant on the same data and seeds. A failing
/// variant is recorded in its row and does not stop the others.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationOutputs> {
    let data = ToyDataset::generate(&cfg.data);
    let variants = cfg.ablation.variants.clone();
    let start = Instant::now();
    let results = run_jobs(variants.len(), cfg.threads, |i| run_variant(cfg, &data, variants[i]));
    let mut timing = BTreeMap::new();
    timing.insert("total_seconds".to_string(), start.elapsed().as_secs_f64());
    let mut rows = vec![];
    let mut artifacts = vec![];
    for (&v, r) in variants.iter().zip(results) {
        let family = v.family(cfg.ablation.kl_weight);
        let (metrics, error, art) = match r {
            Ok((m, a)) => (Some(m), None, Some(a)),
            Err(e) => (None, Some(e.to_string()), None),
        };
        rows.push(AblationRow {
            variant: v,
            family: family.label(),
            kl_weight: family.kl_weight(),
            metrics,
            error,
        });
        artifacts.push((v, art));
    }
    Ok(AblationOutputs {
        report: AblationReport {
            meta: ReportMeta::new("ablation", cfg),
            cfg_scale: cfg.decode.s_max,
            rows,
            note: "image-space sliced Wasserstein distance is a desk-scale proxy; compare orderings across rows, not magnitudes with image-model benchmarks".into(),
        },
        artifacts,
        timing,
    })
}
