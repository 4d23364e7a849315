use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ar::{ArConfig, CfgKind, ProcessSpec, RefeedMode};
use crate::error::{Error, Result};
use crate::rng::child_seed;
use crate::svae::{DatasetSpec, SvaeConfig};

/// Master seed plus optional per-component overrides. Unset components are
/// derived from the master seed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedPlan {
    pub master: u64,
    pub data: Option<u64>,
    pub svae: Option<u64>,
    pub ar: Option<u64>,
    pub process: Option<u64>,
    pub decode: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub data: u64,
    pub svae: u64,
    pub ar: u64,
    pub process: u64,
    pub decode: u64,
}

impl SeedPlan {
    pub fn resolve(&self) -> ResolvedSeeds {
        let pick = |o: Option<u64>, name: &str| o.unwrap_or_else(|| child_seed(self.master, name));
        ResolvedSeeds {
            master: self.master,
            data: pick(self.data, "data"),
            svae: pick(self.svae, "svae"),
            ar: pick(self.ar, "ar"),
            process: pick(self.process, "process"),
            decode: pick(self.decode, "decode"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub n_steps: usize,
    pub schedule: CfgKind,
    /// Largest guidance scale; sweeps run `1.0, 1.0 + scale_step, …, s_max`.
    pub s_max: f64,
    pub scale_step: f64,
    pub refeed: RefeedMode,
    pub n_sequences: usize,
    /// Class for `decode`; `None` cycles through all classes.
    pub class_id: Option<usize>,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self {
            n_steps: 100,
            schedule: CfgKind::Linear,
            s_max: 3.0,
            scale_step: 0.5,
            refeed: RefeedMode::Projected,
            n_sequences: 64,
            class_id: None,
        }
    }
}

impl DecodeSettings {
    pub fn scales(&self) -> Vec<f64> {
        let mut out = vec![];
        let mut k = 0usize;
        loop {
            let s = 1.0 + k as f64 * self.scale_step;
            if s > self.s_max + 1e-9 {
                break;
            }
            out.push(s);
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftVariant {
    /// On-sphere tokens, projected refeed.
    Spherical,
    /// Unnormalised Gaussian tokens, raw refeed, raw output.
    GaussianRaw,
    /// Gaussian tokens and raw refeed; emitted tokens projected for the decoder.
    DecoderNorm,
    /// Gaussian tokens projected before training; projected refeed.
    DecoderArNorm,
}

impl DriftVariant {
    pub const ALL: [DriftVariant; 4] = [Self::Spherical, Self::GaussianRaw, Self::DecoderNorm, Self::DecoderArNorm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Spherical => "spherical",
            Self::GaussianRaw => "gaussian_raw",
            Self::DecoderNorm => "decoder_norm",
            Self::DecoderArNorm => "decoder_ar_norm",
        }
    }

    pub fn refeed(self) -> RefeedMode {
        match self {
            Self::Spherical | Self::DecoderArNorm => RefeedMode::Projected,
            Self::GaussianRaw | Self::DecoderNorm => RefeedMode::Raw,
        }
    }

    /// Whether delivered tokens are the projected ones.
    pub fn projects_output(self) -> bool {
        !matches!(self, Self::GaussianRaw)
    }

    pub fn is_gaussian(self) -> bool {
        !matches!(self, Self::Spherical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSettings {
    pub variants: Vec<DriftVariant>,
    pub n_train_sequences: usize,
    pub n_gt_sequences: usize,
    /// Base scale of the per-dimension Gaussian token noise; dimension `j`
    /// gets `sigma · (0.5 + j/(d−1))`.
    pub gaussian_sigma: f64,
    pub sw_projections: usize,
    /// Directory with `<variant>.ckpt` files; trained in-process when unset.
    pub checkpoints: Option<std::path::PathBuf>,
}

impl Default for DriftSettings {
    fn default() -> Self {
        Self {
            variants: DriftVariant::ALL.to_vec(),
            n_train_sequences: 2000,
            n_gt_sequences: 512,
            gaussian_sigma: 0.3,
            sw_projections: 512,
            checkpoints: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    NoNorm,
    DecoderNorm,
    DecoderArNorm,
    Spherical,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::NoNorm, Self::DecoderNorm, Self::DecoderArNorm, Self::Spherical];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoNorm => "no_norm",
            Self::DecoderNorm => "decoder_norm",
            Self::DecoderArNorm => "decoder_ar_norm",
            Self::Spherical => "spherical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub variants: Vec<AblationVariant>,
    /// Posterior draws per image used as AR training sequences.
    pub latent_draws: usize,
    pub kl_weight: f64,
    pub sw_projections: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            variants: AblationVariant::ALL.to_vec(),
            latent_draws: 4,
            kl_weight: 0.004,
            sw_projections: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GenData,
    TrainSvae,
    TrainAr,
    Decode,
    Drift,
    Ablation,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seeds: SeedPlan,
    pub threads: usize,
    pub data: DatasetSpec,
    pub svae: SvaeConfig,
    pub ar: ArConfig,
    pub process: ProcessSpec,
    pub decode: DecodeSettings,
    pub drift: DriftSettings,
    pub ablation: AblationSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            seeds: SeedPlan::default(),
            threads: 1,
            data: DatasetSpec::default(),
            svae: SvaeConfig::default(),
            ar: ArConfig::default(),
            process: ProcessSpec::default(),
            decode: DecodeSettings::default(),
            drift: DriftSettings::default(),
            ablation: AblationSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small end-to-end settings for smoke runs and self-tests.
    pub fn smoke() -> Self {
        Self {
            data: DatasetSpec {
                n_items: 32,
                ..Default::default()
            },
            svae: SvaeConfig {
                latent_dim: 4,
                hidden: 16,
                layers: 2,
                epochs: 2,
                batch_size: 8,
                ..Default::default()
            },
            ar: ArConfig {
                grid_h: 1,
                grid_w: 3,
                width: 16,
                blocks: 1,
                heads: 2,
                head_hidden: 16,
                head_layers: 2,
                time_freqs: 2,
                cond_tokens: 2,
                batch_size: 8,
                steps: 100,
                ..Default::default()
            },
            process: ProcessSpec {
                dim: 4,
                n_classes: 2,
                kappa: 20.0,
                ..Default::default()
            },
            decode: DecodeSettings {
                n_steps: 8,
                n_sequences: 8,
                s_max: 2.0,
                ..Default::default()
            },
            drift: DriftSettings {
                n_train_sequences: 32,
                n_gt_sequences: 32,
                sw_projections: 32,
                ..Default::default()
            },
            ablation: AblationSettings {
                latent_draws: 2,
                sw_projections: 32,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fill every seed, align component configs with each other and validate.
    pub fn resolve(mut self) -> Result<Self> {
        let seeds = self.seeds.resolve();
        self.seeds = SeedPlan {
            master: seeds.master,
            data: Some(seeds.data),
            svae: Some(seeds.svae),
            ar: Some(seeds.ar),
            process: Some(seeds.process),
            decode: Some(seeds.decode),
        };
        self.data.seed = seeds.data;
        self.svae.seed = seeds.svae;
        self.svae.data_seed = seeds.data;
        self.ar.seed = seeds.ar;
        self.process.seed = seeds.process;
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if self.decode.n_steps == 0 || !(self.decode.s_max >= 1.0) || !(self.decode.scale_step > 0.0) {
            return Err(Error::Config("decode needs n_steps >= 1, s_max >= 1 and scale_step > 0".into()));
        }
        if self.drift.sw_projections == 0 || self.ablation.sw_projections == 0 || self.ablation.latent_draws == 0 {
            return Err(Error::Config("sw_projections and latent_draws must be positive".into()));
        }
        if !(self.drift.gaussian_sigma >= 0.0) {
            return Err(Error::Config("gaussian_sigma must be >= 0".into()));
        }
        self.svae.family.validate()?;
        self.process_ar()?.validate()?;
        Ok(self)
    }

    pub fn seeds(&self) -> ResolvedSeeds {
        self.seeds.resolve()
    }

    /// AR config for token sequences drawn from the synthetic process.
    pub fn process_ar(&self) -> Result<ArConfig> {
        Ok(ArConfig {
            token_dim: self.process.dim,
            n_classes: self.process.n_classes,
            ..self.ar.clone()
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the compact JSON serialisation.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_string(self).expect("config serialises").as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let c = ExperimentConfig::default().resolve().unwrap();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(back.clone().resolve().unwrap(), back);
        let other = ExperimentConfig {
            seeds: SeedPlan { master: 1, ..Default::default() },
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn unknown_fields_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"sedes": {}}"#), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"ar": {"widht": 3}}"#), Err(Error::Config(_))));
        let bad = ExperimentConfig::from_json(r#"{"decode": {"s_max": 0.5}}"#).unwrap();
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn explicit_component_seeds_survive_resolution() {
        let c = ExperimentConfig::from_json(r#"{"seeds": {"master": 3, "ar": 42}}"#).unwrap().resolve().unwrap();
        assert_eq!(c.ar.seed, 42);
        assert_eq!(c.svae.seed, child_seed(3, "svae"));
        assert_eq!(c.svae.data_seed, c.data.seed);
    }

    #[test]
    fn scale_sweep() {
        let d = DecodeSettings {
            s_max: 2.0,
            scale_step: 0.5,
            ..Default::default()
        };
        assert_eq!(d.scales(), vec![1.0, 1.5, 2.0]);
    }
}
