//! Config-driven experiment runners behind the `sphlat` binary.

mod ablation;
mod commands;
mod config;
mod drift;
pub mod verify;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ablation::{run_ablation, AblationOutputs, AblationReport, AblationRow};
pub use commands::{cmd_decode, cmd_gen_data, cmd_train_ar, cmd_train_svae, DecodeSummary, TrainSummary};
pub use config::{
    AblationSettings, AblationVariant, DecodeSettings, DriftSettings, DriftVariant, ExperimentConfig, ExperimentKind, ResolvedSeeds, SeedPlan,
};
pub use drift::{drift_training_tokens, run_drift, DriftChecks, DriftOutputs, DriftReport, DriftRow};

/// Audit block embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub command: String,
    pub config_hash: String,
    pub seeds: ResolvedSeeds,
    pub version: String,
}

impl ReportMeta {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl NormStats {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let m: crate::stats::Moments = xs.into_iter().collect();
        if m.count() == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        Self {
            mean: m.mean(),
            std: m.population_variance().sqrt(),
            min: m.min(),
            max: m.max(),
        }
    }
}

/// Run `n` independent jobs on up to `threads` workers; results come back in
/// job order regardless of scheduling.
pub fn run_jobs<T: Send>(n: usize, threads: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no poisoned workers").into_iter().map(|r| r.expect("every job ran")).collect()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Write the resolved config beside the outputs.
pub fn write_resolved_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_text(&out.join("config.resolved.json"), &(cfg.to_json() + "\n"))
}
