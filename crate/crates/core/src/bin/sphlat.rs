use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sphlat::ar::{CfgKind, RefeedMode};
use sphlat::experiments::verify::{run_verify, Fault};
use sphlat::experiments::{
    cmd_decode, cmd_gen_data, cmd_train_ar, cmd_train_svae, run_ablation, run_drift, write_resolved_config, ExperimentConfig,
};
use sphlat::Error;

#[derive(Parser)]
#[command(name = "sphlat", version, about = "Hyperspherical latent experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; unset fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the image dataset and its manifest.
    GenData,
    TrainSvae {
        /// Dataset directory written by `gen-data`; regenerated from the config when unset.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    TrainAr {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long)]
        s_max: Option<f64>,
        #[arg(long, value_enum)]
        schedule: Option<Schedule>,
        #[arg(long, value_enum)]
        refeed: Option<Refeed>,
        #[arg(long = "class")]
        class_id: Option<usize>,
    },
    /// Guidance sweep comparing token representations.
    Drift {
        /// Directory of `<variant>.ckpt` files.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    Ablation,
    /// Run property suites and write a JSON report.
    Verify {
        #[arg(long = "suite")]
        suites: Vec<String>,
        #[arg(long, default_value = "none")]
        inject_fault: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Constant,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Refeed {
    Projected,
    Raw,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
            e => e,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds.master = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_report<T: serde::Serialize>(path: &Path, v: &T) -> Result<(), Error> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Returns whether every invariant checked by the command held.
fn run(cli: Cli) -> Result<bool, Error> {
    let mut cfg = load_config(&cli.common)?;
    if let Command::Decode {
        n_steps,
        s_max,
        schedule,
        refeed,
        class_id,
        ..
    } = &cli.command
    {
        let d = &mut cfg.decode;
        d.n_steps = n_steps.unwrap_or(d.n_steps);
        d.s_max = s_max.unwrap_or(d.s_max);
        if let Some(s) = schedule {
            d.schedule = match s {
                Schedule::Constant => CfgKind::Constant,
                Schedule::Linear => CfgKind::Linear,
            };
        }
        if let Some(r) = refeed {
            d.refeed = match r {
                Refeed::Projected => RefeedMode::Projected,
                Refeed::Raw => RefeedMode::Raw,
            };
        }
        d.class_id = class_id.or(d.class_id);
    }
    if let Command::Drift { checkpoints: Some(dir) } = &cli.command {
        cfg.drift.checkpoints = Some(dir.clone());
    }
    let cfg = cfg.resolve()?;
    let out = &cli.common.out;
    write_resolved_config(out, &cfg)?;
    match cli.command {
        Command::GenData => print_json(&cmd_gen_data(&cfg, out)?)?,
        Command::TrainSvae { data, resume } => print_json(&cmd_train_svae(&cfg, out, data.as_deref(), resume.as_deref())?)?,
        Command::TrainAr { resume } => print_json(&cmd_train_ar(&cfg, out, resume.as_deref())?)?,
        Command::Decode { checkpoint, .. } => print_json(&cmd_decode(&cfg, &checkpoint, out)?)?,
        Command::Drift { .. } => {
            let o = run_drift(&cfg)?;
            o.write(out)?;
            print_json(&o.report.checks)?;
            return Ok(o.report.checks.as_ref().is_none_or(|c| c.passed));
        }
        Command::Ablation => {
            let o = run_ablation(&cfg)?;
            o.write(out)?;
            print!("{}", o.report.to_csv());
            return Ok(o.report.rows.iter().all(|r| r.error.is_none()));
        }
        Command::Verify { suites, inject_fault } => {
            let fault: Fault = inject_fault.parse()?;
            let report = run_verify(&cfg, &suites, fault)?;
            write_report(&out.join("verify_report.json"), &report)?;
            for r in &report.results {
                println!("{} {}::{} value={:e} tol={:e}", if r.passed { "PASS" } else { "FAIL" }, r.suite, r.name, r.value, r.tolerance);
            }
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("sphlat: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("sphlat: {e}");
            ExitCode::from(1)
        }
    }
}
