//! Property suites run by `sphlat verify`, one per module, at reduced sizes.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ar::{
    decode_sequence, euler_endpoint, rf_loss_plain, ArConfig, ArModel, CfgSchedule, DecodeOptions, RefeedMode, RfNoise,
};
use crate::bounds::{acg_log_density, axial_symmetry_probe, bound_gap_check, AcgParams, DiagGaussianParams};
use crate::directional::{
    log_surface_area, norm, ps_log_density, sample_uniform_sphere, PowerSphericalParams, UnitDirection, VmfParams,
};
use crate::error::{Error, Result};
use crate::geometry::{
    first_order_stability_check, project_to_sphere, refeed_error_propagation, spectral_norm, tangent_projector, Matrix, SphericalToken,
    DEFAULT_EPS, MIN_ORDER,
};
use crate::rng::{child_seed, stream, Rng};
use crate::stats::Moments;
use crate::svae::{train_svae, DatasetSpec, PosteriorFamily, SvaeConfig, ToyDataset};
use crate::tensor::{check_param_grads, mlp_forward, Activation, Checkpoint, Graph, Mlp, ParamStore, Tensor};

use super::config::ExperimentConfig;
use super::{run_drift, ReportMeta};

pub const SUITES: [&str; 7] = [
    "tensor_core",
    "directional",
    "sphere_geometry",
    "variational_bounds",
    "svae_toy",
    "ar_pipeline",
    "experiments_cli",
];

/// Harness self-test hooks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    /// The projector under test targets radius `1.001·R`.
    BrokenProjector,
}

impl std::str::FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "broken_projector" | "broken-projector" => Ok(Self::BrokenProjector),
            _ => Err(Error::Config(format!("unknown fault `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub meta: ReportMeta,
    pub suites: Vec<String>,
    pub fault: Fault,
    pub results: Vec<PropertyResult>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

struct Check {
    passed: bool,
    value: f64,
    tolerance: f64,
    detail: String,
}

fn at_most(value: f64, tolerance: f64, detail: impl Into<String>) -> Check {
    Check {
        passed: value <= tolerance,
        value,
        tolerance,
        detail: detail.into(),
    }
}

fn at_least(value: f64, tolerance: f64, detail: impl Into<String>) -> Check {
    Check {
        passed: value >= tolerance,
        value,
        tolerance,
        detail: detail.into(),
    }
}

fn boolean(ok: bool, detail: impl Into<String>) -> Check {
    Check {
        passed: ok,
        value: ok as u8 as f64,
        tolerance: 1.0,
        detail: detail.into(),
    }
}

type Property = (&'static str, fn(&mut Rng, Fault) -> Result<Check>);

fn properties(suite: &str) -> &'static [Property] {
    match suite {
        "tensor_core" => &[
            ("gradients_match_finite_differences", tensor_gradcheck),
            ("checkpoint_round_trip", tensor_checkpoint),
        ],
        "directional" => &[
            ("ps_density_normalizes", |r, _| density_normalizes(r, Family::Ps)),
            ("vmf_density_normalizes", |r, _| density_normalizes(r, Family::Vmf)),
            ("ps_mean_cosine", ps_mean_cosine),
            ("samples_are_unit_norm", ps_unit_norm),
        ],
        "sphere_geometry" => &[
            ("projection_norm", projection_norm),
            ("jacobian_is_tangent_projector", jacobian_is_projector),
            ("projector_identities", projector_identities),
            ("retraction_second_order", retraction_order),
            ("refeed_radial_annihilation", refeed_radial),
            ("refeed_norm_bound", refeed_bound),
        ],
        "variational_bounds" => &[
            ("radial_gap_nonnegative", gap_nonnegative),
            ("radial_gap_zero_at_prior", gap_zero_at_prior),
            ("chain_rule_consistent", chain_rule),
            ("ps_axially_symmetric", ps_axial),
            ("acg_not_axially_symmetric", acg_axial),
        ],
        "svae_toy" => &[
            ("every_family_trains_finite", svae_families_finite),
            ("training_is_deterministic", svae_deterministic),
        ],
        "ar_pipeline" => &[
            ("zero_head_loss", ar_zero_head),
            ("rf_gradients_match_finite_differences", ar_gradcheck),
            ("euler_first_order", ar_euler_order),
            ("constant_norm_decoding", ar_constant_norm),
            ("cache_matches_recompute", ar_cache),
        ],
        "experiments_cli" => &[
            ("config_round_trip", cli_config_round_trip),
            ("drift_rerun_identical", cli_drift_rerun),
        ],
        _ => &[],
    }
}

/// Run the selected suites; an empty filter runs all of them.
pub fn run_verify(cfg: &ExperimentConfig, filter: &[String], fault: Fault) -> Result<VerifyReport> {
    for f in filter {
        if !SUITES.contains(&f.as_str()) {
            return Err(Error::Config(format!("unknown suite `{f}`; known: {}", SUITES.join(", "))));
        }
    }
    let suites: Vec<&str> = SUITES.iter().copied().filter(|s| filter.is_empty() || filter.iter().any(|f| f == s)).collect();
    let master = cfg.seeds().master;
    let mut results = vec![];
    for suite in &suites {
        for (name, prop) in properties(suite) {
            let seed = child_seed(master, &format!("verify/{suite}/{name}"));
            let check = prop(&mut stream(seed, 0), fault).unwrap_or_else(|e| Check {
                passed: false,
                value: f64::NAN,
                tolerance: f64::NAN,
                detail: format!("error: {e}"),
            });
            results.push(PropertyResult {
                suite: suite.to_string(),
                name: name.to_string(),
                passed: check.passed,
                value: check.value,
                tolerance: check.tolerance,
                seed,
                detail: check.detail,
            });
        }
    }
    Ok(VerifyReport {
        meta: ReportMeta::new("verify", cfg),
        suites: suites.iter().map(|s| s.to_string()).collect(),
        fault,
        passed: results.iter().all(|r| r.passed),
        results,
    })
}

fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

// ---- tensor_core

fn tensor_gradcheck(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", &[3, 6, 2], Activation::Silu, false, rng);
    let x = Tensor::new(vec![4, 3], gaussian(12, rng))?;
    let y = Tensor::new(vec![4, 2], gaussian(8, rng))?;
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let out = mlp_forward(&mut g, s, xv, &mlp)?;
        let sp = g.softplus(out);
        let diff = g.sub(sp, yv)?;
        let sq = g.mul(diff, diff)?;
        let l = g.mean(sq);
        Ok((g, l))
    };
    let report = check_param_grads(&mut store, loss, 1e-5, 8, rng)?;
    Ok(at_most(report.max_rel_error, 1e-4, format!("{} entries, worst {:?}", report.checked, report.worst)))
}

fn tensor_checkpoint(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut store = ParamStore::new();
    Mlp::new(&mut store, "m", &[5, 7, 3], Activation::Silu, false, rng);
    let bytes = Checkpoint::from_params(&store).to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?.to_bytes();
    Ok(boolean(bytes == back, format!("{} bytes", bytes.len())))
}

// ---- directional

#[derive(Clone, Copy)]
enum Family {
    Ps,
    Vmf,
}

/// `E_q[p/q]` with `q = ½·Unif + ½·PS(μ, κ)`; the weights are bounded by
/// `2·|S|·max p`, so the sample stderr is reliable.
fn normalization_estimate(d: usize, kappa: f64, family: Family, n: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    let mu = UnitDirection::new(gaussian(d, rng))?;
    let ps = PowerSphericalParams::new(mu.clone(), kappa)?;
    let vmf = VmfParams::new(mu, kappa)?;
    let log_area = log_surface_area(d)?;
    let mut m = Moments::new();
    for _ in 0..n {
        let u = if rng.random::<bool>() { sample_uniform_sphere(d, rng) } else { ps.sample(rng) };
        let q = 0.5 * (-log_area).exp() + 0.5 * ps_log_density(&u, &ps).exp();
        let p = match family {
            Family::Ps => ps.log_density(&u).exp(),
            Family::Vmf => vmf.log_density(&u).exp(),
        };
        m.push(p / q);
    }
    Ok((m.mean(), m.stderr()))
}

fn density_normalizes(rng: &mut Rng, family: Family) -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    for d in [2, 3, 8, 16] {
        for kappa in [0.0, 1.0, 5.0, 20.0] {
            let (mean, se) = normalization_estimate(d, kappa, family, 4000, rng)?;
            let z = if se > 0.0 { (mean - 1.0).abs() / se } else if (mean - 1.0).abs() < 1e-12 { 0.0 } else { f64::INFINITY };
            if z > worst {
                worst = z;
                at = format!("d={d} kappa={kappa} integral={mean:.5}");
            }
        }
    }
    Ok(at_most(worst, 3.0, format!("max |integral - 1| / stderr; worst at {at}")))
}

fn ps_mean_cosine(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for d in [2, 3, 8, 16] {
        for kappa in [0.0, 1.0, 5.0, 20.0] {
            let mu = UnitDirection::axis(d, 0);
            let p = PowerSphericalParams::new(mu, kappa)?;
            let m: Moments = (0..10_000).map(|_| p.sample(rng).as_slice()[0]).collect();
            let want = kappa / (d as f64 - 1.0 + kappa);
            worst = worst.max((m.mean() - want).abs() / m.stderr());
        }
    }
    Ok(at_most(worst, 4.0, "max |mean cosine - k/(d-1+k)| / stderr"))
}

fn ps_unit_norm(rng: &mut Rng, _: Fault) -> Result<Check> {
    let p = PowerSphericalParams::new(UnitDirection::new(gaussian(7, rng))?, 3.0)?;
    let worst = (0..2000).map(|_| (norm(p.sample(rng).as_slice()) - 1.0).abs()).fold(0.0, f64::max);
    Ok(at_most(worst, 1e-12, "max | |u| - 1 |"))
}

// ---- sphere_geometry

fn projector(fault: Fault) -> impl Fn(&[f64], f64) -> Vec<f64> {
    move |z, r| {
        let r = if fault == Fault::BrokenProjector { 1.001 * r } else { r };
        project_to_sphere(z, r, DEFAULT_EPS).into_vec()
    }
}

fn on_sphere(d: usize, r: f64, rng: &mut Rng) -> SphericalToken {
    let u = sample_uniform_sphere(d, rng);
    SphericalToken::on_sphere(u.as_slice().iter().map(|x| r * x).collect(), r).expect("unit direction scaled to r")
}

fn projection_norm(rng: &mut Rng, fault: Fault) -> Result<Check> {
    let n_r = projector(fault);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(2..20);
        let r = rng.random_range(0.5..5.0);
        let scale: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let z: Vec<f64> = gaussian(d, rng).iter().map(|x| scale * x).collect();
        worst = worst.max((norm(&n_r(&z, r)) - r).abs() / r);
    }
    Ok(at_most(worst, 1e-10, "max | |N_R(z)| - R | / R"))
}

fn jacobian_is_projector(rng: &mut Rng, fault: Fault) -> Result<Check> {
    let n_r = projector(fault);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(2..10);
        let r = rng.random_range(0.5..4.0);
        let zb = on_sphere(d, r, rng);
        let p = tangent_projector(&zb)?.to_matrix();
        for j in 0..d {
            let mut plus = zb.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let (fp, fm) = (n_r(&plus, r), n_r(&minus, r));
            for i in 0..d {
                worst = worst.max(((fp[i] - fm[i]) / (2.0 * h) - p[i * d + j]).abs());
            }
        }
    }
    Ok(at_most(worst, 1e-6, "max entrywise |FD Jacobian - (I - z z^T / R^2)|"))
}

fn projector_identities(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(2..10);
        let zb = on_sphere(d, rng.random_range(0.5..4.0), rng);
        let p = tangent_projector(&zb)?;
        let m = p.to_matrix();
        for i in 0..d {
            for j in 0..d {
                let pp: f64 = (0..d).map(|k| m[i * d + k] * m[k * d + j]).sum();
                worst = worst.max((pp - m[i * d + j]).abs());
            }
        }
        worst = worst.max(norm(&p.apply(zb.as_slice())));
        worst = worst.max((spectral_norm(&Matrix::new(d, d, m)?) - 1.0).abs());
    }
    Ok(at_most(worst, 1e-10, "max deviation over P^2 = P, P z = 0, |P|_2 = 1"))
}

fn retraction_order(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let d = rng.random_range(2..12);
        let zb = on_sphere(d, (d as f64).sqrt(), rng);
        let rep = first_order_stability_check(&zb, &gaussian(d, rng))?;
        worst = worst.min(rep.order.unwrap_or(f64::NEG_INFINITY));
    }
    Ok(at_least(worst, MIN_ORDER, "min fitted order of N_R(z+s delta) - z - s P delta"))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    Matrix::new(rows, cols, gaussian(rows * cols, rng))
}

fn refeed_radial(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(2..10);
        let zb = on_sphere(d, rng.random_range(0.5..4.0), rng);
        let jac = random_matrix(d, d, rng)?;
        let e = gaussian(d, rng);
        // η chosen so that J e + η = k z̄
        let k = rng.random_range(-2.0..2.0);
        let eta: Vec<f64> = jac.matvec(&e).iter().zip(zb.as_slice()).map(|(je, z)| k * z - je).collect();
        let rep = refeed_error_propagation(&jac, &zb, &e, &eta)?;
        worst = worst.max(norm(&rep.error_next));
    }
    Ok(at_most(worst, 1e-10, "max |P(J e + eta)| for radial J e + eta"))
}

fn refeed_bound(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut violations = 0;
    for _ in 0..1000 {
        let d = rng.random_range(2..10);
        let m = rng.random_range(1..10);
        let zb = on_sphere(d, rng.random_range(0.5..4.0), rng);
        let rep = refeed_error_propagation(&random_matrix(d, m, rng)?, &zb, &gaussian(m, rng), &gaussian(d, rng))?;
        violations += (!rep.bound_holds || rep.radial_component.abs() > 1e-10) as usize;
    }
    Ok(at_most(violations as f64, 0.0, "draws violating |e'| <= |PJ| |e| + |P eta| or with a radial component"))
}

// ---- variational_bounds

fn random_posterior(d: usize, rng: &mut Rng) -> Result<DiagGaussianParams> {
    let mean = gaussian(d, rng).iter().map(|x| 0.7 * x).collect();
    let scale = (0..d).map(|_| rng.random_range(0.3..1.5)).collect();
    DiagGaussianParams::new(mean, scale)
}

fn gap_nonnegative(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut worst = f64::INFINITY;
    for i in 0..6 {
        let d = 2 + i % 3;
        let q = random_posterior(d, rng)?;
        let rep = bound_gap_check(&q, |z| -0.5 * z[0] * z[0], (d as f64).sqrt(), 1500, rng.random())?;
        worst = worst.min(rep.radial_gap.value / rep.radial_gap.stderr.max(1e-300));
    }
    Ok(at_least(worst, -3.0, "min radial gap / stderr"))
}

fn gap_zero_at_prior(rng: &mut Rng, _: Fault) -> Result<Check> {
    let rep = bound_gap_check(&DiagGaussianParams::standard(3), |_| 0.0, 3f64.sqrt(), 2000, rng.random())?;
    let z = rep.radial_gap.value.abs() / rep.radial_gap.stderr.max(1e-300);
    Ok(at_most(if rep.radial_gap.value.abs() < 1e-12 { 0.0 } else { z }, 3.0, "|radial gap| / stderr at q = N(0, I)"))
}

fn chain_rule(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut ok = 0;
    let n = 4;
    for _ in 0..n {
        let q = random_posterior(3, rng)?;
        ok += bound_gap_check(&q, |z| -z[1].abs(), 3f64.sqrt(), 1500, rng.random())?.chain_rule_consistent as usize;
    }
    Ok(at_least(ok as f64, n as f64, "posteriors whose decomposition agrees with independent estimators within 4 stderr"))
}

fn ps_axial(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mu = UnitDirection::new(gaussian(3, rng))?;
    let ps = PowerSphericalParams::new(mu.clone(), 7.0)?;
    let dev = axial_symmetry_probe(|u| ps.log_density(u), &mu, 10, 100, rng);
    Ok(at_most(dev, 1e-10, "max |log f(Qu) - log f(u)| over rotations fixing mu"))
}

fn acg_axial(rng: &mut Rng, _: Fault) -> Result<Check> {
    let acg = AcgParams::diagonal(&[1.0, 4.0, 9.0])?;
    let dev = axial_symmetry_probe(|u| acg_log_density(u, &acg), &UnitDirection::axis(3, 0), 10, 100, rng);
    Ok(at_least(dev, 0.1, "ACG Sigma = diag(1, 4, 9) deviation"))
}

// ---- svae_toy

fn tiny_svae(family: PosteriorFamily) -> SvaeConfig {
    SvaeConfig {
        family,
        latent_dim: 4,
        hidden: 16,
        layers: 2,
        epochs: 2,
        batch_size: 8,
        ..Default::default()
    }
}

fn tiny_data() -> ToyDataset {
    ToyDataset::generate(&DatasetSpec {
        n_items: 32,
        ..Default::default()
    })
}

fn svae_families_finite(rng: &mut Rng, _: Fault) -> Result<Check> {
    let data = tiny_data();
    let families = [
        PosteriorFamily::DiagGaussian { kl_weight: 0.01 },
        PosteriorFamily::SigmaVae {
            c_sigma: 0.5,
            per_model: false,
            mean_penalty: 1e-3,
        },
        PosteriorFamily::GaussianNorm { kl_weight: 0.01 },
        PosteriorFamily::PowerSpherical { kl_weight: 0.01 },
    ];
    let mut bad = vec![];
    for f in families {
        let cfg = SvaeConfig {
            seed: rng.random(),
            ..tiny_svae(f)
        };
        let (_, log) = train_svae(&cfg, &data)?;
        if !log.epochs.iter().all(|e| e.total.is_finite()) {
            bad.push(f.label());
        }
    }
    Ok(at_most(bad.len() as f64, 0.0, format!("families with non-finite losses: {bad:?}")))
}

fn svae_deterministic(rng: &mut Rng, _: Fault) -> Result<Check> {
    let data = tiny_data();
    let cfg = SvaeConfig {
        seed: rng.random(),
        ..tiny_svae(PosteriorFamily::PowerSpherical { kl_weight: 0.01 })
    };
    let a = Checkpoint::from_params(&train_svae(&cfg, &data)?.0.store).to_bytes();
    let b = Checkpoint::from_params(&train_svae(&cfg, &data)?.0.store).to_bytes();
    Ok(boolean(a == b, "two runs with one seed give identical checkpoint bytes"))
}

// ---- ar_pipeline

fn tiny_ar(seed: u64) -> ArConfig {
    ArConfig {
        token_dim: 3,
        grid_h: 2,
        grid_w: 3,
        width: 8,
        blocks: 2,
        heads: 2,
        head_hidden: 8,
        head_layers: 2,
        time_freqs: 2,
        n_classes: 3,
        cond_tokens: 2,
        zero_init_head: false,
        seed,
        ..Default::default()
    }
}

fn ar_zero_head(rng: &mut Rng, _: Fault) -> Result<Check> {
    let d = 16;
    let r = (d as f64).sqrt();
    let n = 20_000;
    let z1: Vec<Vec<f64>> = (0..n).map(|_| on_sphere(d, r, rng).into_vec()).collect();
    let hidden = vec![vec![]; n];
    let noise = RfNoise::draw(n, d, rng);
    let zero = |_: &[f64], _: f64, _: &[f64]| vec![0.0; d];
    let per_token: Moments = (0..n)
        .map(|i| z1[i].iter().zip(noise.z0.row_slice(i)).map(|(b, a)| (b - a).powi(2)).sum::<f64>())
        .collect();
    let loss = rf_loss_plain(&zero, &z1, &hidden, &noise);
    let z = (loss - (r * r + d as f64)).abs() / per_token.stderr();
    Ok(at_most(z, 4.0, format!("|loss - (R^2 + d)| / stderr, loss={loss:.4}")))
}

fn ar_gradcheck(rng: &mut Rng, _: Fault) -> Result<Check> {
    let m = ArModel::new(tiny_ar(rng.random()))?;
    let cfg = m.config.clone();
    let seqs: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..cfg.seq_len()).map(|_| on_sphere(3, cfg.radius(), rng).into_vec()).collect()).collect();
    let batch: Vec<(&[Vec<f64>], usize)> = vec![(&seqs[0], 0), (&seqs[1], cfg.n_classes)];
    let noise = RfNoise::draw(2 * cfg.seq_len(), cfg.token_dim, rng);
    let mut store = m.store.clone();
    let rep = check_param_grads(&mut store, |s| m.rf_loss_graph(s, &batch, &noise), 1e-5, 2, rng)?;
    Ok(at_most(rep.max_rel_error, 1e-4, format!("{} entries, worst {:?}", rep.checked, rep.worst)))
}

fn ar_euler_order(rng: &mut Rng, _: Fault) -> Result<Check> {
    let m = ArModel::new(tiny_ar(rng.random()))?;
    let h = gaussian(8, rng);
    let hu = gaussian(8, rng);
    let z0 = gaussian(3, rng);
    let pts: Vec<(f64, f64)> = [256usize, 512, 1024, 2048]
        .iter()
        .map(|&n| {
            let a = euler_endpoint(&m, &z0, &h, Some(&hu), n, 2.0);
            let b = euler_endpoint(&m, &z0, &h, Some(&hu), 2 * n, 2.0);
            ((1.0 / n as f64).ln(), norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>()).ln())
        })
        .collect();
    let slope = crate::geometry::least_squares_slope(&pts);
    Ok(at_most((slope - 1.0).abs(), 0.2, format!("|slope - 1|, slope={slope:.3}")))
}

fn ar_constant_norm(rng: &mut Rng, _: Fault) -> Result<Check> {
    let m = ArModel::new(tiny_ar(rng.random()))?;
    let r = m.config.radius();
    let opts = DecodeOptions {
        n_steps: 6,
        cfg: CfgSchedule::linear(3.0)?,
        refeed: RefeedMode::Projected,
        use_cache: true,
    };
    let mut worst: f64 = 0.0;
    let mut extra_projections = 0;
    for i in 0..40 {
        let o = decode_sequence(&m, Some(i % 3), &opts, rng)?;
        for (d, t) in o.diagnostics.iter().zip(&o.projected) {
            worst = worst.max((d.refed_norm - r).abs()).max((norm(t) - r).abs());
            extra_projections += (d.step.projections != 1) as usize;
        }
    }
    let detail = format!("max | |token| - R | over refed and emitted tokens; tokens with projections != 1: {extra_projections}");
    Ok(Check {
        passed: worst <= 1e-9 && extra_projections == 0,
        value: worst,
        tolerance: 1e-9,
        detail,
    })
}

fn ar_cache(rng: &mut Rng, _: Fault) -> Result<Check> {
    let m = ArModel::new(tiny_ar(rng.random()))?;
    let mut same = true;
    for (i, refeed) in [RefeedMode::Projected, RefeedMode::Raw, RefeedMode::Projected].into_iter().enumerate() {
        let opts = |use_cache| DecodeOptions {
            n_steps: 4,
            cfg: CfgSchedule::constant(2.0).expect("valid scale"),
            refeed,
            use_cache,
        };
        let seed: u64 = rng.random();
        let a = decode_sequence(&m, Some(i % 3), &opts(true), &mut stream(seed, 0))?;
        let b = decode_sequence(&m, Some(i % 3), &opts(false), &mut stream(seed, 0))?;
        same &= a == b;
    }
    Ok(boolean(same, "cached and recomputed decodes are bit-identical"))
}

// ---- experiments_cli

fn cli_config_round_trip(_: &mut Rng, _: Fault) -> Result<Check> {
    let c = ExperimentConfig::smoke().resolve()?;
    let back = ExperimentConfig::from_json(&c.to_json())?;
    let strict = ExperimentConfig::from_json(r#"{"unknown": 1}"#).is_err();
    Ok(boolean(back == c && back.hash() == c.hash() && strict, "resolved config survives JSON; unknown fields rejected"))
}

fn cli_drift_rerun(rng: &mut Rng, _: Fault) -> Result<Check> {
    let mut c = ExperimentConfig::smoke();
    c.seeds.master = rng.random();
    c.ar.steps = 5;
    c.decode.n_sequences = 4;
    let c = c.resolve()?;
    let a = serde_json::to_string(&run_drift(&c)?.report)?;
    let b = serde_json::to_string(&run_drift(&c)?.report)?;
    Ok(boolean(a == b, "drift report bytes identical across reruns"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_suite_passes_and_broken_projector_is_named() {
        let cfg = ExperimentConfig::default().resolve().unwrap();
        let ok = run_verify(&cfg, &["sphere_geometry".into()], Fault::None).unwrap();
        assert!(ok.passed, "{:?}", ok.failures().collect::<Vec<_>>());
        assert!(ok.results.iter().all(|r| r.suite == "sphere_geometry"));
        let bad = run_verify(&cfg, &["sphere_geometry".into()], Fault::BrokenProjector).unwrap();
        let names: Vec<&str> = bad.failures().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["projection_norm", "jacobian_is_tangent_projector"]);
    }

    #[test]
    fn unknown_suite_is_a_config_error() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(run_verify(&cfg, &["nope".into()], Fault::None), Err(Error::Config(_))));
        assert_eq!("broken-projector".parse::<Fault>().unwrap(), Fault::BrokenProjector);
    }

    #[test]
    fn every_suite_has_properties() {
        assert!(SUITES.iter().all(|s| !properties(s).is_empty()));
    }
}
