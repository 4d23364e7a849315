//! ELBO objectives, Gaussian KL terms and the radial bound gap between the
//! Gaussian-plus-normalization objective and the spherical ELBO.
//!
//! For `z ~ q = N(m, diag(s²))` with polar form `z = r·u`, the radial
//! conditional `q(r | u) ∝ r^{d-1} q(r u)` is a one-dimensional law along the
//! ray through `u`. Its normalizer gives the pushforward density
//! `q(u) = ∫ r^{d-1} q(r u) dr`, which is all the gap estimators need.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::directional::{householder_from_e1, log_surface_area, norm, sample_uniform_sphere, UnitDirection};
use crate::error::{Error, Result};
use crate::quad::integrate;
use crate::rng::{stream, Rng};
use crate::special::ln_gamma;
use crate::stats::{Estimate, Moments};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    MeanAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussianParams {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl DiagGaussianParams {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(Error::shape("DiagGaussianParams", &[mean.len()], &[scale.len()]));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParam(format!("scale {s} must be positive")));
        }
        Ok(Self { mean, scale })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.scale)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let mut acc = -0.5 * self.dim() as f64 * LN_2PI;
        for ((x, m), s) in z.iter().zip(&self.mean).zip(&self.scale) {
            let e = (x - m) / s;
            acc -= 0.5 * e * e + s.ln();
        }
        acc
    }
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_diag_gaussian_std(p: &DiagGaussianParams, reduction: Reduction) -> f64 {
    let sum: f64 = p
        .mean
        .iter()
        .zip(&p.scale)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum();
    match reduction {
        Reduction::Sum => sum,
        Reduction::MeanAll => sum / p.dim() as f64,
    }
}

/// Log density of the χ law with `d` degrees of freedom; `−∞` for `r ≤ 0`.
pub fn chi_log_density(r: f64, d: usize) -> f64 {
    if !(r > 0.0) {
        return f64::NEG_INFINITY;
    }
    let k = d as f64;
    (k - 1.0) * r.ln() - 0.5 * r * r - (0.5 * k - 1.0) * std::f64::consts::LN_2 - ln_gamma(0.5 * k)
}

pub fn elbo_svae(recon_loglik: f64, kl_directional: f64, kl_weight: f64) -> f64 {
    recon_loglik - kl_weight * kl_directional
}

/// Polar form `z = r·u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSample {
    pub r: f64,
    pub u: UnitDirection,
}

impl PolarSample {
    pub fn from_vector(z: &[f64]) -> Result<Self> {
        let r = norm(z);
        if !(r > 0.0) {
            return Err(Error::domain("PolarSample", "zero vector has no direction"));
        }
        Ok(Self {
            r,
            u: UnitDirection::new(z.to_vec())?,
        })
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.u.as_slice().iter().map(|x| self.r * x).collect()
    }
}

/// Monte-Carlo estimate of `L_G = E_q[log p(x | N_R(z))] − KL(q ‖ N(0, I))`.
/// `log_lik(z)` is the decoder log-likelihood of the fixed data item.
pub fn objective_gaussian_norm<F>(q: &DiagGaussianParams, mut log_lik: F, radius: f64, n_mc: usize, rng: &mut Rng) -> Result<Estimate>
where
    F: FnMut(&[f64]) -> f64,
{
    if n_mc == 0 {
        return Err(Error::InvalidParam("n_mc must be >= 1".into()));
    }
    let kl = kl_diag_gaussian_std(q, Reduction::Sum);
    let recon: Moments = (0..n_mc)
        .map(|_| {
            let z = q.sample(rng);
            let n = norm(&z);
            let zr: Vec<f64> = z.iter().map(|x| radius * x / n).collect();
            log_lik(&zr)
        })
        .collect();
    let e = recon.estimate();
    Ok(Estimate {
        value: e.value - kl,
        ..e
    })
}

/// `r ↦ r^{d-1} exp(−½ a r² + b r)` restricted to a ray, integrated in a frame
/// scaled around its peak.
#[derive(Debug, Clone, Copy)]
struct Ray {
    d: usize,
    a: f64,
    b: f64,
    log_peak: f64,
    lo: f64,
    hi: f64,
    /// `ln ∫ exp(g(r) − g(peak)) dr`.
    log_mass: f64,
    rel_err: f64,
}

const RAY_TOL: f64 = 1e-12;

impl Ray {
    fn new(d: usize, a: f64, b: f64) -> Self {
        let k = d as f64 - 1.0;
        let peak = (b + (b * b + 4.0 * a * k).sqrt()) / (2.0 * a);
        let curvature = a + if peak > 0.0 { k / (peak * peak) } else { 0.0 };
        let width = 1.0 / curvature.sqrt();
        let g = |r: f64| if r > 0.0 { k * r.ln() - 0.5 * a * r * r + b * r } else if k == 0.0 { 0.0 } else { f64::NEG_INFINITY };
        let log_peak = g(peak);
        let lo = (peak - 14.0 * width).max(0.0);
        let hi = peak + 14.0 * width;
        let q = integrate(|r| (g(r) - log_peak).exp(), lo, hi, 0.0, RAY_TOL);
        Self {
            d,
            a,
            b,
            log_peak,
            lo,
            hi,
            log_mass: q.value.ln(),
            rel_err: q.error / q.value,
        }
    }

    fn log_kernel(&self, r: f64) -> f64 {
        let k = self.d as f64 - 1.0;
        k * r.ln() - 0.5 * self.a * r * r + self.b * r
    }

    /// `ln ∫ r^{d-1} exp(−½ a r² + b r) dr`.
    fn log_integral(&self) -> f64 {
        self.log_peak + self.log_mass
    }

    /// `∫ q(r|u) [ln q(r|u) − ln χ_d(r)] dr`.
    fn kl_to_chi(&self) -> (f64, f64) {
        let log_norm = self.log_integral();
        let q = integrate(
            |r| {
                if r <= 0.0 {
                    return 0.0;
                }
                let lq = self.log_kernel(r) - log_norm;
                lq.exp() * (lq - chi_log_density(r, self.d))
            },
            self.lo,
            self.hi,
            1e-13,
            RAY_TOL,
        );
        (q.value, q.error)
    }
}

fn gaussian_ray(q: &DiagGaussianParams, u: &[f64]) -> (Ray, f64) {
    let (mut a, mut b, mut c0) = (0.0, 0.0, 0.0);
    for ((ui, m), s) in u.iter().zip(&q.mean).zip(&q.scale) {
        let is2 = 1.0 / (s * s);
        a += ui * ui * is2;
        b += ui * m * is2;
        c0 += m * m * is2;
    }
    let offset = -0.5 * c0 - q.scale.iter().map(|s| s.ln()).sum::<f64>() - 0.5 * q.dim() as f64 * LN_2PI;
    (Ray::new(q.dim(), a, b), offset)
}

/// `ln q(u)` for the pushforward of `q` onto the unit sphere, with the
/// quadrature's relative error estimate.
pub fn pushforward_log_density(q: &DiagGaussianParams, u: &[f64]) -> (f64, f64) {
    let (ray, offset) = gaussian_ray(q, u);
    (offset + ray.log_integral(), ray.rel_err)
}

/// `KL(q(r | u) ‖ χ_d)` for one direction, by quadrature along the ray.
pub fn radial_kl_given_direction(q: &DiagGaussianParams, u: &[f64]) -> (f64, f64) {
    gaussian_ray(q, u).0.kl_to_chi()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundGapReport {
    pub dim: usize,
    pub radius: f64,
    pub n_mc: usize,
    pub seed: u64,
    /// (a) `KL(q(z) ‖ N(0, I))`, sampled.
    pub full_kl: Estimate,
    pub full_kl_closed: f64,
    /// (b) `KL(q(u) ‖ Unif)`.
    pub directional_kl: Estimate,
    /// (c) = (a) − (b), the expected radial KL.
    pub radial_gap: Estimate,
    /// (b) from a fresh mixture-proposal importance sampler.
    pub directional_kl_indep: Estimate,
    /// (c) from per-direction quadrature of `KL(q(r|u) ‖ χ_d)`.
    pub radial_gap_indep: Estimate,
    /// Largest relative quadrature error over all rays.
    pub quad_error: f64,
    pub recon: Estimate,
    pub l_gaussian: f64,
    pub l_spherical: f64,
    pub gap_nonnegative: bool,
    pub bound_ordering: bool,
    pub chain_rule_consistent: bool,
}

impl BoundGapReport {
    pub fn passed(&self) -> bool {
        self.gap_nonnegative && self.bound_ordering && self.chain_rule_consistent
    }
}

fn combine(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Estimate the three terms of the chain rule
/// `KL(q(z) ‖ p(z)) = KL(q(u) ‖ Unif) + E_u KL(q(r|u) ‖ χ_d)` for a Gaussian
/// posterior, together with the two objectives they induce through a
/// direction-only decoder `log_lik(R·u)`.
///
/// Reported standard errors include the quadrature error estimate.
pub fn bound_gap_check<F>(q: &DiagGaussianParams, mut log_lik: F, radius: f64, n_mc: usize, seed: u64) -> Result<BoundGapReport>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = q.dim();
    if d < 2 || n_mc < 2 {
        return Err(Error::InvalidParam(format!("bound gap needs d >= 2 and n_mc >= 2 (d={d}, n_mc={n_mc})")));
    }
    let log_area = log_surface_area(d)?;
    let prior = DiagGaussianParams::standard(d);
    let mut rng = stream(seed, 0);
    let (mut ma, mut mb, mut mc, mut recon) = (Moments::new(), Moments::new(), Moments::new(), Moments::new());
    let mut quad_error: f64 = 0.0;
    let mut directions = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let z = q.sample(&mut rng);
        let a = q.log_density(&z) - prior.log_density(&z);
        let n = norm(&z);
        let u: Vec<f64> = z.iter().map(|x| x / n).collect();
        let (lq, err) = pushforward_log_density(q, &u);
        quad_error = quad_error.max(err);
        let b = lq + log_area;
        ma.push(a);
        mb.push(b);
        mc.push(a - b);
        let zr: Vec<f64> = u.iter().map(|x| radius * x).collect();
        recon.push(log_lik(&zr));
        directions.push(u);
    }

    // independent (c): quadrature along fresh directions drawn from q(u)
    let mut rng_c = stream(seed, 1);
    let mut mc_ind = Moments::new();
    let mut quad_abs: f64 = 0.0;
    for _ in 0..n_mc {
        let z = q.sample(&mut rng_c);
        let n = norm(&z);
        let u: Vec<f64> = z.iter().map(|x| x / n).collect();
        let (kl, err) = radial_kl_given_direction(q, &u);
        quad_abs = quad_abs.max(err);
        mc_ind.push(kl);
    }

    // independent (b): proposal ½ q(u) + ½ Unif, weights bounded by 2
    let mut rng_b = stream(seed, 2);
    let mut mb_ind = Moments::new();
    for _ in 0..n_mc {
        let u: Vec<f64> = if rng_b.random::<bool>() {
            let z = q.sample(&mut rng_b);
            let n = norm(&z);
            z.iter().map(|x| x / n).collect()
        } else {
            sample_uniform_sphere(d, &mut rng_b).into_vec()
        };
        let (lq, err) = pushforward_log_density(q, &u);
        quad_error = quad_error.max(err);
        let log_ratio = lq + log_area;
        let w = 2.0 / (1.0 + (-log_ratio).exp());
        mb_ind.push(w * log_ratio);
    }

    let with_quad = |e: Estimate, abs: f64| Estimate {
        stderr: combine(e.stderr, abs),
        ..e
    };
    let qerr = quad_error.max(f64::EPSILON) * d as f64;
    let full_kl = ma.estimate();
    let directional_kl = with_quad(mb.estimate(), qerr);
    let radial_gap = with_quad(mc.estimate(), qerr);
    let directional_kl_indep = with_quad(mb_ind.estimate(), qerr);
    let radial_gap_indep = with_quad(mc_ind.estimate(), quad_abs.max(qerr));
    let full_kl_closed = kl_diag_gaussian_std(q, Reduction::Sum);
    let r = recon.estimate();
    let l_gaussian = r.value - full_kl.value;
    let l_spherical = r.value - directional_kl.value;

    let close = |x: &Estimate, y: f64, extra: f64| (x.value - y).abs() <= 4.0 * combine(x.stderr, extra);
    let chain_rule_consistent = close(&full_kl, full_kl_closed, 0.0)
        && close(&directional_kl, directional_kl_indep.value, directional_kl_indep.stderr)
        && close(&radial_gap, radial_gap_indep.value, radial_gap_indep.stderr)
        && (full_kl_closed - directional_kl_indep.value - radial_gap_indep.value).abs()
            <= 4.0 * combine(directional_kl_indep.stderr, radial_gap_indep.stderr);
    Ok(BoundGapReport {
        dim: d,
        radius,
        n_mc,
        seed,
        gap_nonnegative: radial_gap.value >= -3.0 * radial_gap.stderr,
        bound_ordering: l_gaussian <= l_spherical + 3.0 * radial_gap.stderr,
        chain_rule_consistent,
        full_kl,
        full_kl_closed,
        directional_kl,
        radial_gap,
        directional_kl_indep,
        radial_gap_indep,
        quad_error,
        recon: r,
        l_gaussian,
        l_spherical,
    })
}

pub const ACG_SYMMETRY_TOL: f64 = 1e-12;

/// Angular central Gaussian (projected normal). With `mean = None` the law is
/// zero-mean ACG and has a closed-form density; otherwise the density of the
/// normalized `N(μ_g, Σ)` is integrated along the ray.
#[derive(Debug, Clone)]
pub struct AcgParams {
    sigma_inv: DMatrix<f64>,
    mean: Option<Vec<f64>>,
    /// `ln det Σ⁻¹`.
    log_det_inv: f64,
    /// Cholesky factor of Σ for sampling.
    sigma_chol: DMatrix<f64>,
}

impl AcgParams {
    pub fn new(sigma_inv: DMatrix<f64>, mean: Option<Vec<f64>>) -> Result<Self> {
        let d = sigma_inv.nrows();
        if sigma_inv.ncols() != d || d < 2 {
            return Err(Error::shape("AcgParams", &[sigma_inv.nrows(), sigma_inv.ncols()], &[d, d]));
        }
        if let Some(m) = &mean {
            if m.len() != d {
                return Err(Error::shape("AcgParams", &[d], &[m.len()]));
            }
        }
        if (&sigma_inv - sigma_inv.transpose()).amax() > ACG_SYMMETRY_TOL {
            return Err(Error::InvalidParam("sigma_inv is not symmetric".into()));
        }
        let chol = sigma_inv
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParam("sigma_inv is not positive definite".into()))?;
        let log_det_inv = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let sigma = chol.inverse();
        let sigma_sym = 0.5 * (&sigma + sigma.transpose());
        let sigma_chol = sigma_sym
            .cholesky()
            .ok_or_else(|| Error::InvalidParam("sigma is not positive definite".into()))?
            .l();
        Ok(Self {
            sigma_inv,
            mean,
            log_det_inv,
            sigma_chol,
        })
    }

    pub fn diagonal(sigma: &[f64]) -> Result<Self> {
        let inv: Vec<f64> = sigma.iter().map(|s| 1.0 / s).collect();
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(inv)), None)
    }

    pub fn dim(&self) -> usize {
        self.sigma_inv.nrows()
    }

    fn quad_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += u[i] * self.sigma_inv[(i, j)] * v[j];
            }
        }
        s
    }

    /// Normalize a `N(μ_g, Σ)` draw.
    pub fn sample(&self, rng: &mut Rng) -> UnitDirection {
        let d = self.dim();
        let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut z: Vec<f64> = (0..d).map(|i| (0..=i).map(|j| self.sigma_chol[(i, j)] * e[j]).sum()).collect();
        if let Some(m) = &self.mean {
            z.iter_mut().zip(m).for_each(|(x, mi)| *x += mi);
        }
        UnitDirection::new(z).expect("nonzero with probability one")
    }
}

pub fn acg_log_density(u: &UnitDirection, p: &AcgParams) -> f64 {
    let d = p.dim() as f64;
    let uu = p.quad_form(u.as_slice(), u.as_slice());
    match &p.mean {
        None => ln_gamma(0.5 * d) - std::f64::consts::LN_2 - 0.5 * d * std::f64::consts::PI.ln() + 0.5 * p.log_det_inv - 0.5 * d * uu.ln(),
        Some(m) => {
            let b = p.quad_form(u.as_slice(), m);
            let c0 = p.quad_form(m, m);
            let ray = Ray::new(p.dim(), uu, b);
            -0.5 * c0 + 0.5 * p.log_det_inv - 0.5 * d * LN_2PI + ray.log_integral()
        }
    }
}

/// Haar-distributed orthogonal `n × n` matrix (QR of a Gaussian matrix with
/// the signs of `R`'s diagonal folded into `Q`).
pub(crate) fn random_orthogonal(n: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut o = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            o.column_mut(j).neg_mut();
        }
    }
    o
}

/// Random rotation fixing `mu`: conjugate a random orthogonal map on `e₁^⊥`
/// by the Householder reflection sending `e₁` to `mu`.
fn random_rotation_fixing(mu: &[f64], rng: &mut Rng) -> DMatrix<f64> {
    let d = mu.len();
    let o = random_orthogonal(d - 1, rng);
    let mut block = DMatrix::<f64>::identity(d, d);
    block.view_mut((1, 1), (d - 1, d - 1)).copy_from(&o);
    let h = DMatrix::from_fn(d, d, |i, j| {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        householder_from_e1(mu, &e)[i]
    });
    &h * block * &h
}

/// Largest `|log f(Qu) − log f(u)|` over `n_rot` random rotations `Q` with
/// `Qμ = μ`, each tested on `n_points` uniform directions.
pub fn axial_symmetry_probe<F>(log_density: F, mu: &UnitDirection, n_rot: usize, n_points: usize, rng: &mut Rng) -> f64
where
    F: Fn(&UnitDirection) -> f64,
{
    let d = mu.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..n_rot {
        let q = random_rotation_fixing(mu.as_slice(), rng);
        for _ in 0..n_points {
            let u = sample_uniform_sphere(d, rng);
            let qu: Vec<f64> = (0..d).map(|i| (0..d).map(|j| q[(i, j)] * u.as_slice()[j]).sum()).collect();
            let qu = UnitDirection::new(qu).expect("rotation preserves norm");
            let dev = (log_density(&qu) - log_density(&u)).abs();
            if dev.is_nan() {
                return f64::INFINITY;
            }
            worst = worst.max(dev);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directional::PowerSphericalParams;
    use crate::quad::integrate;

    #[test]
    fn kl_hand_values() {
        assert_eq!(kl_diag_gaussian_std(&DiagGaussianParams::standard(4), Reduction::Sum), 0.0);
        let p = DiagGaussianParams::new(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!((kl_diag_gaussian_std(&p, Reduction::Sum) - 0.5).abs() < 1e-15);
        assert!((kl_diag_gaussian_std(&p, Reduction::MeanAll) - 0.25).abs() < 1e-15);
        assert!(DiagGaussianParams::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussianParams::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn chi_density_folds_normal_at_d1() {
        for &r in &[0.1, 1.0, 2.5] {
            let folded = std::f64::consts::LN_2 - 0.5 * LN_2PI - 0.5 * r * r;
            assert!((chi_log_density(r, 1) - folded).abs() < 1e-14);
        }
        assert_eq!(chi_log_density(0.0, 3), f64::NEG_INFINITY);
        assert_eq!(chi_log_density(-1.0, 3), f64::NEG_INFINITY);
    }

    #[test]
    fn chi_density_integrates_to_one() {
        for d in [1usize, 2, 3, 8, 16] {
            let q = integrate(|r| chi_log_density(r, d).exp(), 0.0, 20.0, 1e-14, 1e-13);
            assert!((q.value - 1.0).abs() < 1e-8, "d={d}: {}", q.value);
        }
    }

    #[test]
    fn chi_mode_at_sqrt_d_minus_one() {
        for d in [2usize, 5, 16] {
            let m = ((d - 1) as f64).sqrt();
            let slope = |r: f64| (chi_log_density(r + 1e-6, d) - chi_log_density(r - 1e-6, d)) / 2e-6;
            assert!(slope(m - 1e-3) > 0.0 && slope(m + 1e-3) < 0.0);
        }
    }

    #[test]
    fn elbo_plug_in() {
        assert_eq!(elbo_svae(-3.0, 7.0, 0.0), -3.0);
        assert!((elbo_svae(-10.0, 2.0, 0.004) + 10.008).abs() < 1e-12);
    }

    #[test]
    fn polar_round_trip() {
        let z = vec![0.3, -4.0, 1.2];
        let p = PolarSample::from_vector(&z).unwrap();
        let back = p.to_vector();
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(PolarSample::from_vector(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn constant_decoder_gives_const_minus_kl() {
        let q = DiagGaussianParams::new(vec![0.5, -1.0, 0.2], vec![0.7, 1.3, 0.4]).unwrap();
        let mut rng = stream(3, 0);
        let e = objective_gaussian_norm(&q, |_| -2.0, 3f64.sqrt(), 100, &mut rng).unwrap();
        assert!((e.value - (-2.0 - kl_diag_gaussian_std(&q, Reduction::Sum))).abs() < 1e-14);
        let prior = DiagGaussianParams::standard(3);
        let e = objective_gaussian_norm(&prior, |_| -2.0, 1.0, 10, &mut rng).unwrap();
        assert_eq!(e.value, -2.0);
    }

    #[test]
    fn standard_pushforward_is_uniform() {
        let q = DiagGaussianParams::standard(5);
        let mut rng = stream(4, 0);
        let u = sample_uniform_sphere(5, &mut rng);
        let (lq, _) = pushforward_log_density(&q, u.as_slice());
        assert!((lq + log_surface_area(5).unwrap()).abs() < 1e-12);
        let (kl, _) = radial_kl_given_direction(&q, u.as_slice());
        assert!(kl.abs() < 1e-11, "{kl}");
    }

    #[test]
    fn pushforward_density_integrates_to_one_on_s2() {
        // ∫_{S²} q(u) dA via spherical coordinates
        let q = DiagGaussianParams::new(vec![1.5, -0.5, 0.3], vec![0.6, 1.2, 0.9]).unwrap();
        let total = integrate(
            |th| {
                integrate(
                    |ph| {
                        let u = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                        pushforward_log_density(&q, &u).0.exp() * th.sin()
                    },
                    0.0,
                    2.0 * std::f64::consts::PI,
                    1e-10,
                    1e-9,
                )
                .value
            },
            0.0,
            std::f64::consts::PI,
            1e-9,
            1e-8,
        );
        assert!((total.value - 1.0).abs() < 1e-6, "{}", total.value);
    }

    #[test]
    fn isotropic_gap_vanishes() {
        let q = DiagGaussianParams::standard(4);
        let r = bound_gap_check(&q, |z| -z[0] * z[0], 2.0, 2000, 11).unwrap();
        assert!(r.radial_gap.within(0.0, 3.0), "{:?}", r.radial_gap);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn shifted_posterior_has_positive_gap() {
        let q = DiagGaussianParams::new(vec![2.0, 0.0, 0.0], vec![1.0; 3]).unwrap();
        let r = bound_gap_check(&q, |_| 0.0, 3f64.sqrt(), 4000, 12).unwrap();
        assert!(r.radial_gap.value > 3.0 * r.radial_gap.stderr, "{:?}", r.radial_gap);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn acg_identity_is_uniform() {
        let p = AcgParams::diagonal(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        let u = UnitDirection::new(vec![0.1, 0.7, -0.2, 0.4]).unwrap();
        assert!((acg_log_density(&u, &p) + log_surface_area(4).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn acg_rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(AcgParams::new(asym, None).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(AcgParams::new(indefinite, None).is_err());
    }

    #[test]
    fn acg_is_antipodally_symmetric() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let p = AcgParams::new(m, None).unwrap();
        let mut rng = stream(5, 0);
        for _ in 0..100 {
            let u = sample_uniform_sphere(3, &mut rng);
            let neg = UnitDirection::new(u.as_slice().iter().map(|x| -x).collect()).unwrap();
            assert!((acg_log_density(&u, &p) - acg_log_density(&neg, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn nonzero_mean_acg_matches_gaussian_pushforward() {
        let p = AcgParams::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.25, 1.0 / 9.0])), Some(vec![0.5, 1.0, -1.0])).unwrap();
        let q = DiagGaussianParams::new(vec![0.5, 1.0, -1.0], vec![1.0, 2.0, 3.0]).unwrap();
        let u = [0.6, 0.0, 0.8];
        assert!((acg_log_density(&UnitDirection::new(u.to_vec()).unwrap(), &p) - pushforward_log_density(&q, &u).0).abs() < 1e-10);
    }

    #[test]
    fn symmetry_probe_separates_ps_from_acg() {
        let mut rng = stream(6, 0);
        let mu = UnitDirection::new(vec![0.3, -0.5, 0.2, 0.6, 0.5]).unwrap();
        for kappa in [0.0, 1.0, 10.0, 60.0] {
            let ps = PowerSphericalParams::new(mu.clone(), kappa).unwrap();
            let dev = axial_symmetry_probe(|u| ps.log_density(u), &mu, 10, 100, &mut rng);
            assert!(dev <= 1e-10, "κ={kappa}: {dev}");
        }
        let uniform = |_: &UnitDirection| -log_surface_area(3).unwrap();
        assert!(axial_symmetry_probe(uniform, &UnitDirection::axis(3, 0), 5, 50, &mut rng) <= 1e-12);
        let acg = AcgParams::diagonal(&[1.0, 4.0, 9.0]).unwrap();
        let dev = axial_symmetry_probe(|u| acg_log_density(u, &acg), &UnitDirection::axis(3, 0), 10, 100, &mut rng);
        assert!(dev > 0.1, "{dev}");
    }
}
