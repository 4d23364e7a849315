//! Distributions on the unit hypersphere S^{d-1}.
//!
//! The von Mises–Fisher law is provided for density evaluation. The Power
//! Spherical law `q(u) ∝ (1 + μᵀu)^κ` additionally has an exact, rejection-free
//! sampler: the shifted cosine `C = (1 + μᵀu) / 2` is Beta((d-1)/2 + κ, (d-1)/2)
//! distributed and is drawn by inverting its CDF, a uniform tangent direction
//! is attached in a reference frame around `e₁`, and a Householder reflection
//! carries `e₁` to `μ`.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::special::{beta_inc_inv, beta_inc_inv_da, digamma, ln_bessel_i_over_pow, ln_beta, ln_gamma};
use crate::stats::{Estimate, Moments};

/// Maximum deviation of `‖u‖₂` from one accepted by [`UnitDirection::from_unit`].
pub const UNIT_TOL: f64 = 1e-12;

/// Default floor applied to `1 + μᵀu` before taking its logarithm.
pub const DENSITY_FLOOR: f64 = 1e-15;

/// A point on S^{d-1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDirection(Vec<f64>);

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl UnitDirection {
    /// Normalizes `v`; rejects zero, tiny or non-finite vectors.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidParam(format!("cannot normalize vector of norm {n}")));
        }
        if v.is_empty() {
            return Err(Error::InvalidParam("empty direction".into()));
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    /// Accepts `v` only if it already has unit norm to [`UNIT_TOL`].
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > UNIT_TOL || v.is_empty() {
            return Err(Error::InvalidParam(format!("|‖u‖ - 1| = {:e} exceeds tolerance", (n - 1.0).abs())));
        }
        Ok(Self(v))
    }

    /// Standard basis vector `e_i` in R^d.
    pub fn axis(d: usize, i: usize) -> Self {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

impl AsRef<[f64]> for UnitDirection {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `log A_{d-1}` where `A_{d-1} = 2 π^{d/2} / Γ(d/2)` is the surface area of S^{d-1}.
pub fn log_surface_area(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidParam(format!("sphere dimension d = {d} must be >= 2")));
    }
    Ok(log_area_unchecked(d as f64))
}

// Also valid for d = 1 (the two-point sphere S^0, area 2).
fn log_area_unchecked(d: f64) -> f64 {
    2f64.ln() + 0.5 * d * PI.ln() - ln_gamma(0.5 * d)
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa.is_nan() || kappa < 0.0 || kappa.is_infinite() {
        return Err(Error::InvalidParam(format!("concentration κ = {kappa} must be finite and >= 0")));
    }
    Ok(())
}

/// von Mises–Fisher parameters with the cached log-normalizer `log C_d(κ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    mu: UnitDirection,
    kappa: f64,
    log_norm: f64,
}

impl VmfParams {
    pub fn new(mu: UnitDirection, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        let d = mu.dim();
        let log_area = log_surface_area(d)?;
        let log_norm = if kappa == 0.0 {
            -log_area
        } else {
            // log C_d(κ) = ν log κ − (d/2) log 2π − log I_ν(κ), ν = d/2 − 1
            let nu = 0.5 * d as f64 - 1.0;
            nu * 2f64.ln() - 0.5 * d as f64 * (2.0 * PI).ln() - ln_bessel_i_over_pow(nu, kappa)
        };
        Ok(Self { mu, kappa, log_norm })
    }

    pub fn mu(&self) -> &UnitDirection {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub fn log_density(&self, u: &UnitDirection) -> f64 {
        assert_eq!(u.dim(), self.mu.dim(), "vmf_log_density: dimension mismatch");
        if self.kappa == 0.0 {
            return self.log_norm;
        }
        self.log_norm + self.kappa * self.mu.dot(u.as_slice())
    }
}

pub fn vmf_log_density(u: &UnitDirection, p: &VmfParams) -> f64 {
    p.log_density(u)
}

/// Power Spherical parameters with the cached log-normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSphericalParams {
    mu: UnitDirection,
    kappa: f64,
    floor: f64,
    log_norm: f64,
}

/// Noise that determines one Power Spherical draw. Holding it fixed makes the
/// sample a deterministic, differentiable function of `(μ, κ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsBase {
    /// Uniform variate in (0, 1) fed to the Beta quantile.
    pub uniform: f64,
    /// Unit vector in R^{d-1} (uniform on S^{d-2}).
    pub tangent: Vec<f64>,
}

impl PsBase {
    pub fn draw(d: usize, rng: &mut Rng) -> Self {
        let uniform: f64 = rng.sample(Open01);
        let tangent = if d >= 2 {
            sample_uniform_sphere_raw(d - 1, rng)
        } else {
            Vec::new()
        };
        Self { uniform, tangent }
    }
}

/// A Power Spherical draw with pathwise derivatives (base noise held fixed).
#[derive(Debug, Clone)]
pub struct PathwiseSample {
    pub u: UnitDirection,
    /// `μᵀu`.
    pub cosine: f64,
    pub dcos_dkappa: f64,
    /// `∂u/∂κ`.
    pub du_dkappa: Vec<f64>,
    /// Ambient Jacobian `∂u_i/∂μ_j`, row-major d×d.
    pub du_dmu: Vec<f64>,
}

impl PowerSphericalParams {
    pub fn new(mu: UnitDirection, kappa: f64) -> Result<Self> {
        Self::with_floor(mu, kappa, DENSITY_FLOOR)
    }

    /// Same as [`PowerSphericalParams::new`] with a custom floor on `1 + μᵀu`;
    /// a floor of zero lets the density reach `-∞` at `u = -μ`.
    pub fn with_floor(mu: UnitDirection, kappa: f64, floor: f64) -> Result<Self> {
        check_kappa(kappa)?;
        if floor.is_nan() || floor < 0.0 {
            return Err(Error::InvalidParam(format!("density floor {floor} must be >= 0")));
        }
        let d = mu.dim();
        let log_area = log_surface_area(d)?;
        let log_norm = if kappa == 0.0 {
            -log_area
        } else {
            ps_log_normalizer(d, kappa)
        };
        Ok(Self { mu, kappa, floor, log_norm })
    }

    pub fn mu(&self) -> &UnitDirection {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// Beta shape `α = (d-1)/2 + κ` of the shifted cosine.
    pub fn alpha(&self) -> f64 {
        0.5 * (self.dim() as f64 - 1.0) + self.kappa
    }

    /// Beta shape `β = (d-1)/2`.
    pub fn beta(&self) -> f64 {
        0.5 * (self.dim() as f64 - 1.0)
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    /// `E[μᵀu] = κ / (d - 1 + κ)`.
    pub fn mean_cosine(&self) -> f64 {
        self.kappa / (self.dim() as f64 - 1.0 + self.kappa)
    }

    pub fn log_density(&self, u: &UnitDirection) -> f64 {
        assert_eq!(u.dim(), self.dim(), "ps_log_density: dimension mismatch");
        if self.kappa == 0.0 {
            return self.log_norm;
        }
        let s = (1.0 + self.mu.dot(u.as_slice())).max(self.floor);
        self.log_norm + self.kappa * s.ln()
    }

    pub fn sample(&self, rng: &mut Rng) -> UnitDirection {
        let base = PsBase::draw(self.dim(), rng);
        self.sample_from_base(&base)
    }

    /// Deterministic map from base noise to a sample.
    pub fn sample_from_base(&self, base: &PsBase) -> UnitDirection {
        let (y, _) = self.reference_sample(base);
        UnitDirection(householder_from_e1(self.mu.as_slice(), &y))
    }

    // Sample in the frame where μ = e₁, and the shifted cosine C.
    fn reference_sample(&self, base: &PsBase) -> (Vec<f64>, f64) {
        let big_c = beta_inc_inv(self.alpha(), self.beta(), base.uniform);
        let c = 2.0 * big_c - 1.0;
        let radial = 2.0 * (big_c * (1.0 - big_c)).max(0.0).sqrt();
        let mut y = Vec::with_capacity(self.dim());
        y.push(c);
        y.extend(base.tangent.iter().map(|v| radial * v));
        (y, big_c)
    }

    /// Sample together with its pathwise derivatives with respect to κ and μ.
    ///
    /// At κ = 0 the κ-derivative is the one-sided (right) limit: α stays at
    /// (d-1)/2 > 0, so the quantile is smooth there.
    pub fn sample_pathwise(&self, base: &PsBase) -> PathwiseSample {
        let d = self.dim();
        let (y, big_c) = self.reference_sample(base);
        let c = y[0];
        let dc = 2.0 * beta_inc_inv_da(self.alpha(), self.beta(), big_c);
        let radial = 2.0 * (big_c * (1.0 - big_c)).sqrt();
        let mut dy = vec![0.0; d];
        dy[0] = dc;
        if radial > 0.0 {
            let dradial = -c / radial * dc;
            for (dst, v) in dy[1..].iter_mut().zip(&base.tangent) {
                *dst = dradial * v;
            }
        }
        let mu = self.mu.as_slice();
        let u = householder_from_e1(mu, &y);
        let du_dkappa = householder_from_e1(mu, &dy);
        let du_dmu = householder_jacobian_mu(mu, &y);
        PathwiseSample {
            u: UnitDirection(u),
            cosine: c,
            dcos_dkappa: dc,
            du_dkappa,
            du_dmu,
        }
    }

    /// Closed-form `KL(PS(μ, κ) ‖ Unif(S^{d-1}))`.
    pub fn kl_uniform_closed(&self) -> f64 {
        kl_ps_uniform_closed(self.dim(), self.kappa)
    }
}

/// `log Z_d(κ)` for the Power Spherical density `Z (1 + μᵀu)^κ`.
///
/// Integrating over the cosine with the S^{d-2} slice measure
/// `(1 - c²)^{(d-3)/2} dc · A_{d-2}` and substituting `c = 2C - 1` gives
/// `Z⁻¹ = 2^{κ+d-2} B(α, β) A_{d-2}` with α = (d-1)/2 + κ, β = (d-1)/2.
pub fn ps_log_normalizer(d: usize, kappa: f64) -> f64 {
    let df = d as f64;
    let alpha = 0.5 * (df - 1.0) + kappa;
    let beta = 0.5 * (df - 1.0);
    -((kappa + df - 2.0) * 2f64.ln() + ln_beta(alpha, beta) + log_area_unchecked(df - 1.0))
}

pub fn ps_log_density(u: &UnitDirection, p: &PowerSphericalParams) -> f64 {
    p.log_density(u)
}

pub fn ps_sample(p: &PowerSphericalParams, rng: &mut Rng) -> UnitDirection {
    p.sample(rng)
}

pub fn ps_sample_pathwise_grad(p: &PowerSphericalParams, rng: &mut Rng) -> PathwiseSample {
    let base = PsBase::draw(p.dim(), rng);
    p.sample_pathwise(&base)
}

/// `KL(PS ‖ Unif) = log Z + κ (log 2 + ψ(α) − ψ(α+β)) + log A_{d-1}`.
pub fn kl_ps_uniform_closed(d: usize, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    let df = d as f64;
    let alpha = 0.5 * (df - 1.0) + kappa;
    let beta = 0.5 * (df - 1.0);
    ps_log_normalizer(d, kappa)
        + kappa * (2f64.ln() + digamma(alpha) - digamma(alpha + beta))
        + log_area_unchecked(df)
}

/// Monte-Carlo estimate of `KL(PS(e₁, κ) ‖ Unif(S^{d-1}))`.
pub fn kl_ps_uniform(d: usize, kappa: f64, n_mc: usize, rng: &mut Rng) -> Result<Estimate> {
    if n_mc == 0 {
        return Err(Error::InvalidParam("n_mc must be >= 1".into()));
    }
    let p = PowerSphericalParams::new(UnitDirection::axis(d, 0), kappa)?;
    let log_area = log_surface_area(d)?;
    let m: Moments = (0..n_mc)
        .map(|_| {
            let u = p.sample(rng);
            p.log_density(&u) + log_area
        })
        .collect();
    Ok(m.estimate())
}

fn sample_uniform_sphere_raw(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n >= 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform draw on S^{d-1}: a normalized standard-Gaussian vector.
pub fn sample_uniform_sphere(d: usize, rng: &mut Rng) -> UnitDirection {
    UnitDirection(sample_uniform_sphere_raw(d, rng))
}

/// Apply the Householder reflection `H = I − 2wwᵀ/(wᵀw)`, `w = e₁ − μ`,
/// which maps `e₁` to `μ`. For `μ = e₁` the map is the identity.
pub fn householder_from_e1(mu: &[f64], y: &[f64]) -> Vec<f64> {
    let (wy, ww) = householder_dots(mu, y);
    if ww == 0.0 {
        return y.to_vec();
    }
    let k = 2.0 * wy / ww;
    y.iter()
        .enumerate()
        .map(|(i, &yi)| yi - k * (if i == 0 { 1.0 } else { 0.0 } - mu[i]))
        .collect()
}

fn householder_dots(mu: &[f64], y: &[f64]) -> (f64, f64) {
    let mut wy = 0.0;
    let mut ww = 0.0;
    for (i, (&m, &yi)) in mu.iter().zip(y).enumerate() {
        let w = if i == 0 { 1.0 - m } else { -m };
        wy += w * yi;
        ww += w * w;
    }
    (wy, ww)
}

/// Ambient Jacobian of `μ ↦ H(μ) y`, row-major d×d. Zero on the degenerate
/// branch `μ = e₁`.
pub fn householder_jacobian_mu(mu: &[f64], y: &[f64]) -> Vec<f64> {
    let d = mu.len();
    let (wy, ww) = householder_dots(mu, y);
    let mut jac = vec![0.0; d * d];
    if ww == 0.0 {
        return jac;
    }
    let w: Vec<f64> = (0..d).map(|i| if i == 0 { 1.0 - mu[0] } else { -mu[i] }).collect();
    // ∂u/∂w = −2[(wᵀy)/s I + w yᵀ/s − 2 (wᵀy)/s² w wᵀ], ∂w/∂μ = −I
    for i in 0..d {
        for j in 0..d {
            let delta = if i == j { wy / ww } else { 0.0 };
            jac[i * d + j] = 2.0 * (delta + w[i] * y[j] / ww - 2.0 * wy * w[i] * w[j] / (ww * ww));
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn surface_area_small_dims() {
        assert!((log_surface_area(2).unwrap() - (2.0 * PI).ln()).abs() < 1e-14);
        assert!((log_surface_area(3).unwrap() - (4.0 * PI).ln()).abs() < 1e-14);
        assert!(log_surface_area(1).is_err());
    }

    #[test]
    fn uniform_limits_are_exact() {
        let mu = UnitDirection::axis(3, 0);
        let u = UnitDirection::new(vec![0.3, -0.2, 0.9]).unwrap();
        let expect = -(4.0 * PI).ln();
        assert_eq!(VmfParams::new(mu.clone(), 0.0).unwrap().log_density(&u), expect);
        assert_eq!(PowerSphericalParams::new(mu, 0.0).unwrap().log_density(&u), expect);
    }

    #[test]
    fn normalizer_limit_is_continuous_at_zero() {
        for d in [2, 3, 8, 16] {
            let la = log_surface_area(d).unwrap();
            assert!((ps_log_normalizer(d, 1e-12) + la).abs() < 1e-10);
            let v = VmfParams::new(UnitDirection::axis(d, 0), 1e-12).unwrap();
            assert!((v.log_normalizer() + la).abs() < 1e-10);
        }
    }

    #[test]
    fn negative_kappa_rejected() {
        assert!(VmfParams::new(UnitDirection::axis(3, 0), -1.0).is_err());
        assert!(PowerSphericalParams::new(UnitDirection::axis(3, 0), -0.5).is_err());
    }

    #[test]
    fn density_peaks_at_mean() {
        let mu = UnitDirection::new(vec![1.0, 2.0, -1.0]).unwrap();
        let anti = UnitDirection::new(mu.as_slice().iter().map(|x| -x).collect()).unwrap();
        let v = VmfParams::new(mu.clone(), 3.0).unwrap();
        assert!(v.log_density(&mu) > v.log_density(&anti));
    }

    #[test]
    fn antipode_hits_the_floor() {
        let mu = UnitDirection::axis(3, 0);
        let anti = UnitDirection::new(vec![-1.0, 0.0, 0.0]).unwrap();
        let p = PowerSphericalParams::new(mu.clone(), 2.0).unwrap();
        let expect = p.log_normalizer() + 2.0 * DENSITY_FLOOR.ln();
        assert!((p.log_density(&anti) - expect).abs() < 1e-12);
        let p0 = PowerSphericalParams::with_floor(mu, 2.0, 0.0).unwrap();
        assert_eq!(p0.log_density(&anti), f64::NEG_INFINITY);
    }

    #[test]
    fn householder_maps_e1_and_is_involution() {
        let mu = UnitDirection::new(vec![0.2, -0.5, 0.4, 0.7]).unwrap();
        let e1 = UnitDirection::axis(4, 0);
        let mapped = householder_from_e1(mu.as_slice(), e1.as_slice());
        for (a, b) in mapped.iter().zip(mu.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let y = vec![0.1, 0.2, -0.3, 0.4];
        let back = householder_from_e1(mu.as_slice(), &householder_from_e1(mu.as_slice(), &y));
        for (a, b) in back.iter().zip(&y) {
            assert!((a - b).abs() < 1e-15);
        }
        // degenerate branch
        assert_eq!(householder_from_e1(e1.as_slice(), &y), y);
    }

    #[test]
    fn samples_have_unit_norm() {
        let mut rng = stream(3, 0);
        for &(d, k) in &[(2, 0.0), (3, 2.0), (16, 50.0), (8, 1e4)] {
            let p = PowerSphericalParams::new(sample_uniform_sphere(d, &mut rng), k).unwrap();
            for _ in 0..200 {
                let u = p.sample(&mut rng);
                assert!((norm(u.as_slice()) - 1.0).abs() <= UNIT_TOL);
            }
        }
    }

    #[test]
    fn kl_at_zero_is_exactly_zero() {
        let mut rng = stream(4, 0);
        let est = kl_ps_uniform(5, 0.0, 100, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(kl_ps_uniform_closed(5, 0.0), 0.0);
    }

    #[test]
    fn pathwise_kappa_derivative_matches_resampling() {
        let mut rng = stream(5, 0);
        let mu = UnitDirection::new(vec![0.3, 0.1, -0.8, 0.5]).unwrap();
        let base = PsBase::draw(4, &mut rng);
        let kappa = 3.0;
        let h = 1e-4;
        let s = PowerSphericalParams::new(mu.clone(), kappa).unwrap().sample_pathwise(&base);
        let up = PowerSphericalParams::new(mu.clone(), kappa + h).unwrap().sample_from_base(&base);
        let dn = PowerSphericalParams::new(mu, kappa - h).unwrap().sample_from_base(&base);
        for i in 0..4 {
            let fd = (up.as_slice()[i] - dn.as_slice()[i]) / (2.0 * h);
            assert!((fd - s.du_dkappa[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}
