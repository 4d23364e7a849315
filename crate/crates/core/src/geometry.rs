//! The constant-norm projection `N_R(z) = R z / max(‖z‖, ε)`, its tangent-space
//! Jacobian at points of the radius-R sphere, and first-order checks of how
//! refeeding errors propagate through it.

use serde::{Deserialize, Serialize};

use crate::directional::{dot, norm};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-7;

/// Tolerance on `|‖z̄‖ − R|` for base points handed to [`tangent_projector`].
pub const BASE_POINT_TOL: f64 = 1e-6;

/// A vector produced by [`project_to_sphere`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalToken {
    components: Vec<f64>,
    radius: f64,
    /// Set when `‖z‖ < ε` and the guard divided by ε instead of `‖z‖`.
    guard_fired: bool,
}

impl SphericalToken {
    /// Wraps a vector assumed to lie on the radius-R sphere (checked to
    /// [`BASE_POINT_TOL`]).
    pub fn on_sphere(components: Vec<f64>, radius: f64) -> Result<Self> {
        let n = norm(&components);
        if radius <= 0.0 || (n - radius).abs() > BASE_POINT_TOL {
            return Err(Error::InvalidParam(format!(
                "point of norm {n} is not on the sphere of radius {radius}"
            )));
        }
        Ok(Self {
            components,
            radius,
            guard_fired: false,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.components
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.components
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn guard_fired(&self) -> bool {
        self.guard_fired
    }
}

/// `N_R(z) = R z / max(‖z‖₂, ε)`.
pub fn project_to_sphere(z: &[f64], radius: f64, eps: f64) -> SphericalToken {
    assert!(radius > 0.0, "project_to_sphere: radius must be positive");
    let n = norm(z);
    let guard_fired = n < eps;
    let denom = if guard_fired { eps } else { n };
    SphericalToken {
        components: z.iter().map(|x| radius * x / denom).collect(),
        radius,
        guard_fired,
    }
}

/// The projector `P = I − z̄z̄ᵀ/R²`, stored through its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentProjector {
    base: Vec<f64>,
    radius: f64,
}

pub fn tangent_projector(z_bar: &SphericalToken) -> Result<TangentProjector> {
    let n = norm(z_bar.as_slice());
    if (n - z_bar.radius()).abs() > BASE_POINT_TOL {
        return Err(Error::InvalidParam(format!(
            "base point norm {n} is off the sphere of radius {}",
            z_bar.radius()
        )));
    }
    Ok(TangentProjector {
        base: z_bar.as_slice().to_vec(),
        radius: z_bar.radius(),
    })
}

impl TangentProjector {
    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// `Pv = v − (z̄ᵀv) z̄ / R²`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let k = dot(&self.base, v) / (self.radius * self.radius);
        v.iter().zip(&self.base).map(|(x, b)| x - k * b).collect()
    }

    /// Dense row-major d×d matrix.
    pub fn to_matrix(&self) -> Vec<f64> {
        let d = self.dim();
        let r2 = self.radius * self.radius;
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = if i == j { 1.0 } else { 0.0 } - self.base[i] * self.base[j] / r2;
            }
        }
        m
    }
}

/// `v = α z̄ + t` with `z̄ᵀt = 0`.
pub fn decompose_radial_tangential(v: &[f64], z_bar: &SphericalToken) -> (f64, Vec<f64>) {
    let r = z_bar.radius();
    let alpha = dot(z_bar.as_slice(), v) / (r * r);
    let t = v.iter().zip(z_bar.as_slice()).map(|(x, b)| x - alpha * b).collect();
    (alpha, t)
}

/// Residual ladder for `N_R(z̄ + sΔ) − z̄ − sPΔ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub steps: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Log-log slope over residuals above the roundoff floor; `None` when
    /// fewer than two residuals clear it (e.g. purely radial Δ).
    pub order: Option<f64>,
    /// Every residual is below the roundoff floor.
    pub exact: bool,
    pub passed: bool,
}

pub const STABILITY_STEPS: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
pub const MIN_ORDER: f64 = 1.9;

pub fn first_order_stability_check(z_bar: &SphericalToken, delta: &[f64]) -> Result<StabilityReport> {
    let proj = tangent_projector(z_bar)?;
    if delta.len() != z_bar.dim() {
        return Err(Error::shape("first_order_stability_check", &[z_bar.dim()], &[delta.len()]));
    }
    let r = z_bar.radius();
    let p_delta = proj.apply(delta);
    let floor = 1e-13 * r.max(1.0) * norm(delta).max(1.0);
    let mut residuals = Vec::with_capacity(STABILITY_STEPS.len());
    for &s in &STABILITY_STEPS {
        let moved: Vec<f64> = z_bar.as_slice().iter().zip(delta).map(|(b, x)| b + s * x).collect();
        let projected = project_to_sphere(&moved, r, DEFAULT_EPS);
        let res: Vec<f64> = projected
            .as_slice()
            .iter()
            .zip(z_bar.as_slice())
            .zip(&p_delta)
            .map(|((n, b), pd)| n - b - s * pd)
            .collect();
        residuals.push(norm(&res));
    }
    let pts: Vec<(f64, f64)> = STABILITY_STEPS
        .iter()
        .zip(&residuals)
        .filter(|(_, &res)| res > floor)
        .map(|(&s, &res)| (s.ln(), res.ln()))
        .collect();
    let exact = pts.is_empty();
    let order = (pts.len() >= 2).then(|| least_squares_slope(&pts));
    let passed = exact || order.is_some_and(|o| o >= MIN_ORDER);
    Ok(StabilityReport {
        steps: STABILITY_STEPS.to_vec(),
        residuals,
        order,
        exact,
        passed,
    })
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Dense row-major matrix with explicit extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::new", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols).map(|row| dot(row, v)).collect()
    }

    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &vi) in self.data.chunks(self.cols).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
        out
    }
}

/// Spectral norm `σ_max(A)` by power iteration on `AᵀA`.
pub fn spectral_norm(a: &Matrix) -> f64 {
    spectral_norm_of(a.cols, |v| a.matvec(v), |w| a.matvec_t(w))
}

fn spectral_norm_of(n: usize, fwd: impl Fn(&[f64]) -> Vec<f64>, adj: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    // deterministic, non-degenerate start vector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut sigma = 0.0;
    for _ in 0..5000 {
        let w = adj(&fwd(&v));
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let s = nw.sqrt();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if (s - sigma).abs() <= 1e-15 * s && change < 1e-12 {
            sigma = s;
            break;
        }
        sigma = s;
    }
    sigma
}

/// Linearized one-step refeeding error and the quantities that bound it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefeedReport {
    /// `P (J e + η)`.
    pub error_next: Vec<f64>,
    /// `z̄ᵀ error_next / R²`.
    pub radial_component: f64,
    pub norm_pj: f64,
    pub norm_e: f64,
    pub norm_p_eta: f64,
    /// `‖P J‖₂ ‖e‖ + ‖P η‖`.
    pub bound: f64,
    pub bound_holds: bool,
}

pub fn refeed_error_propagation(
    jac: &Matrix,
    z_bar: &SphericalToken,
    prefix_error: &[f64],
    eta: &[f64],
) -> Result<RefeedReport> {
    let d = z_bar.dim();
    if jac.rows != d || jac.cols != prefix_error.len() {
        return Err(Error::shape("refeed_error_propagation", &[jac.rows, jac.cols], &[d, prefix_error.len()]));
    }
    if eta.len() != d {
        return Err(Error::shape("refeed_error_propagation", &[d], &[eta.len()]));
    }
    let proj = tangent_projector(z_bar)?;
    let je = jac.matvec(prefix_error);
    let pre: Vec<f64> = je.iter().zip(eta).map(|(a, b)| a + b).collect();
    let error_next = proj.apply(&pre);
    let r = z_bar.radius();
    let radial_component = dot(z_bar.as_slice(), &error_next) / (r * r);
    let norm_pj = spectral_norm_of(jac.cols, |v| proj.apply(&jac.matvec(v)), |w| jac.matvec_t(&proj.apply(w)));
    let norm_e = norm(prefix_error);
    let norm_p_eta = norm(&proj.apply(eta));
    let bound = norm_pj * norm_e + norm_p_eta;
    let lhs = norm(&error_next);
    Ok(RefeedReport {
        radial_component,
        norm_pj,
        norm_e,
        norm_p_eta,
        bound,
        bound_holds: lhs <= bound * (1.0 + 1e-9) + 1e-15,
        error_next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let t = project_to_sphere(&[3.0, 4.0], 1.0, DEFAULT_EPS);
        assert!((t.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((t.as_slice()[1] - 0.8).abs() < 1e-15);
        assert!(!t.guard_fired());
    }

    #[test]
    fn guard_fires_below_eps() {
        let z = [1e-9, 0.0, 0.0];
        let t = project_to_sphere(&z, 1.0, DEFAULT_EPS);
        assert!(t.guard_fired());
        assert!((t.as_slice()[0] - 1e-9 / DEFAULT_EPS).abs() < 1e-18);
    }

    #[test]
    fn axis_aligned_projector() {
        let zb = SphericalToken::on_sphere(vec![2.0, 0.0, 0.0], 2.0).unwrap();
        let p = tangent_projector(&zb).unwrap().to_matrix();
        assert_eq!(p, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn off_sphere_base_rejected() {
        let zb = SphericalToken {
            components: vec![1.0, 1.0],
            radius: 1.0,
            guard_fired: false,
        };
        assert!(tangent_projector(&zb).is_err());
    }

    #[test]
    fn radial_decomposition_cases() {
        let zb = SphericalToken::on_sphere(vec![0.0, 3.0, 4.0], 5.0).unwrap();
        let (a, t) = decompose_radial_tangential(zb.as_slice(), &zb);
        assert!((a - 1.0).abs() < 1e-15 && norm(&t) < 1e-15);
        let tangent = [1.0, 4.0, -3.0];
        let (a, t) = decompose_radial_tangential(&tangent, &zb);
        assert!(a.abs() < 1e-15);
        assert_eq!(t, tangent.to_vec());
    }

    #[test]
    fn radial_perturbation_is_exact() {
        let zb = SphericalToken::on_sphere(vec![0.0, 3.0, 4.0], 5.0).unwrap();
        let rep = first_order_stability_check(&zb, zb.as_slice()).unwrap();
        assert!(rep.exact && rep.passed, "{rep:?}");
    }

    #[test]
    fn tangential_ladder_is_quadratic() {
        let zb = SphericalToken::on_sphere(vec![0.0, 3.0, 4.0], 5.0).unwrap();
        let rep = first_order_stability_check(&zb, &[1.0, 4.0, -3.0]).unwrap();
        let order = rep.order.unwrap();
        assert!((order - 2.0).abs() < 0.1, "{rep:?}");
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, -5.0]).unwrap();
        assert!((spectral_norm(&a) - 5.0).abs() < 1e-10);
    }

    #[test]
    fn refeed_shape_mismatch() {
        let zb = SphericalToken::on_sphere(vec![1.0, 0.0], 1.0).unwrap();
        let j = Matrix::new(2, 2, vec![1.0; 4]).unwrap();
        assert!(refeed_error_propagation(&j, &zb, &[1.0, 2.0, 3.0], &[0.0, 0.0]).is_err());
    }
}
