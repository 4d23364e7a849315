//! Token-level velocity head, rectified-flow loss and guided Euler sampling.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_to_sphere, SphericalToken, DEFAULT_EPS};
use crate::rng::Rng;
use crate::tensor::{mlp_forward, Axis, Graph, ParamStore, Tensor, Var};

use super::transformer::ArModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfgKind {
    Constant,
    Linear,
}

/// Guidance scale per token index. `scale = 1` disables guidance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfgSchedule {
    pub kind: CfgKind,
    pub scale: f64,
}

impl CfgSchedule {
    pub fn none() -> Self {
        Self {
            kind: CfgKind::Constant,
            scale: 1.0,
        }
    }

    pub fn constant(scale: f64) -> Result<Self> {
        Self::new(CfgKind::Constant, scale)
    }

    pub fn linear(scale: f64) -> Result<Self> {
        Self::new(CfgKind::Linear, scale)
    }

    pub fn new(kind: CfgKind, scale: f64) -> Result<Self> {
        if !(scale >= 1.0) || !scale.is_finite() {
            return Err(Error::Config(format!("cfg scale {scale} must be >= 1")));
        }
        Ok(Self { kind, scale })
    }

    /// `s(k) = 1 + (s − 1)·k/(l − 1)` for the linear kind.
    pub fn scale_at(&self, k: usize, l: usize) -> f64 {
        match self.kind {
            CfgKind::Constant => self.scale,
            CfgKind::Linear if l <= 1 => self.scale,
            CfgKind::Linear => 1.0 + (self.scale - 1.0) * k as f64 / (l - 1) as f64,
        }
    }

    /// Whether any position needs the unconditional branch.
    pub fn is_guided(&self) -> bool {
        self.scale != 1.0
    }
}

pub fn time_features(t: f64, n_freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n_freqs);
    for i in 0..n_freqs {
        let w = if n_freqs > 1 { (100f64.ln() * i as f64 / (n_freqs - 1) as f64).exp() } else { 1.0 };
        out.push((w * t).sin());
        out.push((w * t).cos());
    }
    out
}

/// `v(z_t, t, h)`; implemented by the trained head and by test stubs.
pub trait VelocityHead {
    fn velocity(&self, z_t: &[f64], t: f64, hidden: &[f64]) -> Vec<f64>;
}

impl VelocityHead for ArModel {
    fn velocity(&self, z_t: &[f64], t: f64, hidden: &[f64]) -> Vec<f64> {
        let mut x = z_t.to_vec();
        x.extend(time_features(t, self.config.time_freqs));
        x.extend_from_slice(hidden);
        self.head.apply(&self.store, &x)
    }
}

impl<F: Fn(&[f64], f64, &[f64]) -> Vec<f64>> VelocityHead for F {
    fn velocity(&self, z_t: &[f64], t: f64, hidden: &[f64]) -> Vec<f64> {
        self(z_t, t, hidden)
    }
}

/// Per-token draws for one loss evaluation.
#[derive(Debug, Clone)]
pub struct RfNoise {
    /// `[n_tokens, d]`.
    pub z0: Tensor,
    pub t: Vec<f64>,
}

impl RfNoise {
    pub fn draw(n_tokens: usize, d: usize, rng: &mut Rng) -> Self {
        let z0 = (0..n_tokens * d).map(|_| rng.sample(StandardNormal)).collect();
        let t = (0..n_tokens).map(|_| rng.random::<f64>()).collect();
        Self {
            z0: Tensor::new(vec![n_tokens, d], z0).expect("shape"),
            t,
        }
    }
}

/// Rectified-flow loss for plain `(z₁, h)` pairs and any head.
pub fn rf_loss_plain(head: &dyn VelocityHead, z1: &[Vec<f64>], hidden: &[Vec<f64>], noise: &RfNoise) -> f64 {
    let mut total = 0.0;
    for (i, (x1, h)) in z1.iter().zip(hidden).enumerate() {
        let x0 = noise.z0.row_slice(i);
        let t = noise.t[i];
        let zt: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let v = head.velocity(&zt, t, h);
        total += x1.iter().zip(x0).zip(&v).map(|((b, a), vi)| (b - a - vi).powi(2)).sum::<f64>();
    }
    total / z1.len() as f64
}

impl ArModel {
    /// Loss graph over whole sequences; `batch` pairs tokens with class-table rows.
    pub fn rf_loss_graph(&self, store: &ParamStore, batch: &[(&[Vec<f64>], usize)], noise: &RfNoise) -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let h = self.hidden_graph(&mut g, store, batch)?;
        let n = g.value(h).rows();
        let d = self.config.token_dim;
        if noise.z0.shape() != [n, d] || noise.t.len() != n {
            return Err(Error::shape("rf_loss", noise.z0.shape(), &[n, d]));
        }
        let z1_rows: Vec<Vec<f64>> = batch.iter().flat_map(|(toks, _)| toks.iter().cloned()).collect();
        let z1 = Tensor::from_rows(&z1_rows)?;
        let mut zt = vec![0.0; n * d];
        let mut target = vec![0.0; n * d];
        for i in 0..n {
            let t = noise.t[i];
            for j in 0..d {
                let (a, b) = (noise.z0.data()[i * d + j], z1.data()[i * d + j]);
                zt[i * d + j] = (1.0 - t) * a + t * b;
                target[i * d + j] = b - a;
            }
        }
        let tf: Vec<f64> = noise.t.iter().flat_map(|&t| time_features(t, self.config.time_freqs)).collect();
        let zt = g.constant(Tensor::new(vec![n, d], zt)?);
        let tf = g.constant(Tensor::new(vec![n, 2 * self.config.time_freqs], tf)?);
        let inp = g.concat(&[zt, tf, h], Axis::Cols)?;
        let v = mlp_forward(&mut g, store, inp, &self.head)?;
        let target = g.constant(Tensor::new(vec![n, d], target)?);
        let r = g.sub(target, v)?;
        let sq = g.mul(r, r)?;
        let per_token = g.sum_last(sq);
        let loss = g.mean(per_token);
        Ok((g, loss))
    }
}

/// Guided Euler integration from `z0` without any normalisation.
pub fn euler_endpoint(head: &dyn VelocityHead, z0: &[f64], hidden: &[f64], hidden_uncond: Option<&[f64]>, n_steps: usize, scale: f64) -> Vec<f64> {
    let dt = 1.0 / n_steps as f64;
    let mut z = z0.to_vec();
    for i in 0..n_steps {
        let t = i as f64 * dt;
        let vc = head.velocity(&z, t, hidden);
        let v = match hidden_uncond {
            Some(hu) if scale != 1.0 => {
                let vu = head.velocity(&z, t, hu);
                vu.iter().zip(&vc).map(|(u, c)| u + scale * (c - u)).collect()
            }
            _ => vc,
        };
        z.iter_mut().zip(&v).for_each(|(a, b)| *a += dt * b);
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiag {
    pub step: usize,
    pub pre_norm: f64,
    pub post_norm: f64,
    pub guard_fired: bool,
    pub cfg_scale: f64,
    pub projections: u32,
}

#[derive(Debug, Clone)]
pub struct NextToken {
    pub token: SphericalToken,
    /// Euler endpoint before projection.
    pub raw: Vec<f64>,
    pub diag: StepDiag,
}

/// Draw `z⁰ ~ N(0, I)`, integrate the guided velocity and project once.
#[allow(clippy::too_many_arguments)]
pub fn sample_next_token(
    head: &dyn VelocityHead,
    dim: usize,
    hidden: &[f64],
    hidden_uncond: Option<&[f64]>,
    n_steps: usize,
    scale: f64,
    radius: f64,
    rng: &mut Rng,
) -> Result<NextToken> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be >= 1".into()));
    }
    if scale != 1.0 && hidden_uncond.is_none() {
        return Err(Error::Config(format!("cfg scale {scale} needs an unconditional hidden state")));
    }
    let z0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let raw = euler_endpoint(head, &z0, hidden, hidden_uncond, n_steps, scale);
    let token = project_to_sphere(&raw, radius, DEFAULT_EPS);
    let diag = StepDiag {
        step: 0,
        pre_norm: crate::directional::norm(&raw),
        post_norm: crate::directional::norm(token.as_slice()),
        guard_fired: token.guard_fired(),
        cfg_scale: scale,
        projections: 1,
    };
    Ok(NextToken { token, raw, diag })
}
