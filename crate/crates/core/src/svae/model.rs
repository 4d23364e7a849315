use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::{DiagGaussianParams, Reduction};
use crate::directional::{PowerSphericalParams, PsBase, UnitDirection};
use crate::error::{Error, Result};
use crate::geometry::{project_to_sphere, DEFAULT_EPS};
use crate::rng::{child_seed, stream, Rng};
use crate::tensor::{mlp_forward, Activation, Axis, Graph, Mlp, ParamStore, Tensor, Var};

fn default_mean_penalty() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PosteriorFamily {
    /// Learned diagonal Gaussian with a weighted KL to N(0, I).
    DiagGaussian { kl_weight: f64 },
    /// Gaussian with a non-learned scale `σ = |ξ|·c_sigma`, `ξ ~ N(0, 1)`,
    /// redrawn every step unless `per_model` is set.
    SigmaVae {
        c_sigma: f64,
        #[serde(default)]
        per_model: bool,
        /// Weight on `½‖μ‖²`, the mean part of the Gaussian KL.
        #[serde(default = "default_mean_penalty")]
        mean_penalty: f64,
    },
    /// Diagonal Gaussian whose samples are projected to radius R before decoding.
    GaussianNorm { kl_weight: f64 },
    /// Power Spherical posterior scaled to radius R.
    PowerSpherical { kl_weight: f64 },
}

impl PosteriorFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} must be >= 0 and finite, got {v}")));
        match *self {
            Self::DiagGaussian { kl_weight } | Self::GaussianNorm { kl_weight } | Self::PowerSpherical { kl_weight } => {
                if !(kl_weight >= 0.0 && kl_weight.is_finite()) {
                    return bad("kl_weight", kl_weight);
                }
            }
            Self::SigmaVae { c_sigma, mean_penalty, .. } => {
                if !(c_sigma > 0.0 && c_sigma.is_finite()) {
                    return Err(Error::Config(format!("c_sigma must be positive, got {c_sigma}")));
                }
                if !(mean_penalty >= 0.0 && mean_penalty.is_finite()) {
                    return bad("mean_penalty", mean_penalty);
                }
            }
        }
        Ok(())
    }

    /// Whether decoder inputs are constrained to the radius-R sphere.
    pub fn is_normalized(&self) -> bool {
        matches!(self, Self::GaussianNorm { .. } | Self::PowerSpherical { .. })
    }

    pub fn kl_weight(&self) -> f64 {
        match *self {
            Self::DiagGaussian { kl_weight } | Self::GaussianNorm { kl_weight } | Self::PowerSpherical { kl_weight } => kl_weight,
            Self::SigmaVae { mean_penalty, .. } => mean_penalty,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::DiagGaussian { kl_weight } => format!("G-{kl_weight}"),
            Self::SigmaVae { c_sigma, .. } => format!("F-{c_sigma}"),
            Self::GaussianNorm { kl_weight } => format!("N-{kl_weight}"),
            Self::PowerSpherical { kl_weight } => format!("S-{kl_weight}"),
        }
    }

    fn head_width(&self, d: usize) -> usize {
        match self {
            Self::DiagGaussian { .. } | Self::GaussianNorm { .. } => 2 * d,
            Self::SigmaVae { .. } => d,
            Self::PowerSpherical { .. } => d + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvaeConfig {
    pub family: PosteriorFamily,
    pub latent_dim: usize,
    /// Defaults to √d.
    pub radius: Option<f64>,
    /// Square patch side; each patch is one latent token.
    pub patch: usize,
    pub hidden: usize,
    /// Number of affine layers in each of encoder and decoder.
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub kl_reduction: Reduction,
    pub seed: u64,
    /// Seed of the minibatch order, shared across variants.
    pub data_seed: u64,
}

impl Default for SvaeConfig {
    fn default() -> Self {
        Self {
            family: PosteriorFamily::PowerSpherical { kl_weight: 0.004 },
            latent_dim: 16,
            radius: None,
            patch: 4,
            hidden: 256,
            layers: 3,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            kl_reduction: Reduction::MeanAll,
            seed: 0,
            data_seed: 0,
        }
    }
}

impl SvaeConfig {
    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or((self.latent_dim as f64).sqrt())
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        self.family.validate()?;
        if self.latent_dim < 2 {
            return Err(Error::Config("latent_dim must be >= 2".into()));
        }
        if self.patch == 0 || height % self.patch != 0 || width % self.patch != 0 {
            return Err(Error::Config(format!("patch {} does not tile {height}x{width}", self.patch)));
        }
        if self.layers == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("layers, hidden and batch_size must be positive".into()));
        }
        if !(self.radius() > 0.0) {
            return Err(Error::Config("radius must be positive".into()));
        }
        Ok(())
    }
}

/// Per-token posterior produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    Gaussian(DiagGaussianParams),
    /// Mean of a fixed-scale Gaussian.
    FixedScale(Vec<f64>),
    Spherical(PowerSphericalParams),
}

/// Exogenous randomness for one latent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise {
    pub eps: Vec<f64>,
    /// Standard normal behind the σ-VAE scale.
    pub xi: f64,
    pub base: PsBase,
}

impl LatentNoise {
    pub fn draw(d: usize, rng: &mut Rng) -> Self {
        Self {
            eps: (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            xi: rng.sample(StandardNormal),
            base: PsBase::draw(d, rng),
        }
    }

    pub fn zero(d: usize) -> Self {
        let mut tangent = vec![0.0; d - 1];
        tangent[0] = 1.0;
        Self {
            eps: vec![0.0; d],
            xi: 0.0,
            base: PsBase { uniform: 0.5, tangent },
        }
    }
}

/// Noise for a whole training batch of `n` tokens.
#[derive(Debug, Clone)]
pub struct BatchNoise {
    pub eps: Tensor,
    pub sigma: f64,
    pub uniform: Vec<f64>,
    pub tangent: Tensor,
}

/// Split an image into raster-ordered square patches.
pub fn patchify(img: &[f64], height: usize, width: usize, patch: usize) -> Vec<Vec<f64>> {
    let mut out = vec![];
    for pi in 0..height / patch {
        for pj in 0..width / patch {
            let mut tok = Vec::with_capacity(patch * patch);
            for a in 0..patch {
                let row = (pi * patch + a) * width + pj * patch;
                tok.extend_from_slice(&img[row..row + patch]);
            }
            out.push(tok);
        }
    }
    out
}

pub fn unpatchify(tokens: &[Vec<f64>], height: usize, width: usize, patch: usize) -> Vec<f64> {
    let mut img = vec![0.0; height * width];
    let cols = width / patch;
    for (t, tok) in tokens.iter().enumerate() {
        let (pi, pj) = (t / cols, t % cols);
        for a in 0..patch {
            let row = (pi * patch + a) * width + pj * patch;
            img[row..row + patch].copy_from_slice(&tok[a * patch..(a + 1) * patch]);
        }
    }
    img
}

/// Values produced by one loss evaluation.
pub struct LossGraph {
    pub graph: Graph,
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
    /// Latents as delivered to the decoder, `[tokens, d]`.
    pub decoder_input: Var,
}

#[derive(Debug, Clone)]
pub struct SvaeModel {
    pub config: SvaeConfig,
    pub height: usize,
    pub width: usize,
    pub store: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl SvaeModel {
    pub fn new(config: SvaeConfig, height: usize, width: usize) -> Result<Self> {
        config.validate(height, width)?;
        let mut rng = stream(child_seed(config.seed, "svae-init"), 0);
        let mut store = ParamStore::new();
        let p = config.patch * config.patch;
        let d = config.latent_dim;
        let widths = |a: usize, b: usize| {
            let mut w = vec![a];
            w.extend(std::iter::repeat_n(config.hidden, config.layers - 1));
            w.push(b);
            w
        };
        let encoder = Mlp::new(&mut store, "enc", &widths(p, config.family.head_width(d)), Activation::Silu, false, &mut rng);
        let decoder = Mlp::new(&mut store, "dec", &widths(d, p), Activation::Silu, true, &mut rng);
        Ok(Self {
            config,
            height,
            width,
            store,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn radius(&self) -> f64 {
        self.config.radius()
    }

    pub fn tokens_per_item(&self) -> usize {
        (self.height / self.config.patch) * (self.width / self.config.patch)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.config.patch, self.width / self.config.patch)
    }

    /// σ used by a per-model σ-VAE, fixed by the seed.
    pub fn model_sigma(&self) -> f64 {
        let mut rng = stream(child_seed(self.config.seed, "sigma"), 0);
        match self.config.family {
            PosteriorFamily::SigmaVae { c_sigma, .. } => c_sigma * rng.sample::<f64, _>(StandardNormal).abs(),
            _ => 0.0,
        }
    }

    pub fn batch_noise(&self, n: usize, rng: &mut Rng) -> BatchNoise {
        let d = self.latent_dim();
        let eps = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let sigma = match self.config.family {
            PosteriorFamily::SigmaVae { c_sigma, per_model: false, .. } => c_sigma * rng.sample::<f64, _>(StandardNormal).abs(),
            PosteriorFamily::SigmaVae { per_model: true, .. } => self.model_sigma(),
            _ => 0.0,
        };
        let mut uniform = Vec::with_capacity(n);
        let mut tangent = Vec::with_capacity(n * (d - 1));
        for _ in 0..n {
            let b = PsBase::draw(d, rng);
            uniform.push(b.uniform);
            tangent.extend(b.tangent);
        }
        BatchNoise {
            eps: Tensor::new(vec![n, d], eps).expect("shape"),
            sigma,
            uniform,
            tangent: Tensor::new(vec![n, d - 1], tangent).expect("shape"),
        }
    }

    /// Stack the patches of a batch of images into `[items · tokens, patch²]`.
    pub fn batch_tokens(&self, images: &[&[f64]]) -> Tensor {
        let p = self.config.patch;
        let rows: Vec<Vec<f64>> = images.iter().flat_map(|img| patchify(img, self.height, self.width, p)).collect();
        let cols = p * p;
        Tensor::new(vec![rows.len(), cols], rows.concat()).expect("patch rows")
    }

    /// Build the training objective `MSE + w·KL` on a batch of patch rows.
    pub fn loss_graph(&self, store: &ParamStore, x: &Tensor, noise: &BatchNoise) -> Result<LossGraph> {
        let cfg = &self.config;
        let d = cfg.latent_dim;
        let r = cfg.radius();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let h = mlp_forward(&mut g, store, xv, &self.encoder)?;
        let mean_or_sum = |g: &mut Graph, t: Var| match cfg.kl_reduction {
            Reduction::MeanAll => g.mean(t),
            Reduction::Sum => {
                let s = g.sum_last(t);
                g.mean(s)
            }
        };
        let (z, kl) = match cfg.family {
            PosteriorFamily::DiagGaussian { .. } | PosteriorFamily::GaussianNorm { .. } => {
                let mu = g.slice_cols(h, 0, d)?;
                let log_s = g.slice_cols(h, d, 2 * d)?;
                let s = g.exp(log_s);
                let e = g.constant(noise.eps.clone());
                let se = g.mul(s, e)?;
                let mut z = g.add(mu, se)?;
                if cfg.family.is_normalized() {
                    let n = g.norm_last(z);
                    let unit = g.div_col(z, n)?;
                    z = g.scale(unit, r);
                }
                // ½ (μ² + σ² − 1 − 2 log σ)
                let mu2 = g.mul(mu, mu)?;
                let s2 = g.mul(s, s)?;
                let t = g.add(mu2, s2)?;
                let two_ls = g.scale(log_s, 2.0);
                let t = g.sub(t, two_ls)?;
                let t = g.add_scalar(t, -1.0);
                let t = g.scale(t, 0.5);
                (z, mean_or_sum(&mut g, t))
            }
            PosteriorFamily::SigmaVae { .. } => {
                let e = Tensor::new(noise.eps.shape().to_vec(), noise.eps.data().iter().map(|x| noise.sigma * x).collect())?;
                let e = g.constant(e);
                let z = g.add(h, e)?;
                let mu2 = g.mul(h, h)?;
                let t = g.scale(mu2, 0.5);
                (z, mean_or_sum(&mut g, t))
            }
            PosteriorFamily::PowerSpherical { .. } => {
                let raw_mu = g.slice_cols(h, 0, d)?;
                let n = g.norm_last(raw_mu);
                let mu = g.div_col(raw_mu, n)?;
                let raw_k = g.slice_cols(h, d, d + 1)?;
                let kappa = g.softplus(raw_k);
                let half = 0.5 * (d as f64 - 1.0);
                let alpha = g.add_scalar(kappa, half);
                let t = g.beta_quantile(alpha, half, &noise.uniform)?;
                // cosine c = 2t − 1, tangent weight √(1 − c²) = 2√(t(1 − t))
                let c = g.scale(t, 2.0);
                let c = g.add_scalar(c, -1.0);
                let neg_t = g.neg(t);
                let one_minus = g.add_scalar(neg_t, 1.0);
                let tt = g.mul(t, one_minus)?;
                let root = g.sqrt(tt)?;
                let w = g.scale(root, 2.0);
                let v = g.constant(noise.tangent.clone());
                let tan = g.mul_col(v, w)?;
                let y = g.concat(&[c, tan], Axis::Cols)?;
                let u = g.householder(mu, y)?;
                let z = g.scale(u, r);
                let kl = g.kl_power_spherical(kappa, d)?;
                (z, g.mean(kl))
            }
        };
        let out = mlp_forward(&mut g, store, z, &self.decoder)?;
        let diff = g.sub(out, xv)?;
        let sq = g.mul(diff, diff)?;
        let recon = g.mean(sq);
        let wkl = g.scale(kl, cfg.family.kl_weight());
        let loss = g.add(recon, wkl)?;
        Ok(LossGraph {
            graph: g,
            loss,
            recon,
            kl,
            decoder_input: z,
        })
    }

    /// Raw encoder head for each patch of `x`.
    fn head(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let toks = patchify(x, self.height, self.width, self.config.patch);
        let rows: Vec<f64> = toks.concat();
        let out = self.encoder.apply(&self.store, &rows);
        out.chunks(self.encoder.fan_out()).map(<[f64]>::to_vec).collect()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<Posterior>> {
        if x.len() != self.height * self.width {
            return Err(Error::shape("encode", &[x.len()], &[self.height * self.width]));
        }
        let d = self.latent_dim();
        self.head(x)
            .into_iter()
            .map(|h| match self.config.family {
                PosteriorFamily::DiagGaussian { .. } | PosteriorFamily::GaussianNorm { .. } => {
                    let scale = h[d..].iter().map(|l| l.exp()).collect();
                    Ok(Posterior::Gaussian(DiagGaussianParams::new(h[..d].to_vec(), scale)?))
                }
                PosteriorFamily::SigmaVae { .. } => Ok(Posterior::FixedScale(h)),
                PosteriorFamily::PowerSpherical { .. } => {
                    let mu = UnitDirection::new(h[..d].to_vec())?;
                    let kappa = crate::tensor::Activation::Softplus.eval(h[d]);
                    Ok(Posterior::Spherical(PowerSphericalParams::new(mu, kappa)?))
                }
            })
            .collect()
    }

    /// Draw the latent that the decoder receives.
    pub fn sample_latent(&self, post: &Posterior, noise: &LatentNoise) -> Vec<f64> {
        sample_latent_with(post, &self.config.family, self.radius(), noise, self.model_sigma())
    }

    /// Map a latent to the decoder's input: families with normalized inputs
    /// project onto the radius-R sphere first.
    pub fn decoder_input(&self, z: &[f64]) -> Vec<f64> {
        if self.config.family.is_normalized() {
            project_to_sphere(z, self.radius(), DEFAULT_EPS).into_vec()
        } else {
            z.to_vec()
        }
    }

    /// Decode one latent per patch into an image.
    pub fn decode(&self, latents: &[Vec<f64>]) -> Vec<f64> {
        let rows: Vec<f64> = latents.iter().flat_map(|z| self.decoder_input(z)).collect();
        let out = self.decoder.apply(&self.store, &rows);
        let p = self.config.patch;
        let toks: Vec<Vec<f64>> = out.chunks(p * p).map(<[f64]>::to_vec).collect();
        unpatchify(&toks, self.height, self.width, p)
    }

    /// Deterministic latent per patch: the posterior mean, mapped to the
    /// decoder's input space.
    pub fn mean_latents(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let r = self.radius();
        Ok(self
            .encode(x)?
            .into_iter()
            .map(|p| match p {
                Posterior::Gaussian(g) => self.decoder_input(g.mean()),
                Posterior::FixedScale(m) => m,
                Posterior::Spherical(ps) => ps.mu().as_slice().iter().map(|v| r * v).collect(),
            })
            .collect())
    }

    /// Reconstruction from mean latents and its MSE.
    pub fn reconstruct(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let xhat = self.decode(&self.mean_latents(x)?);
        let mse = xhat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
        Ok((xhat, mse))
    }
}

/// Family-dependent reparameterized draw. `model_sigma` is the σ of a
/// per-model σ-VAE; per-step σ-VAEs use `c_sigma·|ξ|` from `noise`.
pub fn sample_latent_with(post: &Posterior, family: &PosteriorFamily, radius: f64, noise: &LatentNoise, model_sigma: f64) -> Vec<f64> {
    match post {
        Posterior::Gaussian(g) => {
            let z: Vec<f64> = g.mean().iter().zip(g.scale()).zip(&noise.eps).map(|((m, s), e)| m + s * e).collect();
            if family.is_normalized() {
                project_to_sphere(&z, radius, DEFAULT_EPS).into_vec()
            } else {
                z
            }
        }
        Posterior::FixedScale(mean) => {
            let sigma = match *family {
                PosteriorFamily::SigmaVae { per_model: true, .. } => model_sigma,
                PosteriorFamily::SigmaVae { c_sigma, .. } => c_sigma * noise.xi.abs(),
                _ => 0.0,
            };
            mean.iter().zip(&noise.eps).map(|(m, e)| m + sigma * e).collect()
        }
        Posterior::Spherical(ps) => ps.sample_from_base(&noise.base).as_slice().iter().map(|u| radius * u).collect(),
    }
}

/// Fresh latent noise from `rng`.
pub fn sample_latent(post: &Posterior, family: &PosteriorFamily, radius: f64, rng: &mut Rng) -> Vec<f64> {
    let d = match post {
        Posterior::Gaussian(g) => g.dim(),
        Posterior::FixedScale(m) => m.len(),
        Posterior::Spherical(p) => p.dim(),
    };
    let noise = LatentNoise::draw(d, rng);
    let model_sigma = match *family {
        PosteriorFamily::SigmaVae { c_sigma, .. } => c_sigma * noise.xi.abs(),
        _ => 0.0,
    };
    sample_latent_with(post, family, radius, &noise, model_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directional::norm;
    use crate::stats::Moments;
    use crate::tensor::check_param_grads;

    fn families() -> [PosteriorFamily; 4] {
        [
            PosteriorFamily::DiagGaussian { kl_weight: 0.01 },
            PosteriorFamily::SigmaVae {
                c_sigma: 0.2,
                per_model: false,
                mean_penalty: 1e-3,
            },
            PosteriorFamily::GaussianNorm { kl_weight: 0.01 },
            PosteriorFamily::PowerSpherical { kl_weight: 0.01 },
        ]
    }

    fn tiny(family: PosteriorFamily) -> SvaeModel {
        let cfg = SvaeConfig {
            family,
            latent_dim: 3,
            patch: 2,
            hidden: 6,
            layers: 2,
            ..Default::default()
        };
        SvaeModel::new(cfg, 4, 4).unwrap()
    }

    fn image(seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 99);
        (0..16).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn patch_round_trip() {
        let img: Vec<f64> = (0..64).map(f64::from).collect();
        let toks = patchify(&img, 8, 8, 4);
        assert_eq!(toks.len(), 4);
        assert_eq!(&toks[1][..4], &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(unpatchify(&toks, 8, 8, 4), img);
    }

    #[test]
    fn encoder_heads_respect_their_ranges() {
        for f in families() {
            let m = tiny(f);
            for s in 0..20 {
                for p in m.encode(&image(s)).unwrap() {
                    match p {
                        Posterior::Gaussian(g) => assert!(g.scale().iter().all(|&s| s > 0.0)),
                        Posterior::Spherical(ps) => {
                            assert!((norm(ps.mu().as_slice()) - 1.0).abs() < 1e-12);
                            assert!(ps.kappa() >= 0.0);
                        }
                        Posterior::FixedScale(m) => assert_eq!(m.len(), 3),
                    }
                }
            }
        }
    }

    #[test]
    fn normalized_families_deliver_radius_r() {
        let mut rng = stream(7, 0);
        for f in families() {
            let m = tiny(f);
            let mut norms = Moments::new();
            for s in 0..30 {
                for p in m.encode(&image(s)).unwrap() {
                    norms.push(norm(&sample_latent(&p, &f, m.radius(), &mut rng)));
                }
            }
            if f.is_normalized() {
                assert!((norms.max() - m.radius()).abs() < 1e-9 && (norms.min() - m.radius()).abs() < 1e-9);
                assert!(norms.population_variance() <= 1e-18);
            } else {
                assert!(norms.variance() > 0.0);
            }
        }
    }

    #[test]
    fn zero_noise_returns_the_mean() {
        let m = tiny(PosteriorFamily::DiagGaussian { kl_weight: 1.0 });
        let post = m.encode(&image(1)).unwrap().remove(0);
        let Posterior::Gaussian(g) = &post else { panic!() };
        assert_eq!(m.sample_latent(&post, &LatentNoise::zero(3)), g.mean());
    }

    #[test]
    fn untrained_decoder_outputs_zero() {
        for f in families() {
            let m = tiny(f);
            let (xhat, _) = m.reconstruct(&image(2)).unwrap();
            assert!(xhat.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn projection_precedes_decoder() {
        let mut m = tiny(PosteriorFamily::PowerSpherical { kl_weight: 0.0 });
        // give the decoder a nonzero output layer
        let ids: Vec<_> = m.store.ids().collect();
        let mut rng = stream(3, 0);
        for id in ids {
            m.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        let z: Vec<Vec<f64>> = (0..4).map(|i| vec![0.3 + i as f64, -1.0, 0.5]).collect();
        let base = m.decode(&z);
        for lam in [0.5, 2.0] {
            let scaled: Vec<Vec<f64>> = z.iter().map(|v| v.iter().map(|x| lam * x).collect()).collect();
            let out = m.decode(&scaled);
            for (a, b) in base.iter().zip(&out) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences_per_family() {
        for f in families() {
            let mut m = tiny(f);
            let mut rng = stream(11, 0);
            // nonzero decoder output layer so the encoder receives signal
            let ids: Vec<_> = m.store.ids().collect();
            for id in ids {
                m.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
            }
            let imgs = [image(1), image(2)];
            let x = m.batch_tokens(&[&imgs[0], &imgs[1]]);
            let noise = m.batch_noise(x.rows(), &mut rng);
            let mut store = m.store.clone();
            let report = check_param_grads(
                &mut store,
                |s| {
                    let lg = m.loss_graph(s, &x, &noise)?;
                    Ok((lg.graph, lg.loss))
                },
                1e-5,
                8,
                &mut rng,
            )
            .unwrap();
            assert!(report.passed(1e-4), "{}: {:?}", f.label(), report);
        }
    }

    #[test]
    fn graph_latents_match_plain_sampler() {
        let m = tiny(PosteriorFamily::PowerSpherical { kl_weight: 0.0 });
        let img = image(4);
        let x = m.batch_tokens(&[&img]);
        let mut rng = stream(5, 0);
        let noise = m.batch_noise(x.rows(), &mut rng);
        let lg = m.loss_graph(&m.store, &x, &noise).unwrap();
        let zg = lg.graph.value(lg.decoder_input);
        for (t, post) in m.encode(&img).unwrap().iter().enumerate() {
            let ln = LatentNoise {
                eps: vec![0.0; 3],
                xi: 0.0,
                base: PsBase {
                    uniform: noise.uniform[t],
                    tangent: noise.tangent.row_slice(t).to_vec(),
                },
            };
            let z = m.sample_latent(post, &ln);
            for (a, b) in z.iter().zip(zg.row_slice(t)) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
