//! Procedural grayscale grids: anti-aliased ellipses and bars with random pose
//! plus pixel noise. Item `i` depends only on `(spec, i)`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{Checkpoint, Tensor};

/// Supersampling factor per pixel axis.
const AA: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_items: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_items: 512,
            height: 8,
            width: 8,
            noise: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Bar,
}

impl ShapeKind {
    pub const COUNT: usize = 2;

    pub fn class_id(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub spec: DatasetSpec,
    /// Row-major `height × width` grids.
    pub items: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub n_items: usize,
    pub shape: [usize; 2],
    pub n_classes: usize,
    pub sha256: String,
}

fn render(kind: ShapeKind, h: usize, w: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let (hf, wf) = (h as f64, w as f64);
    let cx = wf * rng.random_range(0.35..0.65);
    let cy = hf * rng.random_range(0.35..0.65);
    let theta: f64 = rng.random_range(0.0..PI);
    let (sa, sb) = match kind {
        ShapeKind::Ellipse => (wf * rng.random_range(0.15..0.35), hf * rng.random_range(0.15..0.35)),
        ShapeKind::Bar => (wf * rng.random_range(0.3..0.45), hf * rng.random_range(0.06..0.12)),
    };
    let (c, s) = (theta.cos(), theta.sin());
    let inside = |x: f64, y: f64| {
        let dx = x - cx;
        let dy = y - cy;
        let p = (c * dx + s * dy) / sa;
        let q = (-s * dx + c * dy) / sb;
        match kind {
            ShapeKind::Ellipse => p * p + q * q <= 1.0,
            ShapeKind::Bar => p.abs() <= 1.0 && q.abs() <= 1.0,
        }
    };
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut hits = 0;
            for a in 0..AA {
                for b in 0..AA {
                    let y = i as f64 + (a as f64 + 0.5) / AA as f64;
                    let x = j as f64 + (b as f64 + 0.5) / AA as f64;
                    hits += inside(x, y) as usize;
                }
            }
            out[i * w + j] = hits as f64 / (AA * AA) as f64;
        }
    }
    out
}

impl ToyDataset {
    pub fn generate(spec: &DatasetSpec) -> Self {
        let mut items = Vec::with_capacity(spec.n_items);
        let mut labels = Vec::with_capacity(spec.n_items);
        for i in 0..spec.n_items {
            let mut rng = stream(spec.seed, i as u64);
            let kind = if rng.random::<bool>() { ShapeKind::Bar } else { ShapeKind::Ellipse };
            let mut img = render(kind, spec.height, spec.width, &mut rng);
            for p in &mut img {
                *p += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
            items.push(img);
            labels.push(kind.class_id());
        }
        Self {
            spec: spec.clone(),
            items,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.spec.height * self.spec.width
    }

    /// MSE of predicting every pixel by its dataset-wide mean.
    pub fn mean_predictor_mse(&self) -> f64 {
        let p = self.pixels();
        if self.is_empty() {
            return 0.0;
        }
        let n = self.len() as f64;
        let mut mean = vec![0.0; p];
        for it in &self.items {
            mean.iter_mut().zip(it).for_each(|(m, x)| *m += x / n);
        }
        let sse: f64 = self
            .items
            .iter()
            .flat_map(|it| it.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)))
            .sum();
        sse / (n * p as f64)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let data = self.items.concat();
        ck.push("items", Tensor::new(vec![self.len(), self.pixels()], data).expect("consistent"));
        ck.push(
            "labels",
            Tensor::new(vec![self.len()], self.labels.iter().map(|&l| l as f64).collect()).expect("consistent"),
        );
        ck
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_checkpoint().to_bytes()))
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            spec: self.spec.clone(),
            n_items: self.len(),
            shape: [self.spec.height, self.spec.width],
            n_classes: ShapeKind::COUNT,
            sha256: self.checksum(),
        }
    }

    /// Write `dataset.bin` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.to_checkpoint().write(&dir.join("dataset.bin"))?;
        let manifest = self.manifest();
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let ck = Checkpoint::read(&dir.join("dataset.bin"))?;
        let items_t = ck.get("items").ok_or_else(|| Error::Format("dataset lacks items".into()))?;
        let labels_t = ck.get("labels").ok_or_else(|| Error::Format("dataset lacks labels".into()))?;
        let p = manifest.shape[0] * manifest.shape[1];
        let items = if p == 0 { vec![] } else { items_t.data().chunks(p).map(<[f64]>::to_vec).collect() };
        let ds = Self {
            spec: manifest.spec.clone(),
            items,
            labels: labels_t.data().iter().map(|&l| l as usize).collect(),
        };
        if ds.checksum() != manifest.sha256 {
            return Err(Error::Format("dataset checksum mismatch".into()));
        }
        Ok(ds)
    }
}
