//! Ground-truth token process on the sphere: per class, `u₁ ~ PS(m_c, κ)` and
//! `u_{k+1} ~ PS(Q_c u_k, κ)` for a fixed rotation `Q_c`; tokens are `R·u_k`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds::random_orthogonal;
use crate::directional::{sample_uniform_sphere, PowerSphericalParams, UnitDirection};
use crate::error::{Error, Result};
use crate::rng::{child_seed, stream, Rng};

use super::sequence::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessSpec {
    pub dim: usize,
    pub n_classes: usize,
    pub kappa: f64,
    /// Rotation angle per plane for class 0; class `c` adds `c · angle_step`.
    pub angle: f64,
    pub angle_step: f64,
    pub seed: u64,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            n_classes: 4,
            kappa: 40.0,
            angle: 0.3,
            angle_step: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarkovSphereProcess {
    pub spec: ProcessSpec,
    means: Vec<UnitDirection>,
    rotations: Vec<DMatrix<f64>>,
}

impl MarkovSphereProcess {
    pub fn new(spec: ProcessSpec) -> Result<Self> {
        if spec.dim < 2 || spec.n_classes == 0 || !(spec.kappa >= 0.0) {
            return Err(Error::Config(format!("invalid process spec {spec:?}")));
        }
        let mut rng = stream(child_seed(spec.seed, "gt-process"), 0);
        let d = spec.dim;
        let mut means = vec![];
        let mut rotations = vec![];
        for c in 0..spec.n_classes {
            means.push(sample_uniform_sphere(d, &mut rng));
            let basis = random_orthogonal(d, &mut rng);
            let theta = spec.angle + spec.angle_step * c as f64;
            let mut block = DMatrix::<f64>::identity(d, d);
            for p in 0..d / 2 {
                let (i, j) = (2 * p, 2 * p + 1);
                block[(i, i)] = theta.cos();
                block[(i, j)] = -theta.sin();
                block[(j, i)] = theta.sin();
                block[(j, j)] = theta.cos();
            }
            rotations.push(&basis * block * basis.transpose());
        }
        Ok(Self { spec, means, rotations })
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.spec.n_classes {
            return Err(Error::UnknownClass {
                id: class,
                n_classes: self.spec.n_classes,
            });
        }
        Ok(())
    }

    fn rotate(&self, class: usize, u: &[f64]) -> Vec<f64> {
        let r = &self.rotations[class];
        let d = u.len();
        (0..d).map(|i| (0..d).map(|j| r[(i, j)] * u[j]).sum()).collect()
    }

    /// Mean direction at position `k` (0-based): `Q_c^k m_c`.
    pub fn mean_direction(&self, class: usize, k: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        let mut m = self.means[class].as_slice().to_vec();
        for _ in 0..k {
            m = self.rotate(class, &m);
        }
        Ok(m)
    }

    pub fn sample_directions(&self, class: usize, len: usize, rng: &mut Rng) -> Result<Vec<UnitDirection>> {
        self.check_class(class)?;
        let mut out: Vec<UnitDirection> = Vec::with_capacity(len);
        for _ in 0..len {
            let mu = match out.last() {
                None => self.means[class].clone(),
                Some(prev) => UnitDirection::new(self.rotate(class, prev.as_slice()))?,
            };
            out.push(PowerSphericalParams::new(mu, self.spec.kappa)?.sample(rng));
        }
        Ok(out)
    }

    pub fn sample_sequence(&self, class: usize, grid: (usize, usize), radius: f64, rng: &mut Rng) -> Result<TokenSequence> {
        let dirs = self.sample_directions(class, grid.0 * grid.1, rng)?;
        let tokens = dirs.iter().map(|u| u.as_slice().iter().map(|x| radius * x).collect()).collect();
        TokenSequence::new(tokens, grid, radius, Some(class))
    }

    /// `n` sequences with classes cycling through `0..n_classes`; sequence `i`
    /// uses stream `i` of `seed`.
    pub fn dataset(&self, n: usize, grid: (usize, usize), radius: f64, seed: u64) -> Result<Vec<TokenSequence>> {
        (0..n)
            .map(|i| self.sample_sequence(i % self.spec.n_classes, grid, radius, &mut stream(seed, i as u64)))
            .collect()
    }
}

/// Mean over tokens of `⟨u_k, m_{c,k}⟩` with its standard error, where `u_k`
/// is the token direction and `m_{c,k}` the process mean direction.
pub fn mean_cosine_to_process(process: &MarkovSphereProcess, seqs: &[TokenSequence]) -> Result<crate::stats::Estimate> {
    let mut m = crate::stats::Moments::new();
    for s in seqs {
        let class = s.class_id.ok_or_else(|| Error::Config("sequence lacks a class label".into()))?;
        for (k, t) in s.tokens.iter().enumerate() {
            let u = UnitDirection::new(t.clone())?;
            m.push(u.dot(&process.mean_direction(class, k)?));
        }
    }
    Ok(m.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directional::dot;

    #[test]
    fn rotations_are_orthogonal_and_distinct() {
        let p = MarkovSphereProcess::new(ProcessSpec {
            dim: 5,
            n_classes: 3,
            ..Default::default()
        })
        .unwrap();
        for r in &p.rotations {
            let e = r.transpose() * r - DMatrix::<f64>::identity(5, 5);
            assert!(e.abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
        assert!((&p.rotations[0] - &p.rotations[1]).abs().max() > 1e-3);
    }

    #[test]
    fn sequences_sit_on_the_sphere_and_follow_the_chain() {
        let p = MarkovSphereProcess::new(ProcessSpec {
            dim: 4,
            kappa: 2000.0,
            ..Default::default()
        })
        .unwrap();
        let s = p.sample_sequence(1, (2, 3), 2.0, &mut stream(3, 0)).unwrap();
        assert_eq!(s.tokens.len(), 6);
        for (k, t) in s.tokens.iter().enumerate() {
            let m = p.mean_direction(1, k).unwrap();
            // high concentration keeps every token near Q^k m
            assert!(dot(t, &m) / 2.0 > 0.95, "k={k}");
        }
        assert!(p.sample_sequence(4, (1, 1), 1.0, &mut stream(3, 0)).is_err());
    }

    #[test]
    fn mean_cosine_matches_closed_form_at_first_position() {
        let p = MarkovSphereProcess::new(ProcessSpec {
            dim: 6,
            kappa: 10.0,
            ..Default::default()
        })
        .unwrap();
        let seqs = p.dataset(4000, (1, 1), 1.0, 9).unwrap();
        let est = mean_cosine_to_process(&p, &seqs).unwrap();
        let want = PowerSphericalParams::new(UnitDirection::axis(6, 0), 10.0).unwrap().mean_cosine();
        assert!(est.within(want, 4.0), "{est:?} vs {want}");
    }
}
