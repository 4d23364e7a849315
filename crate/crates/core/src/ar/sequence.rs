use serde::{Deserialize, Serialize};

use crate::directional::norm;
use crate::error::{Error, Result};

pub const NORM_TOL: f64 = 1e-9;

/// Raster-order tokens of an `h × w` latent grid. `radius = 0` marks an
/// unconstrained sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Vec<f64>>,
    pub grid: (usize, usize),
    pub radius: f64,
    pub class_id: Option<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Vec<f64>>, grid: (usize, usize), radius: f64, class_id: Option<usize>) -> Result<Self> {
        if tokens.len() != grid.0 * grid.1 {
            return Err(Error::shape("TokenSequence", &[tokens.len()], &[grid.0, grid.1]));
        }
        if let Some(t) = tokens.iter().find(|t| t.len() != tokens[0].len()) {
            return Err(Error::shape("TokenSequence", &[t.len()], &[tokens[0].len()]));
        }
        if !(radius >= 0.0) {
            return Err(Error::InvalidParam(format!("radius {radius} must be >= 0")));
        }
        if radius > 0.0 {
            for (k, t) in tokens.iter().enumerate() {
                let n = norm(t);
                if (n - radius).abs() > NORM_TOL * radius.max(1.0) {
                    return Err(Error::InvalidParam(format!("token {k} has norm {n}, expected {radius}")));
                }
            }
        }
        Ok(Self {
            tokens,
            grid,
            radius,
            class_id,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }
}
