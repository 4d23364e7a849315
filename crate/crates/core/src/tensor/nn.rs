use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::graph::{matmul_raw, sigmoid, softplus, Graph, Var};
use super::params::{ParamId, ParamStore};
use super::value::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Silu,
    Softplus,
}

impl Activation {
    pub fn on_graph(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Silu => g.silu(x),
            Activation::Softplus => g.softplus(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Scaled normal with variance `1 / fan_in`.
    LeCun,
    Zeros,
}

/// Affine map `x W + b` with `W: [fan_in, fan_out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, init: Init, rng: &mut Rng) -> Self {
        let w = match init {
            Init::Zeros => Tensor::zeros(&[fan_in, fan_out]),
            Init::LeCun => {
                let s = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
                Tensor::new(vec![fan_in, fan_out], data).expect("shape")
            }
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.value(x).last_dim() != self.fan_in {
            return Err(Error::shape("linear", g.shape(x), store.value(self.weight).shape()));
        }
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    /// Same arithmetic as [`Linear::forward`] on plain rows.
    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let n = x.len() / self.fan_in;
        let mut y = matmul_raw(x, store.value(self.weight).data(), n, self.fan_in, self.fan_out);
        if let Some(b) = self.bias {
            let b = store.value(b).data();
            for row in y.chunks_mut(self.fan_out) {
                row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
        }
        y
    }
}

/// Stack of affine layers with an activation between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`. The output layer is zero-initialised
    /// when `zero_last` is set.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], activation: Activation, zero_last: bool, rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if zero_last && i + 1 == n { Init::Zeros } else { Init::LeCun };
                Linear::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], true, init, rng)
            })
            .collect();
        Self { layers, activation }
    }

    pub fn fan_in(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.apply(store, &h);
            if i + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = self.activation.eval(*v));
            }
        }
        h
    }
}

pub fn mlp_forward(g: &mut Graph, store: &ParamStore, x: Var, mlp: &Mlp) -> Result<Var> {
    let mut h = x;
    for (i, l) in mlp.layers.iter().enumerate() {
        h = l.forward(g, store, h)?;
        if i + 1 < mlp.layers.len() {
            h = mlp.activation.on_graph(g, h);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_mlp_outputs_zero() {
        let mut store = ParamStore::new();
        let mut rng = stream(0, 0);
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 2], Activation::Silu, false, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap());
        let y = mlp_forward(&mut g, &store, x, &mlp).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn identity_mlp_passes_through() {
        let mut store = ParamStore::new();
        let mut rng = stream(0, 0);
        let mlp = Mlp::new(&mut store, "m", &[3, 3, 3], Activation::Identity, false, &mut rng);
        for l in &mlp.layers {
            let w = store.value_mut(l.weight).data_mut();
            w.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 4 == 0 { 1.0 } else { 0.0 });
        }
        let input = vec![0.3, -1.5, 2.25];
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(input.clone()));
        let y = mlp_forward(&mut g, &store, x, &mlp).unwrap();
        assert_eq!(g.value(y).data(), input.as_slice());
        assert_eq!(mlp.apply(&store, &input), input);
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let mut store = ParamStore::new();
        let mut rng = stream(0, 0);
        let mlp = Mlp::new(&mut store, "m", &[3, 2], Activation::Silu, false, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 4]));
        assert!(matches!(mlp_forward(&mut g, &store, x, &mlp), Err(Error::Shape { .. })));
    }

    #[test]
    fn graph_and_plain_paths_agree_bitwise() {
        let mut store = ParamStore::new();
        let mut rng = stream(5, 0);
        let mlp = Mlp::new(&mut store, "m", &[4, 8, 3], Activation::Silu, false, &mut rng);
        let input: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 4], input.clone()).unwrap());
        let y = mlp_forward(&mut g, &store, x, &mlp).unwrap();
        assert_eq!(g.value(y).data(), mlp.apply(&store, &input).as_slice());
    }
}
