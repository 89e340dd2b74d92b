use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rng;
use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Layer widths from input to feature dimension, and the init seed.
/// Hidden layers use the rectifier; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, seed: u64) -> Self {
        MlpSpec { layer_widths, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config(format!(
                "layer_widths needs at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if *self.layer_widths.last().unwrap() < 2 {
            return Err(Error::Config("feature dimension must be at least 2".into()));
        }
        Ok(())
    }
}

/// Fully connected layer, `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// He-style init: weights ~ N(0, 2 / fan_in), zero bias.
    pub fn he(fan_in: usize, fan_out: usize, rng: &mut rng::Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let w = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], w).unwrap().with_grad(),
            bias: Tensor::zeros(&[fan_out]).with_grad(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape, w: Var, b: Var, x: Var) -> Var {
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }

    fn apply(&self, x: &[f64], n: usize) -> Vec<f64> {
        let (k, m) = (self.in_dim(), self.out_dim());
        let w = self.weight.data();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            out.extend_from_slice(self.bias.data());
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let xv = x[i * k + p];
                if xv == 0.0 {
                    continue;
                }
                for (o, wv) in row.iter_mut().zip(&w[p * m..(p + 1) * m]) {
                    *o += xv * wv;
                }
            }
        }
        out
    }
}

/// Multilayer perceptron feature extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.seed, "mlp-init", 0);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| Linear::he(w[0], w[1], &mut rng))
            .collect();
        Ok(Mlp {
            spec: spec.clone(),
            layers,
        })
    }

    /// Builds a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        let mut widths = vec![layers[0].in_dim()];
        for l in &layers {
            if l.in_dim() != *widths.last().unwrap() || l.bias.numel() != l.out_dim() {
                return Err(Error::dimension(
                    "Mlp::from_layers",
                    format!("layer input width {}", widths.last().unwrap()),
                    l.in_dim(),
                ));
            }
            widths.push(l.out_dim());
        }
        let spec = MlpSpec::new(widths, 0);
        spec.validate()?;
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer_widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.spec.layer_widths.last().unwrap()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Replaces parameter values, e.g. from a weight snapshot.
    pub fn load_params(&mut self, tensors: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != tensors.len() {
            return Err(Error::dimension("Mlp::load_params", params.len(), tensors.len()));
        }
        for (p, t) in params.iter_mut().zip(tensors) {
            if p.shape() != t.shape() {
                return Err(Error::dimension(
                    "Mlp::load_params",
                    format!("{:?}", p.shape()),
                    format!("{:?}", t.shape()),
                ));
            }
            p.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Records every parameter on the tape, in [`Mlp::params`] order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p)).collect()
    }

    /// Taped forward pass for a `[batch, input_dim]` node.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        let cols: usize = shape[1..].iter().product();
        if shape.len() < 2 || cols != self.input_dim() {
            return Err(Error::dimension(
                "mlp forward input",
                format!("[batch, {}]", self.input_dim()),
                format!("{shape:?}"),
            ));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bound[2 * i], bound[2 * i + 1], h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Untaped forward pass over `n` row-major inputs.
    pub fn infer(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        if x.len() != n * self.input_dim() {
            return Err(Error::dimension(
                "mlp infer input",
                format!("{n} x {}", self.input_dim()),
                x.len(),
            ));
        }
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h, n);
            if i + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// `z = omega(x)` for a `[batch, input_dim]` tensor.
    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.rows();
        if x.cols() != self.input_dim() {
            return Err(Error::dimension(
                "mlp forward input",
                format!("[batch, {}]", self.input_dim()),
                format!("{:?}", x.shape()),
            ));
        }
        Tensor::new(vec![n, self.feature_dim()], self.infer(x.data(), n)?)
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &[Var]) -> Result<()> {
        for (p, v) in self.params_mut().into_iter().zip(bound) {
            if let Some(g) = grads.get(*v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_network_passes_input_through() {
        let layer = Linear {
            weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        };
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(mlp.forward_tensor(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let layer = Linear {
            weight: Tensor::zeros(&[3, 2]),
            bias: Tensor::from_vec(vec![0.25, -1.5]),
        };
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        let x = Tensor::new(vec![2, 3], vec![4.0, 5.0, 6.0, -1.0, 0.0, 9.0]).unwrap();
        assert_eq!(mlp.forward_tensor(&x).unwrap().data(), &[0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn shape_mismatch_names_extents() {
        let mlp = Mlp::new(&MlpSpec::new(vec![4, 3, 2], 1)).unwrap();
        let x = Tensor::new(vec![1, 5], vec![0.0; 5]).unwrap();
        let msg = mlp.forward_tensor(&x).unwrap_err().to_string();
        assert!(msg.contains("[batch, 4]") && msg.contains("[1, 5]"), "{msg}");
    }

    #[test]
    fn feature_dim_below_two_is_rejected() {
        assert!(Mlp::new(&MlpSpec::new(vec![4, 1], 0)).is_err());
        assert!(Mlp::new(&MlpSpec::new(vec![4], 0)).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Mlp::new(&MlpSpec::new(vec![6, 5, 3], 9)).unwrap();
        let b = Mlp::new(&MlpSpec::new(vec![6, 5, 3], 9)).unwrap();
        let c = Mlp::new(&MlpSpec::new(vec![6, 5, 3], 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn taped_and_untaped_forward_agree() {
        let mlp = Mlp::new(&MlpSpec::new(vec![5, 7, 3], 3)).unwrap();
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape);
        let xv = tape.constant(vec![2, 5], x.clone());
        let z = mlp.forward(&mut tape, &bound, xv).unwrap();
        assert_eq!(tape.value(z), mlp.infer(&x, 2).unwrap().as_slice());
    }
}
