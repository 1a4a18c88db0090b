use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, Module, Tensor};
use crate::error::{Error, Result};

/// `y = act(W x + b)` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

#[derive(Debug, Clone, Default)]
pub struct DenseCache {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Dense {
            w: Tensor::uniform(&[outputs, inputs], inputs, rng),
            b: Tensor::uniform(&[outputs], inputs, rng),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            w: Tensor::zeros(&[outputs, inputs]),
            b: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        let mut y = self.b.data().to_vec();
        self.w.matvec_acc(x, &mut y);
        self.activation.apply_in_place(&mut y);
        Ok(y)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        let y = self.forward(x)?;
        Ok((
            y.clone(),
            DenseCache {
                x: x.to_vec(),
                y,
            },
        ))
    }

    /// Gradient with respect to the pre-activation for a given output gradient.
    pub fn pre_activation_grad(&self, y: &[f64], dy: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(dy)
            .map(|(&y, &g)| g * self.activation.derivative_from_output(y))
            .collect()
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, cache: &DenseCache, dy: &[f64], grads: &mut Dense) -> Vec<f64> {
        let dz = self.pre_activation_grad(&cache.y, dy);
        grads.w.add_outer(&dz, &cache.x);
        for (g, d) in grads.b.data_mut().iter_mut().zip(&dz) {
            *g += d;
        }
        let mut dx = vec![0.0; self.inputs()];
        self.w.matvec_t_acc(&dz, &mut dx);
        dx
    }
}

impl Module for Dense {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, seeded_rng};

    #[test]
    fn zero_layer_is_zero() {
        let d = Dense::zeros(3, 2, Activation::Linear);
        assert_eq!(d.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(d.forward(&[1.0]).is_err());
    }

    #[test]
    fn identity_relu() {
        let mut d = Dense::zeros(2, 2, Activation::Relu);
        d.w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(3);
        for act in [Activation::Linear, Activation::Tanh, Activation::Sigmoid] {
            let layer = Dense::new(4, 3, act, &mut rng);
            let x: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.5).collect();
            let coef = [0.7, -1.1, 0.4];
            let loss = |m: &Dense| m.forward(&x).unwrap().iter().zip(&coef).map(|(y, c)| y * c).sum::<f64>();
            let (_, cache) = layer.forward_cached(&x).unwrap();
            let mut grads = Dense::zeros(4, 3, act);
            layer.backward(&cache, &coef, &mut grads);
            let report = grad_check(&layer, &grads, loss);
            assert!(report.max_rel_err < 1e-6, "{act:?}: {report:?}");
        }
    }
}
