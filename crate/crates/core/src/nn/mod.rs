//! Small `f64` neural-network engine with hand-written backward passes.
//!
//! Layers keep their parameters as named [`Tensor`]s. A layer of the same
//! type filled with zeros doubles as its gradient accumulator, so every
//! `backward` takes `grads: &mut Self`.

mod adam;
mod attention;
mod checkpoint;
mod dense;
mod gradcheck;
mod lstm;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use attention::{
    AdditiveAttention, AdditiveCache, AttentionOutput, SelfAttention, SelfCache, WeightedAttention, WeightedCache,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{Dense, DenseCache};
pub use gradcheck::{grad_check, grad_check_with, layer_suite, GradCheckOptions, GradCheckReport};
pub use lstm::{Lstm, LstmCache, LstmOutput};
pub use tensor::{axpy, dot, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Anything exposing an ordered list of named parameter tensors.
pub trait Module {
    fn named_params(&self) -> Vec<(String, &Tensor)>;

    /// Same order as [`Module::named_params`].
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// A copy with every parameter set to zero, for use as a gradient buffer.
    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn zero(&mut self) {
        for t in self.params_mut() {
            t.fill(0.0);
        }
    }

    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src: Vec<&Tensor> = other.named_params().into_iter().map(|(_, t)| t).collect();
        for (dst, s) in self.params_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    fn scale_params(&mut self, k: f64) {
        for t in self.params_mut() {
            t.scale(k);
        }
    }

    fn all_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.all_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    pub fn apply_in_place(self, z: &mut [f64]) {
        if self != Activation::Linear {
            z.iter_mut().for_each(|v| *v = self.apply(*v));
        }
    }

    /// `dy/dz` written in terms of the output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradient through `a = softmax(z)` given `dL/da`.
pub fn softmax_backward(a: &[f64], da: &[f64]) -> Vec<f64> {
    let inner = dot(a, da);
    a.iter().zip(da).map(|(ai, gi)| ai * (gi - inner)).collect()
}

/// Mean squared error and its gradient with respect to each prediction.
pub fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    (loss, grad)
}

/// Mean binary cross-entropy on logits and its gradient.
pub fn logistic_loss(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        // log(1 + e^z) - y z, evaluated stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        grad.push((sigmoid(z) - y) / n);
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        for z in [vec![0.0, 0.0], vec![1e3, -1e3, 5.0], vec![-2.0, 0.5, 0.25, 7.0]] {
            let a = softmax(&z);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn losses_have_expected_values() {
        let (l, g) = mse(&[1.0, 3.0], &[1.0, 1.0]);
        assert_eq!(l, 2.0);
        assert_eq!(g, vec![0.0, 2.0]);
        let (l, _) = logistic_loss(&[0.0], &[1.0]);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let (l, _) = logistic_loss(&[800.0], &[1.0]);
        assert!(l.is_finite() && l < 1e-300);
    }
}
