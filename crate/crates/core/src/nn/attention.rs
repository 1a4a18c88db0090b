use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softmax, softmax_backward, Module, Tensor};
use crate::error::{Error, Result};
use crate::nn::tensor::{axpy, dot};

fn check_tokens(seq: &[Vec<f64>], width: usize, what: &str) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::ShapeMismatch(format!("{what} needs at least one token")));
    }
    if let Some(bad) = seq.iter().find(|x| x.len() != width) {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects tokens of width {width}, got {}",
            bad.len()
        )));
    }
    Ok(())
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        axpy(1.0, r, &mut out);
    }
    let k = 1.0 / rows.len() as f64;
    out.iter_mut().for_each(|v| *v *= k);
    out
}

/// Additive attention: `h = tanh(W^t x_t + W^x x_t')`, `e = σ(W^a h)`,
/// `a_t = softmax(e_t)`, `x'_t = Σ a x_t'`, mean-pooled over `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveAttention {
    pub w_t: Tensor,
    pub w_x: Tensor,
    pub w_a: Tensor,
}

#[derive(Debug, Clone)]
pub struct AdditiveCache {
    x: Vec<Vec<f64>>,
    /// `h[t][t']`
    h: Vec<Vec<Vec<f64>>>,
    e: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub tokens: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

impl AdditiveAttention {
    pub fn new(width: usize, units: usize, rng: &mut impl Rng) -> Self {
        AdditiveAttention {
            w_t: Tensor::uniform(&[units, width], width, rng),
            w_x: Tensor::uniform(&[units, width], width, rng),
            w_a: Tensor::uniform(&[1, units], units, rng),
        }
    }

    pub fn zeros(width: usize, units: usize) -> Self {
        AdditiveAttention {
            w_t: Tensor::zeros(&[units, width]),
            w_x: Tensor::zeros(&[units, width]),
            w_a: Tensor::zeros(&[1, units]),
        }
    }

    pub fn width(&self) -> usize {
        self.w_t.cols()
    }

    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<AttentionOutput> {
        self.forward_cached(seq).map(|(o, _)| o)
    }

    pub fn forward_cached(&self, seq: &[Vec<f64>]) -> Result<(AttentionOutput, AdditiveCache)> {
        check_tokens(seq, self.width(), "additive attention")?;
        let p: Vec<Vec<f64>> = seq.iter().map(|x| self.w_t.matvec(x)).collect();
        let q: Vec<Vec<f64>> = seq.iter().map(|x| self.w_x.matvec(x)).collect();
        let wa = self.w_a.data();
        let mut h = Vec::with_capacity(seq.len());
        let mut e = Vec::with_capacity(seq.len());
        let mut a = Vec::with_capacity(seq.len());
        let mut tokens = Vec::with_capacity(seq.len());
        for pt in &p {
            let ht: Vec<Vec<f64>> = q
                .iter()
                .map(|qs| pt.iter().zip(qs).map(|(u, v)| (u + v).tanh()).collect())
                .collect();
            let et: Vec<f64> = ht.iter().map(|hs| sigmoid(dot(wa, hs))).collect();
            let at = softmax(&et);
            let mut xt = vec![0.0; self.width()];
            for (w, xs) in at.iter().zip(seq) {
                axpy(*w, xs, &mut xt);
            }
            h.push(ht);
            e.push(et);
            a.push(at);
            tokens.push(xt);
        }
        let pooled = mean_rows(&tokens);
        Ok((
            AttentionOutput {
                tokens,
                weights: a.clone(),
                pooled,
            },
            AdditiveCache {
                x: seq.to_vec(),
                h,
                e,
                a,
            },
        ))
    }

    /// Backward from a gradient on the pooled output.
    pub fn backward(&self, cache: &AdditiveCache, d_pooled: &[f64], grads: &mut AdditiveAttention) -> Vec<Vec<f64>> {
        let n = cache.x.len();
        let units = self.w_t.rows();
        let dxt: Vec<f64> = d_pooled.iter().map(|g| g / n as f64).collect();
        let mut dx = vec![vec![0.0; self.width()]; n];
        let mut dp = vec![vec![0.0; units]; n];
        let mut dq = vec![vec![0.0; units]; n];
        let wa = self.w_a.data();
        for t in 0..n {
            let da: Vec<f64> = cache.x.iter().map(|xs| dot(&dxt, xs)).collect();
            for (s, w) in cache.a[t].iter().enumerate() {
                axpy(*w, &dxt, &mut dx[s]);
            }
            let de = softmax_backward(&cache.a[t], &da);
            for s in 0..n {
                let e = cache.e[t][s];
                let ds = de[s] * e * (1.0 - e);
                let hs = &cache.h[t][s];
                axpy(ds, hs, grads.w_a.data_mut());
                for k in 0..units {
                    let dz = ds * wa[k] * (1.0 - hs[k] * hs[k]);
                    dp[t][k] += dz;
                    dq[s][k] += dz;
                }
            }
        }
        for t in 0..n {
            grads.w_t.add_outer(&dp[t], &cache.x[t]);
            grads.w_x.add_outer(&dq[t], &cache.x[t]);
            self.w_t.matvec_t_acc(&dp[t], &mut dx[t]);
            self.w_x.matvec_t_acc(&dq[t], &mut dx[t]);
        }
        dx
    }
}

impl Module for AdditiveAttention {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("w_t".into(), &self.w_t), ("w_x".into(), &self.w_x), ("w_a".into(), &self.w_a)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_t, &mut self.w_x, &mut self.w_a]
    }
}

/// Scaled dot-product self-attention `softmax(Q Kᵀ / √d_k) V`, with
/// `Q = X W^Q` etc., mean-pooled over tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttention {
    /// Stored transposed, `[d_k, width]`, so projections are mat-vec products.
    pub w_q: Tensor,
    pub w_k: Tensor,
    /// `[d_v, width]`
    pub w_v: Tensor,
}

#[derive(Debug, Clone)]
pub struct SelfCache {
    x: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

impl SelfAttention {
    pub fn new(width: usize, d_k: usize, d_v: usize, rng: &mut impl Rng) -> Self {
        SelfAttention {
            w_q: Tensor::uniform(&[d_k, width], width, rng),
            w_k: Tensor::uniform(&[d_k, width], width, rng),
            w_v: Tensor::uniform(&[d_v, width], width, rng),
        }
    }

    pub fn zeros(width: usize, d_k: usize, d_v: usize) -> Self {
        SelfAttention {
            w_q: Tensor::zeros(&[d_k, width]),
            w_k: Tensor::zeros(&[d_k, width]),
            w_v: Tensor::zeros(&[d_v, width]),
        }
    }

    pub fn width(&self) -> usize {
        self.w_q.cols()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.rows()
    }

    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<AttentionOutput> {
        self.forward_cached(seq).map(|(o, _)| o)
    }

    pub fn forward_cached(&self, seq: &[Vec<f64>]) -> Result<(AttentionOutput, SelfCache)> {
        check_tokens(seq, self.width(), "self attention")?;
        let q: Vec<Vec<f64>> = seq.iter().map(|x| self.w_q.matvec(x)).collect();
        let k: Vec<Vec<f64>> = seq.iter().map(|x| self.w_k.matvec(x)).collect();
        let v: Vec<Vec<f64>> = seq.iter().map(|x| self.w_v.matvec(x)).collect();
        let scale = 1.0 / (self.d_k() as f64).sqrt();
        let mut a = Vec::with_capacity(seq.len());
        let mut tokens = Vec::with_capacity(seq.len());
        for qt in &q {
            let logits: Vec<f64> = k.iter().map(|ks| dot(qt, ks) * scale).collect();
            let at = softmax(&logits);
            let mut out = vec![0.0; self.w_v.rows()];
            for (w, vs) in at.iter().zip(&v) {
                axpy(*w, vs, &mut out);
            }
            a.push(at);
            tokens.push(out);
        }
        let pooled = mean_rows(&tokens);
        Ok((
            AttentionOutput {
                tokens,
                weights: a.clone(),
                pooled,
            },
            SelfCache {
                x: seq.to_vec(),
                q,
                k,
                v,
                a,
            },
        ))
    }

    pub fn backward(&self, cache: &SelfCache, d_pooled: &[f64], grads: &mut SelfAttention) -> Vec<Vec<f64>> {
        let n = cache.x.len();
        let scale = 1.0 / (self.d_k() as f64).sqrt();
        let dout: Vec<f64> = d_pooled.iter().map(|g| g / n as f64).collect();
        let mut dq = vec![vec![0.0; self.d_k()]; n];
        let mut dk = vec![vec![0.0; self.d_k()]; n];
        let mut dv = vec![vec![0.0; self.w_v.rows()]; n];
        for t in 0..n {
            let da: Vec<f64> = cache.v.iter().map(|vs| dot(&dout, vs)).collect();
            for (s, w) in cache.a[t].iter().enumerate() {
                axpy(*w, &dout, &mut dv[s]);
            }
            let dl = softmax_backward(&cache.a[t], &da);
            for s in 0..n {
                let g = dl[s] * scale;
                axpy(g, &cache.k[s], &mut dq[t]);
                axpy(g, &cache.q[t], &mut dk[s]);
            }
        }
        let mut dx = vec![vec![0.0; self.width()]; n];
        for t in 0..n {
            grads.w_q.add_outer(&dq[t], &cache.x[t]);
            grads.w_k.add_outer(&dk[t], &cache.x[t]);
            grads.w_v.add_outer(&dv[t], &cache.x[t]);
            self.w_q.matvec_t_acc(&dq[t], &mut dx[t]);
            self.w_k.matvec_t_acc(&dk[t], &mut dx[t]);
            self.w_v.matvec_t_acc(&dv[t], &mut dx[t]);
        }
        dx
    }
}

impl Module for SelfAttention {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("w_q".into(), &self.w_q), ("w_k".into(), &self.w_k), ("w_v".into(), &self.w_v)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v]
    }
}

/// `a = softmax(W h_t)`, output `Σ a_t h_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAttention {
    pub w: Tensor,
}

#[derive(Debug, Clone)]
pub struct WeightedCache {
    h: Vec<Vec<f64>>,
    a: Vec<f64>,
}

impl WeightedAttention {
    pub fn new(width: usize, rng: &mut impl Rng) -> Self {
        WeightedAttention {
            w: Tensor::uniform(&[1, width], width, rng),
        }
    }

    pub fn zeros(width: usize) -> Self {
        WeightedAttention {
            w: Tensor::zeros(&[1, width]),
        }
    }

    pub fn width(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, hidden: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.forward_cached(hidden).map(|(out, cache)| (out, cache.a))
    }

    pub fn forward_cached(&self, hidden: &[Vec<f64>]) -> Result<(Vec<f64>, WeightedCache)> {
        check_tokens(hidden, self.width(), "weighted attention")?;
        let scores: Vec<f64> = hidden.iter().map(|h| dot(self.w.data(), h)).collect();
        let a = softmax(&scores);
        let mut out = vec![0.0; self.width()];
        for (w, h) in a.iter().zip(hidden) {
            axpy(*w, h, &mut out);
        }
        Ok((
            out,
            WeightedCache {
                h: hidden.to_vec(),
                a,
            },
        ))
    }

    pub fn backward(&self, cache: &WeightedCache, dout: &[f64], grads: &mut WeightedAttention) -> Vec<Vec<f64>> {
        let da: Vec<f64> = cache.h.iter().map(|h| dot(dout, h)).collect();
        let ds = softmax_backward(&cache.a, &da);
        cache
            .h
            .iter()
            .zip(cache.a.iter().zip(&ds))
            .map(|(h, (&a, &d))| {
                axpy(d, h, grads.w.data_mut());
                let mut dh: Vec<f64> = dout.iter().map(|g| a * g).collect();
                axpy(d, self.w.data(), &mut dh);
                dh
            })
            .collect()
    }
}

impl Module for WeightedAttention {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.w)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, seeded_rng};

    fn seq(n: usize, width: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|t| (0..width).map(|k| ((t * width + k) as f64 * 0.7).cos()).collect())
            .collect()
    }

    fn row_sums_are_one(weights: &[Vec<f64>]) {
        for row in weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_identical_tokens() {
        let mut rng = seeded_rng(1);
        let att = AdditiveAttention::new(3, 4, &mut rng);
        let token = vec![0.3, -1.2, 2.0];
        let out = att.forward(&vec![token.clone(); 4]).unwrap();
        for (a, b) in out.pooled.iter().zip(&token) {
            assert!((a - b).abs() < 1e-12);
        }
        row_sums_are_one(&out.weights);
        assert!(att.forward(&[]).is_err());
        assert!(att.forward(&[vec![1.0]]).is_err());
    }

    #[test]
    fn additive_scalar_hand_trace() {
        let att = AdditiveAttention {
            w_t: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
            w_x: Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            w_a: Tensor::new(vec![1, 1], vec![3.0]).unwrap(),
        };
        let x = [1.0, -0.5];
        let s = |t: f64, u: f64| 1.0 / (1.0 + (-3.0 * (t + 2.0 * u).tanh()).exp());
        let mut expected = 0.0;
        for &t in &x {
            let e: Vec<f64> = x.iter().map(|&u| s(t, u)).collect();
            let z: f64 = e.iter().map(|v| v.exp()).sum();
            expected += x.iter().zip(&e).map(|(u, v)| u * v.exp() / z).sum::<f64>() / 2.0;
        }
        let out = att.forward(&[vec![x[0]], vec![x[1]]]).unwrap();
        assert!((out.pooled[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn self_attention_zero_qk_is_uniform() {
        let mut rng = seeded_rng(2);
        let mut att = SelfAttention::new(3, 4, 2, &mut rng);
        att.w_q.fill(0.0);
        att.w_k.fill(0.0);
        let x = seq(3, 3);
        let out = att.forward(&x).unwrap();
        let vs: Vec<Vec<f64>> = x.iter().map(|t| att.w_v.matvec(t)).collect();
        let mean = mean_rows(&vs);
        for row in &out.tokens {
            for (a, b) in row.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        row_sums_are_one(&out.weights);
    }

    #[test]
    fn self_attention_two_by_two_hand_trace() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let att = SelfAttention {
            w_q: eye.clone(),
            w_k: eye.clone(),
            w_v: eye,
        };
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = att.forward(&x).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let hi = s.exp() / (s.exp() + 1.0);
        assert!((out.tokens[0][0] - hi).abs() < 1e-14);
        assert!((out.tokens[0][1] - (1.0 - hi)).abs() < 1e-14);
        assert!((out.tokens[1][1] - hi).abs() < 1e-14);
    }

    #[test]
    fn weighted_attention_basics() {
        let w = WeightedAttention::zeros(2);
        let h = vec![vec![1.0, 2.0], vec![3.0, 6.0]];
        assert_eq!(w.forward(&h).unwrap().0, vec![2.0, 4.0]);
        let mut rng = seeded_rng(4);
        let w = WeightedAttention::new(2, &mut rng);
        assert_eq!(w.forward(&h[..1]).unwrap().0, h[0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(5);
        let x = seq(3, 4);
        let coef: Vec<f64> = (0..4).map(|k| 1.0 - 0.4 * k as f64).collect();
        let project = |v: &[f64]| dot(v, &coef);

        let add = AdditiveAttention::new(4, 6, &mut rng);
        let (_, cache) = add.forward_cached(&x).unwrap();
        let mut g = AdditiveAttention::zeros(4, 6);
        add.backward(&cache, &coef, &mut g);
        let r = grad_check(&add, &g, |m| project(&m.forward(&x).unwrap().pooled));
        assert!(r.max_rel_err < 1e-5, "additive {r:?}");

        let sa = SelfAttention::new(4, 5, 4, &mut rng);
        let (_, cache) = sa.forward_cached(&x).unwrap();
        let mut g = SelfAttention::zeros(4, 5, 4);
        sa.backward(&cache, &coef, &mut g);
        let r = grad_check(&sa, &g, |m| project(&m.forward(&x).unwrap().pooled));
        assert!(r.max_rel_err < 1e-5, "self {r:?}");

        let wa = WeightedAttention::new(4, &mut rng);
        let (_, cache) = wa.forward_cached(&x).unwrap();
        let mut g = WeightedAttention::zeros(4);
        wa.backward(&cache, &coef, &mut g);
        let r = grad_check(&wa, &g, |m| project(&m.forward(&x).unwrap().0));
        assert!(r.max_rel_err < 1e-5, "weighted {r:?}");
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut rng = seeded_rng(6);
        let x = seq(3, 4);
        let coef = [0.5, -0.25, 1.5, 0.75];
        let add = AdditiveAttention::new(4, 6, &mut rng);
        let (_, cache) = add.forward_cached(&x).unwrap();
        let mut g = AdditiveAttention::zeros(4, 6);
        let dx = add.backward(&cache, &coef, &mut g);
        let f = |xs: &[Vec<f64>]| dot(&add.forward(xs).unwrap().pooled, &coef);
        let eps = 1e-6;
        for t in 0..3 {
            for k in 0..4 {
                let mut up = x.clone();
                up[t][k] += eps;
                let mut dn = x.clone();
                dn[t][k] -= eps;
                let num = (f(&up) - f(&dn)) / (2.0 * eps);
                assert!((num - dx[t][k]).abs() < 1e-7, "token {t} dim {k}");
            }
        }
    }
}
