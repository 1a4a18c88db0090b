use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Module, Tensor};
use crate::error::{Error, Result};

/// Bias-free LSTM cell unrolled over a sequence, starting from `h = c = 0`.
///
/// With `literal_output` the exposed state is `o ⊙ tanh(c_{t-1})` instead of
/// the usual `o ⊙ tanh(c_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub m_i: Tensor,
    pub m_f: Tensor,
    pub m_o: Tensor,
    pub m_c: Tensor,
    pub literal_output: bool,
}

#[derive(Debug, Clone)]
struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    /// tanh of whichever cell state feeds the output.
    tc: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct LstmCache {
    steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmOutput {
    pub hidden: Vec<Vec<f64>>,
    pub h_final: Vec<f64>,
    pub c_final: Vec<f64>,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = |rng: &mut _| Tensor::uniform(&[hidden, inputs], inputs, rng);
        let m = |rng: &mut _| Tensor::uniform(&[hidden, hidden], hidden, rng);
        Lstm {
            w_i: w(rng),
            w_f: w(rng),
            w_o: w(rng),
            w_c: w(rng),
            m_i: m(rng),
            m_f: m(rng),
            m_o: m(rng),
            m_c: m(rng),
            literal_output: false,
        }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, inputs]);
        let m = || Tensor::zeros(&[hidden, hidden]);
        Lstm {
            w_i: w(),
            w_f: w(),
            w_o: w(),
            w_c: w(),
            m_i: m(),
            m_f: m(),
            m_o: m(),
            m_c: m(),
            literal_output: false,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_i.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_i.rows()
    }

    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<LstmOutput> {
        self.forward_cached(seq).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, seq: &[Vec<f64>]) -> Result<(LstmOutput, LstmCache)> {
        let n = self.hidden();
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut hidden = Vec::with_capacity(seq.len());
        let mut steps = Vec::with_capacity(seq.len());
        for x in seq {
            if x.len() != self.inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "lstm expects tokens of width {}, got {}",
                    self.inputs(),
                    x.len()
                )));
            }
            let gate = |w: &Tensor, m: &Tensor| {
                let mut a = w.matvec(x);
                m.matvec_acc(&h, &mut a);
                a
            };
            let i: Vec<f64> = gate(&self.w_i, &self.m_i).into_iter().map(sigmoid).collect();
            let f: Vec<f64> = gate(&self.w_f, &self.m_f).into_iter().map(sigmoid).collect();
            let o: Vec<f64> = gate(&self.w_o, &self.m_o).into_iter().map(sigmoid).collect();
            let g: Vec<f64> = gate(&self.w_c, &self.m_c).into_iter().map(f64::tanh).collect();
            let c_new: Vec<f64> = (0..n).map(|k| i[k] * g[k] + f[k] * c[k]).collect();
            let tc: Vec<f64> = if self.literal_output { &c } else { &c_new }
                .iter()
                .map(|v| v.tanh())
                .collect();
            let h_new: Vec<f64> = (0..n).map(|k| o[k] * tc[k]).collect();
            steps.push(Step {
                x: x.clone(),
                h_prev: std::mem::replace(&mut h, h_new.clone()),
                c_prev: std::mem::replace(&mut c, c_new),
                i,
                f,
                o,
                g,
                tc,
            });
            hidden.push(h_new);
        }
        Ok((
            LstmOutput {
                hidden,
                h_final: h,
                c_final: c,
            },
            LstmCache { steps },
        ))
    }

    /// Backpropagates gradients given for every hidden state; returns the
    /// gradient for every input token.
    pub fn backward(&self, cache: &LstmCache, d_hidden: &[Vec<f64>], grads: &mut Lstm) -> Vec<Vec<f64>> {
        let n = self.hidden();
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        let mut dxs = vec![Vec::new(); cache.steps.len()];
        for (t, s) in cache.steps.iter().enumerate().rev() {
            let dh: Vec<f64> = (0..n).map(|k| d_hidden[t][k] + dh_next[k]).collect();
            let mut dc = dc_next.clone();
            let mut dc_prev = vec![0.0; n];
            let mut dao = vec![0.0; n];
            for k in 0..n {
                dao[k] = dh[k] * s.tc[k] * s.o[k] * (1.0 - s.o[k]);
                let dtc = dh[k] * s.o[k] * (1.0 - s.tc[k] * s.tc[k]);
                if self.literal_output {
                    dc_prev[k] += dtc;
                } else {
                    dc[k] += dtc;
                }
            }
            let mut dai = vec![0.0; n];
            let mut daf = vec![0.0; n];
            let mut dag = vec![0.0; n];
            for k in 0..n {
                dai[k] = dc[k] * s.g[k] * s.i[k] * (1.0 - s.i[k]);
                daf[k] = dc[k] * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
                dag[k] = dc[k] * s.i[k] * (1.0 - s.g[k] * s.g[k]);
                dc_prev[k] += dc[k] * s.f[k];
            }
            let mut dx = vec![0.0; self.inputs()];
            let mut dh_prev = vec![0.0; n];
            for (da, w, m, gw, gm) in [
                (&dai, &self.w_i, &self.m_i, &mut grads.w_i, &mut grads.m_i),
                (&daf, &self.w_f, &self.m_f, &mut grads.w_f, &mut grads.m_f),
                (&dao, &self.w_o, &self.m_o, &mut grads.w_o, &mut grads.m_o),
                (&dag, &self.w_c, &self.m_c, &mut grads.w_c, &mut grads.m_c),
            ] {
                gw.add_outer(da, &s.x);
                gm.add_outer(da, &s.h_prev);
                w.matvec_t_acc(da, &mut dx);
                m.matvec_t_acc(da, &mut dh_prev);
            }
            dxs[t] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dxs
    }
}

impl Module for Lstm {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_i".into(), &self.w_i),
            ("w_f".into(), &self.w_f),
            ("w_o".into(), &self.w_o),
            ("w_c".into(), &self.w_c),
            ("m_i".into(), &self.m_i),
            ("m_f".into(), &self.m_f),
            ("m_o".into(), &self.m_o),
            ("m_c".into(), &self.m_c),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.m_i,
            &mut self.m_f,
            &mut self.m_o,
            &mut self.m_c,
        ]
    }
}
