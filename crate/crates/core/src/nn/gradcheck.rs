use serde::{Deserialize, Serialize};

use rand::Rng;

use super::{
    dot, seeded_rng, Activation, AdditiveAttention, Dense, Lstm, Module, SelfAttention, WeightedAttention,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Denominator floor, so gradients near zero are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `name[index]` of the worst parameter.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

pub fn grad_check<M, F>(model: &M, analytic: &M, loss: F) -> GradCheckReport
where
    M: Module + Clone,
    F: Fn(&M) -> f64,
{
    grad_check_with(model, analytic, loss, GradCheckOptions::default())
}

/// Compares `analytic` against central finite differences of `loss` on
/// every parameter of `model`.
pub fn grad_check_with<M, F>(model: &M, analytic: &M, loss: F, opts: GradCheckOptions) -> GradCheckReport
where
    M: Module + Clone,
    F: Fn(&M) -> f64,
{
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic
        .named_params()
        .into_iter()
        .map(|(_, t)| t.data().to_vec())
        .collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (p, name) in names.iter().enumerate() {
        let len = grads[p].len();
        for k in 0..len {
            let original = probe.params_mut()[p].data()[k];
            probe.params_mut()[p].data_mut()[k] = original + opts.step;
            let up = loss(&probe);
            probe.params_mut()[p].data_mut()[k] = original - opts.step;
            let down = loss(&probe);
            probe.params_mut()[p].data_mut()[k] = original;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grads[p][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = format!("{name}[{k}]");
            }
            report.checked += 1;
        }
    }
    report
}

/// Parameter gradient checks for every layer type on random inputs, with the
/// loss `Σ r ⊙ output` for a random `r`.
pub fn layer_suite(seed: u64) -> Vec<(String, GradCheckReport)> {
    let mut rng = seeded_rng(seed);
    let mut vector = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let seq: Vec<Vec<f64>> = (0..3).map(|_| vector(6)).collect();
    let r8 = vector(8);
    let r_seq: Vec<Vec<f64>> = (0..3).map(|_| vector(8)).collect();
    let r6 = vector(6);
    let x = vector(6);
    let mut rng = seeded_rng(seed.wrapping_add(1));
    let mut out = Vec::new();

    for act in [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
        let layer = Dense::new(6, 8, act, &mut rng);
        let (_, cache) = layer.forward_cached(&x).expect("shapes fixed");
        let mut g = layer.zeroed();
        layer.backward(&cache, &r8, &mut g);
        let report = grad_check(&layer, &g, |m| dot(&m.forward(&x).expect("shapes fixed"), &r8));
        out.push((format!("dense-{act:?}").to_lowercase(), report));
    }

    for literal in [false, true] {
        let mut lstm = Lstm::new(6, 8, &mut rng);
        lstm.literal_output = literal;
        let (_, cache) = lstm.forward_cached(&seq).expect("shapes fixed");
        let mut g = lstm.zeroed();
        lstm.backward(&cache, &r_seq, &mut g);
        let loss = |m: &Lstm| {
            let h = m.forward(&seq).expect("shapes fixed").hidden;
            h.iter().zip(&r_seq).map(|(a, b)| dot(a, b)).sum()
        };
        let name = if literal { "lstm-literal" } else { "lstm" };
        out.push((name.to_string(), grad_check(&lstm, &g, loss)));
    }

    let additive = AdditiveAttention::new(6, 8, &mut rng);
    let (_, cache) = additive.forward_cached(&seq).expect("shapes fixed");
    let mut g = additive.zeroed();
    additive.backward(&cache, &r6, &mut g);
    let report = grad_check(&additive, &g, |m| dot(&m.forward(&seq).expect("shapes fixed").pooled, &r6));
    out.push(("additive-attention".to_string(), report));

    let selfatt = SelfAttention::new(6, 8, 8, &mut rng);
    let (_, cache) = selfatt.forward_cached(&seq).expect("shapes fixed");
    let mut g = selfatt.zeroed();
    selfatt.backward(&cache, &r8, &mut g);
    let report = grad_check(&selfatt, &g, |m| dot(&m.forward(&seq).expect("shapes fixed").pooled, &r8));
    out.push(("self-attention".to_string(), report));

    let weighted = WeightedAttention::new(6, &mut rng);
    let (_, cache) = weighted.forward_cached(&seq).expect("shapes fixed");
    let mut g = weighted.zeroed();
    weighted.backward(&cache, &r6, &mut g);
    let report = grad_check(&weighted, &g, |m| dot(&m.forward(&seq).expect("shapes fixed").0, &r6));
    out.push(("weighted-attention".to_string(), report));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for (name, report) in layer_suite(3) {
            assert!(report.passes(1e-4), "{name}: {report:?}");
            assert!(report.checked > 0);
        }
    }

    #[test]
    fn linear_model_is_exact() {
        let mut rng = seeded_rng(0);
        let d = Dense::new(3, 1, Activation::Linear, &mut rng);
        let x = [0.4, -1.3, 2.2];
        let (_, cache) = d.forward_cached(&x).unwrap();
        let mut g = d.zeroed();
        d.backward(&cache, &[1.0], &mut g);
        let r = grad_check(&d, &g, |m| m.forward(&x).unwrap()[0]);
        assert!(r.max_rel_err < 1e-9, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let mut rng = seeded_rng(0);
        let d = Dense::new(3, 2, Activation::Tanh, &mut rng);
        let x = [0.4, -1.3, 2.2];
        let (_, cache) = d.forward_cached(&x).unwrap();
        let mut g = d.zeroed();
        d.backward(&cache, &[1.0, 1.0], &mut g);
        g.w.data_mut()[2] *= 1.01;
        let r = grad_check(&d, &g, |m| m.forward(&x).unwrap().iter().sum());
        assert!(!r.passes(1e-4));
        assert_eq!(r.worst, "w[2]");
    }
}
