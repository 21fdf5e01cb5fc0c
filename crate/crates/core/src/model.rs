//! Minimal differentiable classifier: token embeddings, mean pooling, one
//! tanh hidden layer, temperature-scaled softmax. Gradients are derived by
//! hand; the forward pass records every intermediate needed for an exact
//! backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::Dist;
use crate::rngs::Stream;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_hid: usize,
    pub num_labels: usize,
    /// vocab_size x d_emb, row-major.
    pub embeddings: Vec<f64>,
    /// d_emb x d_hid, row-major.
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// d_hid x num_labels, row-major.
    pub out_weights: Vec<f64>,
    pub out_bias: Vec<f64>,
    pub temperature: f64,
}

pub const DEFAULT_D_EMB: usize = 16;
pub const DEFAULT_D_HID: usize = 32;

impl ModelParams {
    /// Uniform(-0.1, 0.1) initialization from the given stream.
    pub fn init(vocab_size: usize, num_labels: usize, rng: &mut Stream) -> Self {
        Self::init_with_dims(vocab_size, num_labels, DEFAULT_D_EMB, DEFAULT_D_HID, rng)
    }

    pub fn init_with_dims(
        vocab_size: usize,
        num_labels: usize,
        d_emb: usize,
        d_hid: usize,
        rng: &mut Stream,
    ) -> Self {
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect() };
        Self {
            vocab_size,
            d_emb,
            d_hid,
            num_labels,
            embeddings: draw(vocab_size * d_emb),
            hidden_weights: draw(d_emb * d_hid),
            hidden_bias: draw(d_hid),
            out_weights: draw(d_hid * num_labels),
            out_bias: draw(num_labels),
            temperature: 1.0,
        }
    }

    pub fn zeros(vocab_size: usize, num_labels: usize) -> Self {
        Self {
            vocab_size,
            d_emb: DEFAULT_D_EMB,
            d_hid: DEFAULT_D_HID,
            num_labels,
            embeddings: vec![0.0; vocab_size * DEFAULT_D_EMB],
            hidden_weights: vec![0.0; DEFAULT_D_EMB * DEFAULT_D_HID],
            hidden_bias: vec![0.0; DEFAULT_D_HID],
            out_weights: vec![0.0; DEFAULT_D_HID * num_labels],
            out_bias: vec![0.0; num_labels],
            temperature: 1.0,
        }
    }

    /// Total number of trainable scalars (temperature excluded).
    pub fn num_weights(&self) -> usize {
        self.embeddings.len()
            + self.hidden_weights.len()
            + self.hidden_bias.len()
            + self.out_weights.len()
            + self.out_bias.len()
    }

    /// Flat view of trainable weights, for finite-difference probing.
    pub fn weight_at(&self, i: usize) -> f64 {
        *self.slot(i)
    }

    pub fn set_weight(&mut self, i: usize, v: f64) {
        let (field, off) = self.locate(i);
        match field {
            0 => self.embeddings[off] = v,
            1 => self.hidden_weights[off] = v,
            2 => self.hidden_bias[off] = v,
            3 => self.out_weights[off] = v,
            4 => self.out_bias[off] = v,
            _ => unreachable!(),
        }
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let mut i = i;
        let sizes = [
            self.embeddings.len(),
            self.hidden_weights.len(),
            self.hidden_bias.len(),
            self.out_weights.len(),
            self.out_bias.len(),
        ];
        for (field, &n) in sizes.iter().enumerate() {
            if i < n {
                return (field, i);
            }
            i -= n;
        }
        panic!("weight index out of range");
    }

    fn slot(&self, i: usize) -> &f64 {
        let (field, off) = self.locate(i);
        match field {
            0 => &self.embeddings[off],
            1 => &self.hidden_weights[off],
            2 => &self.hidden_bias[off],
            3 => &self.out_weights[off],
            4 => &self.out_bias[off],
            _ => unreachable!(),
        }
    }

    pub fn apply_update(&mut self, grad: &GradientVector, step: f64) {
        axpy(&mut self.embeddings, &grad.embeddings, step);
        axpy(&mut self.hidden_weights, &grad.hidden_weights, step);
        axpy(&mut self.hidden_bias, &grad.hidden_bias, step);
        axpy(&mut self.out_weights, &grad.out_weights, step);
        axpy(&mut self.out_bias, &grad.out_bias, step);
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Recorded intermediates from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    pub pooled: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub post_activation: Vec<f64>,
    pub logits: Vec<f64>,
    pub output: Dist,
}

/// Gradient with the same shape as the trainable parameters.
#[derive(Debug, Clone)]
pub struct GradientVector {
    pub embeddings: Vec<f64>,
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub out_weights: Vec<f64>,
    pub out_bias: Vec<f64>,
}

impl GradientVector {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            embeddings: vec![0.0; params.embeddings.len()],
            hidden_weights: vec![0.0; params.hidden_weights.len()],
            hidden_bias: vec![0.0; params.hidden_bias.len()],
            out_weights: vec![0.0; params.out_weights.len()],
            out_bias: vec![0.0; params.out_bias.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &GradientVector, a: f64) {
        axpy(&mut self.embeddings, &other.embeddings, a);
        axpy(&mut self.hidden_weights, &other.hidden_weights, a);
        axpy(&mut self.hidden_bias, &other.hidden_bias, a);
        axpy(&mut self.out_weights, &other.out_weights, a);
        axpy(&mut self.out_bias, &other.out_bias, a);
    }

    pub fn scale(&mut self, a: f64) {
        for v in [
            &mut self.embeddings,
            &mut self.hidden_weights,
            &mut self.hidden_bias,
            &mut self.out_weights,
            &mut self.out_bias,
        ] {
            for x in v.iter_mut() {
                *x *= a;
            }
        }
    }

    pub fn weight_at(&self, i: usize) -> f64 {
        let sizes = [
            self.embeddings.len(),
            self.hidden_weights.len(),
            self.hidden_bias.len(),
            self.out_weights.len(),
            self.out_bias.len(),
        ];
        let mut i = i;
        for (field, &n) in sizes.iter().enumerate() {
            if i < n {
                return match field {
                    0 => self.embeddings[i],
                    1 => self.hidden_weights[i],
                    2 => self.hidden_bias[i],
                    3 => self.out_weights[i],
                    _ => self.out_bias[i],
                };
            }
            i -= n;
        }
        panic!("gradient index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.iter().all(|x| x.is_finite())
            && self.hidden_weights.iter().all(|x| x.is_finite())
            && self.hidden_bias.iter().all(|x| x.is_finite())
            && self.out_weights.iter().all(|x| x.is_finite())
            && self.out_bias.iter().all(|x| x.is_finite())
    }
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Forward pass; returns the output distribution and the full trace.
pub fn forward(params: &ModelParams, tokens: &[usize]) -> Result<(Dist, ForwardTrace)> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("tokens".into()));
    }
    for &t in tokens {
        if t >= params.vocab_size {
            return Err(Error::OutOfVocab {
                token: t,
                vocab_size: params.vocab_size,
            });
        }
    }
    let (d_emb, d_hid, k) = (params.d_emb, params.d_hid, params.num_labels);
    let inv_n = 1.0 / tokens.len() as f64;
    let mut pooled = vec![0.0; d_emb];
    for &t in tokens {
        let row = &params.embeddings[t * d_emb..(t + 1) * d_emb];
        for (p, &e) in pooled.iter_mut().zip(row) {
            *p += e * inv_n;
        }
    }
    let mut pre = params.hidden_bias.clone();
    for i in 0..d_emb {
        let pi = pooled[i];
        let row = &params.hidden_weights[i * d_hid..(i + 1) * d_hid];
        for j in 0..d_hid {
            pre[j] += pi * row[j];
        }
    }
    let post: Vec<f64> = pre.iter().map(|&a| a.tanh()).collect();
    let mut logits = params.out_bias.clone();
    for j in 0..d_hid {
        let hj = post[j];
        let row = &params.out_weights[j * k..(j + 1) * k];
        for c in 0..k {
            logits[c] += hj * row[c];
        }
    }
    let probs = softmax(&logits, params.temperature);
    let output = Dist::new(probs)?;
    let trace = ForwardTrace {
        tokens: tokens.to_vec(),
        pooled,
        pre_activation: pre,
        post_activation: post,
        logits,
        output: output.clone(),
    };
    Ok((output, trace))
}

/// Exact gradient of a scalar loss given its gradient w.r.t. the output
/// distribution. The trace must come from `forward` on the same params.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    dloss_ddist: &[f64],
) -> Result<GradientVector> {
    let (d_emb, d_hid, k) = (params.d_emb, params.d_hid, params.num_labels);
    if dloss_ddist.len() != k || trace.pooled.len() != d_emb || trace.post_activation.len() != d_hid
    {
        return Err(Error::Contract("trace/gradient shape mismatch".into()));
    }
    let s = trace.output.as_slice();
    let dot: f64 = dloss_ddist.iter().zip(s).map(|(&g, &p)| g * p).sum();
    // softmax jacobian with temperature: dL/dz_c = s_c (g_c - <g, s>) / T
    let dlogits: Vec<f64> = (0..k)
        .map(|c| s[c] * (dloss_ddist[c] - dot) / params.temperature)
        .collect();

    let mut grad = GradientVector::zeros_like(params);
    for c in 0..k {
        grad.out_bias[c] = dlogits[c];
    }
    let mut dpost = vec![0.0; d_hid];
    for j in 0..d_hid {
        let hj = trace.post_activation[j];
        let row = &params.out_weights[j * k..(j + 1) * k];
        let grow = &mut grad.out_weights[j * k..(j + 1) * k];
        let mut acc = 0.0;
        for c in 0..k {
            grow[c] = hj * dlogits[c];
            acc += row[c] * dlogits[c];
        }
        dpost[j] = acc;
    }
    // tanh'(a) = 1 - tanh(a)^2
    let dpre: Vec<f64> = (0..d_hid)
        .map(|j| dpost[j] * (1.0 - trace.post_activation[j] * trace.post_activation[j]))
        .collect();
    for j in 0..d_hid {
        grad.hidden_bias[j] = dpre[j];
    }
    let mut dpooled = vec![0.0; d_emb];
    for i in 0..d_emb {
        let pi = trace.pooled[i];
        let wrow = &params.hidden_weights[i * d_hid..(i + 1) * d_hid];
        let grow = &mut grad.hidden_weights[i * d_hid..(i + 1) * d_hid];
        let mut acc = 0.0;
        for j in 0..d_hid {
            grow[j] = pi * dpre[j];
            acc += wrow[j] * dpre[j];
        }
        dpooled[i] = acc;
    }
    let inv_n = 1.0 / trace.tokens.len() as f64;
    for &t in &trace.tokens {
        let row = &mut grad.embeddings[t * d_emb..(t + 1) * d_emb];
        for (g, &d) in row.iter_mut().zip(&dpooled) {
            *g += d * inv_n;
        }
    }
    Ok(grad)
}

/// Argmax with ties broken toward the lowest label index.
pub fn predict_label(d: &Dist) -> usize {
    let mut best = 0;
    for (i, &p) in d.as_slice().iter().enumerate() {
        if p > d.get(best) {
            best = i;
        }
    }
    best
}

/// Model risk under 0-1 loss: 1 - p(argmax).
pub fn model_risk(d: &Dist) -> f64 {
    1.0 - d.get(predict_label(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngs;

    #[test]
    fn zero_params_give_uniform_output() {
        let params = ModelParams::zeros(10, 4);
        let (d, _) = forward(&params, &[1, 2, 3]).unwrap();
        for &p in d.as_slice() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn high_temperature_approaches_uniform_entropy() {
        let mut rng = rngs::stream(0, "init");
        let mut params = ModelParams::init(20, 5, &mut rng);
        params.temperature = 1e4;
        let (d, _) = forward(&params, &[3, 4, 5, 6]).unwrap();
        let h = crate::prob::entropy(&d);
        assert!((h - 5.0f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn mean_pooling_is_order_invariant() {
        let mut rng = rngs::stream(1, "init");
        let params = ModelParams::init(20, 3, &mut rng);
        let (a, _) = forward(&params, &[2, 7, 7, 9]).unwrap();
        let (b, _) = forward(&params, &[7, 9, 2, 7]).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let params = ModelParams::zeros(10, 4);
        assert!(forward(&params, &[]).is_err());
        assert!(forward(&params, &[10]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradient() {
        let mut rng = rngs::stream(2, "init");
        let params = ModelParams::init(12, 4, &mut rng);
        let (_, trace) = forward(&params, &[1, 2, 3]).unwrap();
        let grad = backward(&params, &trace, &[0.0; 4]).unwrap();
        assert!(grad.embeddings.iter().all(|&g| g == 0.0));
        assert!(grad.out_bias.iter().all(|&g| g == 0.0));
    }

    /// Central finite differences of an arbitrary scalar of the output.
    fn fd_check<F: Fn(&Dist) -> (f64, Vec<f64>)>(loss: F, seed: u64) {
        let mut rng = rngs::stream(seed, "fdinit");
        let mut params = ModelParams::init_with_dims(12, 4, 4, 6, &mut rng);
        let tokens = [1usize, 5, 9];
        let (d, trace) = forward(&params, &tokens).unwrap();
        let (_, dl_dd) = loss(&d);
        let grad = backward(&params, &trace, &dl_dd).unwrap();
        let step = 1e-5;
        let n = params.num_weights();
        // probe a deterministic spread of coordinates
        for idx in (0..n).step_by(n / 40 + 1) {
            let orig = params.weight_at(idx);
            set_weight(&mut params, idx, orig + step);
            let (dp, _) = forward(&params, &tokens).unwrap();
            let (lp, _) = loss(&dp);
            set_weight(&mut params, idx, orig - step);
            let (dm, _) = forward(&params, &tokens).unwrap();
            let (lm, _) = loss(&dm);
            set_weight(&mut params, idx, orig);
            let numeric = (lp - lm) / (2.0 * step);
            let analytic = grad.weight_at(idx);
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-4,
                "idx {idx}: numeric {numeric} vs analytic {analytic}"
            );
        }
    }

    fn set_weight(params: &mut ModelParams, i: usize, v: f64) {
        params.set_weight(i, v);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let target = 2usize;
        fd_check(
            move |d| {
                let mut g = vec![0.0; d.len()];
                g[target] = -1.0 / d.get(target);
                (-(d.get(target)).ln(), g)
            },
            3,
        );
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        fd_check(
            |d| {
                let h = crate::prob::entropy(d);
                let g: Vec<f64> = d.as_slice().iter().map(|&p| -(p.ln() + 1.0)).collect();
                (h, g)
            },
            4,
        );
    }

    #[test]
    fn predict_label_tie_break() {
        assert_eq!(predict_label(&Dist::new(vec![0.2, 0.5, 0.3]).unwrap()), 1);
        assert_eq!(predict_label(&Dist::new(vec![0.5, 0.5]).unwrap()), 0);
        assert_eq!(predict_label(&Dist::uniform(4).unwrap()), 0);
    }

    #[test]
    fn model_risk_cases() {
        assert_eq!(model_risk(&Dist::point_mass(1, 3).unwrap()), 0.0);
        assert!((model_risk(&Dist::uniform(4).unwrap()) - 0.75).abs() < 1e-12);
        assert!((model_risk(&Dist::new(vec![0.6, 0.4]).unwrap()) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn temperature_monotonicity_of_entropy() {
        let mut rng = rngs::stream(6, "init");
        let base = ModelParams::init(15, 4, &mut rng);
        for &(t1, t2) in &[(1.0, 2.0), (1.5, 4.0), (2.0, 50.0)] {
            let mut a = base.clone();
            a.temperature = t1;
            let mut b = base.clone();
            b.temperature = t2;
            let (da, _) = forward(&a, &[1, 3, 8]).unwrap();
            let (db, _) = forward(&b, &[1, 3, 8]).unwrap();
            assert!(crate::prob::entropy(&db) >= crate::prob::entropy(&da) - 1e-12);
        }
    }
}
