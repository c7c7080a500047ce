//! A small fully connected policy/value network with hand-written
//! backpropagation, masked-softmax action distributions and Adam.
//!
//! Layout: `input -> hidden[0] -> ... -> hidden[h-1]` with ReLU, then two
//! linear heads on the last hidden layer: action logits (`n_max²` slots) and a
//! scalar state value. All parameters live in one flat `f64` buffer; weight
//! matrices are stored input-major (`w[i * outputs + j]`) so sparse inputs can
//! skip whole rows.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

/// Initial scale of the action head relative to He initialization; keeps the
/// untrained policy close to uniform.
const POLICY_HEAD_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LayerSpec {
    inputs: usize,
    outputs: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    input_dim: usize,
    hidden: Vec<usize>,
    action_dim: usize,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input followed by every post-ReLU hidden activation.
    pub activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub value: f64,
}

impl DenseNet {
    /// He-initialized network; biases start at zero.
    pub fn new(input_dim: usize, hidden: &[usize], action_dim: usize, seed: u64) -> Self {
        let mut net = Self::zeros(input_dim, hidden, action_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.layers.len() - 1;
        for (li, spec) in net.layers.clone().into_iter().enumerate() {
            let he = (2.0 / spec.inputs as f64).sqrt();
            let std = if li == last {
                (1.0 / spec.inputs as f64).sqrt()
            } else if li == last - 1 {
                he * POLICY_HEAD_GAIN
            } else {
                he
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut net.params[spec.w_off..spec.w_off + spec.inputs * spec.outputs] {
                *w = normal.sample(&mut rng);
            }
        }
        net
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], action_dim: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 2);
        let mut off = 0;
        let mut push = |inputs: usize, outputs: usize| {
            let spec = LayerSpec {
                inputs,
                outputs,
                w_off: off,
                b_off: off + inputs * outputs,
            };
            off += inputs * outputs + outputs;
            layers.push(spec);
        };
        let mut prev = input_dim;
        for &h in hidden {
            push(prev, h);
            prev = h;
        }
        push(prev, action_dim);
        push(prev, 1);
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            action_dim,
            params: vec![0.0; off],
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// `[input, hidden..., actions]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.action_dim);
        d
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    fn affine(&self, spec: &LayerSpec, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.params[spec.b_off..spec.b_off + spec.outputs]);
        let w = &self.params[spec.w_off..spec.b_off];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * spec.outputs..(i + 1) * spec.outputs];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
    }

    /// Logits and value for `input`.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, f64)> {
        let pass = self.forward_pass(input)?;
        Ok((pass.logits, pass.value))
    }

    pub fn forward_pass(&self, input: &[f64]) -> Result<ForwardPass> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: input.len(),
            });
        }
        let n_hidden = self.hidden.len();
        let mut activations = Vec::with_capacity(n_hidden + 1);
        activations.push(input.to_vec());
        for spec in &self.layers[..n_hidden] {
            let mut z = Vec::with_capacity(spec.outputs);
            self.affine(spec, activations.last().expect("input present"), &mut z);
            for v in &mut z {
                *v = v.max(0.0);
            }
            activations.push(z);
        }
        let top = activations.last().expect("input present");
        let mut logits = Vec::with_capacity(self.action_dim);
        self.affine(&self.layers[n_hidden], top, &mut logits);
        let mut value = Vec::with_capacity(1);
        self.affine(&self.layers[n_hidden + 1], top, &mut value);
        Ok(ForwardPass {
            activations,
            logits,
            value: value[0],
        })
    }

    /// Gradient of a loss with respect to every parameter, given the loss
    /// gradient with respect to the two heads.
    pub fn backward(&self, input: &[f64], d_logits: &[f64], d_value: f64) -> Result<Vec<f64>> {
        let pass = self.forward_pass(input)?;
        let mut grads = self.zero_grad();
        self.accumulate_backward(&pass, d_logits, d_value, &mut grads)?;
        Ok(grads)
    }

    /// Adds this sample's parameter gradient into `grads`.
    pub fn accumulate_backward(
        &self,
        pass: &ForwardPass,
        d_logits: &[f64],
        d_value: f64,
        grads: &mut [f64],
    ) -> Result<()> {
        if d_logits.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.action_dim,
                actual: d_logits.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: grads.len(),
            });
        }
        if !d_value.is_finite() || d_logits.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("head gradient"));
        }
        let n_hidden = self.hidden.len();
        let top = &pass.activations[n_hidden];

        // Both heads feed the last hidden layer.
        let mut delta = vec![0.0; top.len()];
        self.linear_backward(&self.layers[n_hidden], top, d_logits, grads, Some(&mut delta));
        self.linear_backward(&self.layers[n_hidden + 1], top, &[d_value], grads, Some(&mut delta));

        for li in (0..n_hidden).rev() {
            for (d, &a) in delta.iter_mut().zip(&pass.activations[li + 1]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let x = &pass.activations[li];
            if li == 0 {
                self.linear_backward(&self.layers[li], x, &delta, grads, None);
            } else {
                let mut prev = vec![0.0; x.len()];
                self.linear_backward(&self.layers[li], x, &delta, grads, Some(&mut prev));
                delta = prev;
            }
        }
        Ok(())
    }

    fn linear_backward(
        &self,
        spec: &LayerSpec,
        x: &[f64],
        delta: &[f64],
        grads: &mut [f64],
        d_input: Option<&mut Vec<f64>>,
    ) {
        let out = spec.outputs;
        for (g, &d) in grads[spec.b_off..spec.b_off + out].iter_mut().zip(delta) {
            *g += d;
        }
        if delta.iter().all(|&d| d == 0.0) {
            return;
        }
        let gw = &mut grads[spec.w_off..spec.b_off];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (g, &d) in gw[i * out..(i + 1) * out].iter_mut().zip(delta) {
                    *g += xi * d;
                }
            }
        }
        if let Some(d_in) = d_input {
            let w = &self.params[spec.w_off..spec.b_off];
            for (i, di) in d_in.iter_mut().enumerate() {
                *di += w[i * out..(i + 1) * out]
                    .iter()
                    .zip(delta)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
    }
}

/// A categorical distribution over action slots with invalid slots masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
    mask: Vec<bool>,
}

/// Softmax over the unmasked logits; masked slots get probability zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<ActionDistribution> {
    if logits.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len(),
            actual: mask.len(),
        });
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(ActionDistribution {
        probs,
        mask: mask.to_vec(),
    })
}

impl ActionDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Inverse-CDF draw over the unmasked slots.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<usize> {
        let last = self
            .mask
            .iter()
            .rposition(|&m| m)
            .ok_or(Error::AllMasked)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, (&p, &m)) in self.probs.iter().zip(&self.mask).enumerate() {
            if m {
                acc += p;
                if u < acc {
                    return Ok(i);
                }
            }
        }
        Ok(last)
    }

    pub fn log_prob(&self, index: usize) -> Result<f64> {
        match self.mask.get(index) {
            Some(true) => Ok(self.probs[index].ln()),
            Some(false) => Err(Error::MaskedIndex(index)),
            None => Err(Error::DimensionMismatch {
                expected: self.mask.len(),
                actual: index + 1,
            }),
        }
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Most probable unmasked slot; lowest index on ties.
    pub fn mode(&self) -> usize {
        let mut best = None;
        for (i, (&p, &m)) in self.probs.iter().zip(&self.mask).enumerate() {
            if m && best.is_none_or(|(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        best.map(|(i, _)| i).expect("distribution has an unmasked slot")
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(net: &mut DenseNet, grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != net.params.len() || state.m.len() != net.params.len() {
        return Err(Error::DimensionMismatch {
            expected: net.params.len(),
            actual: grads.len().min(state.m.len()),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (((p, &g), m), v) in net
        .params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    if net.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("parameters"));
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume or apply a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub n_max: usize,
    pub catalog_fingerprint: String,
    pub net: DenseNet,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn new(net: &DenseNet, optimizer: &AdamState, n_max: usize, fingerprint: &str) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            layer_dims: net.layer_dims(),
            n_max,
            catalog_fingerprint: fingerprint.to_string(),
            net: net.clone(),
            optimizer: optimizer.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        if ck.layer_dims != ck.net.layer_dims()
            || ck.net.params.len() != ck.optimizer.m.len()
            || ck.net.layers.last().map(|l| l.b_off + l.outputs) != Some(ck.net.params.len())
        {
            return Err(Error::Checkpoint("inconsistent layer dimensions".into()));
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rejects a checkpoint trained against a different catalog or capacity.
    pub fn check_compatible(&self, fingerprint: &str, input_dim: usize, n_max: usize) -> Result<()> {
        if self.catalog_fingerprint != fingerprint {
            return Err(Error::Checkpoint("catalog fingerprint mismatch".into()));
        }
        if self.n_max != n_max || self.net.action_dim != n_max * n_max {
            return Err(Error::Checkpoint(format!(
                "checkpoint n_max {} does not match {n_max}",
                self.n_max
            )));
        }
        if self.net.input_dim != input_dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint input dimension {} does not match {input_dim}",
                self.net.input_dim
            )));
        }
        Ok(())
    }
}
