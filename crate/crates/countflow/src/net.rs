//! The rate network: a small dense net mapping (state, time, optional
//! condition) to nonnegative birth rates and death coefficients, with
//! hand-rolled reverse-mode gradients and an Adam optimizer.
//!
//! Inputs are the counts scaled by a fixed constant, the raw time, a
//! sinusoidal time embedding, and (for conditional models) a learned
//! per-label embedding with an extra learned null row used for dropped
//! conditions. Hidden layers use SELU; the two output heads pass through
//! softplus, so rates are nonnegative for any finite weights. Death rates
//! are `x ⊙ β`, which pins the death rate of a zero count to zero
//! structurally rather than by learning.
//!
//! The final layer is zero-initialized, so a fresh network outputs
//! `softplus(0) = ln 2` everywhere.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::RateModel;
use crate::types::{BridgeSample, CountVector, RateField};

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

const CHECKPOINT_MAGIC: &[u8; 4] = b"CFCK";
const CHECKPOINT_VERSION: u32 = 1;

fn selu(z: f64) -> f64 {
    if z > 0.0 {
        SELU_SCALE * z
    } else {
        SELU_SCALE * SELU_ALPHA * (z.exp() - 1.0)
    }
}

fn selu_deriv(z: f64) -> f64 {
    if z > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * z.exp()
    }
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Architecture of a [`RateNetwork`]; stored verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// State dimension d; the output is always 2d (d birth rates and d
    /// death coefficients) regardless of the count range.
    pub dim: usize,
    pub hidden_widths: Vec<usize>,
    /// Number of condition labels; 0 means an unconditional model.
    pub n_conditions: usize,
    /// Width of the learned condition embedding (ignored when
    /// `n_conditions == 0`).
    pub condition_embed_width: usize,
    /// Number of sinusoidal time frequencies, geometrically spaced
    /// between 1 and 1000; each contributes a sine and a cosine feature.
    pub time_embed_frequencies: usize,
    /// Fixed input scale for counts, typically 1 / (max training count).
    pub count_scale: f64,
}

impl NetConfig {
    pub fn feature_width(&self) -> usize {
        let embed = if self.n_conditions > 0 {
            self.condition_embed_width
        } else {
            0
        };
        self.dim + 1 + 2 * self.time_embed_frequencies + embed
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden widths must be >= 1"));
        }
        if self.n_conditions > 0 && self.condition_embed_width == 0 {
            return Err(Error::invalid(
                "conditional models need condition_embed_width >= 1",
            ));
        }
        if !(self.count_scale > 0.0) || !self.count_scale.is_finite() {
            return Err(Error::invalid(format!(
                "count_scale must be positive and finite, got {}",
                self.count_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    in_width: usize,
    out_width: usize,
    w_offset: usize,
    b_offset: usize,
}

impl LayerShape {
    fn param_count(&self) -> usize {
        self.in_width * self.out_width + self.out_width
    }
}

fn build_layout(config: &NetConfig) -> (Vec<LayerShape>, usize, usize) {
    let mut widths = vec![config.feature_width()];
    widths.extend_from_slice(&config.hidden_widths);
    widths.push(2 * config.dim);

    let mut layers = Vec::with_capacity(widths.len() - 1);
    let mut offset = 0;
    for pair in widths.windows(2) {
        let (in_width, out_width) = (pair[0], pair[1]);
        let shape = LayerShape {
            in_width,
            out_width,
            w_offset: offset,
            b_offset: offset + in_width * out_width,
        };
        offset += shape.param_count();
        layers.push(shape);
    }
    let embed_offset = offset;
    if config.n_conditions > 0 {
        offset += (config.n_conditions + 1) * config.condition_embed_width;
    }
    (layers, embed_offset, offset)
}

/// Dense rate network with flat parameter storage (declaration order:
/// per layer weights then biases, then condition embeddings with the
/// null row last) and Adam moment state.
#[derive(Debug, Clone)]
pub struct RateNetwork {
    config: NetConfig,
    params: Vec<f64>,
    layers: Vec<LayerShape>,
    embed_offset: usize,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_steps: u64,
}

impl RateNetwork {
    /// Fresh network: hidden layers get fan-in-scaled uniform weights,
    /// the output head starts at zero so initial rates are
    /// `softplus(0) = ln 2`.
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (layers, embed_offset, total) = build_layout(&config);
        let mut params = vec![0.0; total];
        let n_layers = layers.len();
        for (l, shape) in layers.iter().enumerate() {
            if l + 1 == n_layers {
                break; // head stays at zero
            }
            let bound = (3.0 / shape.in_width as f64).sqrt();
            for w in &mut params[shape.w_offset..shape.b_offset] {
                *w = (rng.random::<f64>() * 2.0 - 1.0) * bound;
            }
        }
        if config.n_conditions > 0 {
            let bound = (3.0 / config.condition_embed_width as f64).sqrt();
            for w in &mut params[embed_offset..] {
                *w = (rng.random::<f64>() * 2.0 - 1.0) * bound;
            }
        }
        let adam_m = vec![0.0; total];
        let adam_v = vec![0.0; total];
        Ok(RateNetwork {
            config,
            params,
            layers,
            embed_offset,
            adam_m,
            adam_v,
            adam_steps: 0,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Total number of trainable scalars (weights, biases and embedding
    /// entries including the null row).
    pub fn count_params(&self) -> usize {
        self.params.len()
    }

    /// Flat parameter access, declaration order.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable flat parameter access (used by the optimizer and by
    /// finite-difference checks).
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam_steps
    }

    pub fn params_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn embedding_row(&self, label: Option<usize>) -> Result<Option<usize>> {
        if self.config.n_conditions == 0 {
            return match label {
                None => Ok(None),
                Some(l) => Err(Error::invalid(format!(
                    "condition label {l} passed to an unconditional model"
                ))),
            };
        }
        match label {
            Some(l) if l >= self.config.n_conditions => Err(Error::invalid(format!(
                "unknown condition label {l} (model has {})",
                self.config.n_conditions
            ))),
            Some(l) => Ok(Some(l)),
            None => Ok(Some(self.config.n_conditions)), // null row
        }
    }

    fn build_features(&self, x: &CountVector, t: f64, condition: Option<usize>) -> Result<Vec<f64>> {
        if x.dim() != self.config.dim {
            return Err(Error::dim(format!(
                "state has dimension {}, model expects {}",
                x.dim(),
                self.config.dim
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("model time must be in [0, 1], got {t}")));
        }
        let mut features = Vec::with_capacity(self.config.feature_width());
        for &xi in x.iter() {
            features.push(xi as f64 * self.config.count_scale);
        }
        features.push(t);
        let f = self.config.time_embed_frequencies;
        for k in 0..f {
            let omega = if f > 1 {
                1000f64.powf(k as f64 / (f - 1) as f64)
            } else {
                1.0
            };
            features.push((omega * t).sin());
            features.push((omega * t).cos());
        }
        if let Some(row) = self.embedding_row(condition)? {
            let w = self.config.condition_embed_width;
            let start = self.embed_offset + row * w;
            features.extend_from_slice(&self.params[start..start + w]);
        }
        Ok(features)
    }

    fn apply_layer(&self, shape: &LayerShape, input: &[f64]) -> Vec<f64> {
        let weights = &self.params[shape.w_offset..shape.b_offset];
        let biases = &self.params[shape.b_offset..shape.b_offset + shape.out_width];
        let mut out = Vec::with_capacity(shape.out_width);
        for o in 0..shape.out_width {
            let row = &weights[o * shape.in_width..(o + 1) * shape.in_width];
            let mut acc = biases[o];
            for (w, a) in row.iter().zip(input.iter()) {
                acc += w * a;
            }
            out.push(acc);
        }
        out
    }

    /// Pre-activations of the output head (2d values, birth half first).
    fn head_preactivations(&self, x: &CountVector, t: f64, condition: Option<usize>) -> Result<Vec<f64>> {
        let mut act = self.build_features(x, t, condition)?;
        let n_layers = self.layers.len();
        for (l, shape) in self.layers.iter().enumerate() {
            let z = self.apply_layer(shape, &act);
            act = if l + 1 < n_layers {
                z.into_iter().map(selu).collect()
            } else {
                z
            };
        }
        Ok(act)
    }

    /// Forward pass: nonnegative birth rates and death coefficients, with
    /// `death = x ⊙ β`. Deterministic in its inputs.
    pub fn forward(&self, x: &CountVector, t: f64, condition: Option<usize>) -> Result<RateField> {
        let z = self.head_preactivations(x, t, condition)?;
        let d = self.config.dim;
        let birth: Vec<f64> = z[..d].iter().map(|&v| softplus(v)).collect();
        let death_coeff: Vec<f64> = z[d..].iter().map(|&v| softplus(v)).collect();
        let death: Vec<f64> = x
            .iter()
            .zip(death_coeff.iter())
            .map(|(&xi, &b)| xi as f64 * b)
            .collect();
        Ok(RateField {
            birth,
            death_coeff,
            death,
        })
    }

    /// Rate-matching loss and its exact gradient over a batch.
    ///
    /// The loss is the batch mean of
    /// `sum_i l(u_birth_i, λ_i) + sum_i l(u_death_i, x_i β_i)` with
    /// `l(u, v) = v - u log(v + eps_l)`; the gradient is accumulated by
    /// reverse mode through all layers and the condition embeddings.
    pub fn loss_and_grad(&self, batch: &[BridgeSample], eps_l: f64) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let d = self.config.dim;
        let n_layers = self.layers.len();
        let inv_b = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;

        for sample in batch {
            if sample.target_birth.len() != d || sample.target_death.len() != d {
                return Err(Error::dim("target rate length must equal model dim".to_string()));
            }
            // Forward, keeping per-layer inputs and pre-activations.
            let features = self.build_features(&sample.x, sample.t, sample.condition)?;
            let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
            let mut pres: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
            acts.push(features);
            for (l, shape) in self.layers.iter().enumerate() {
                let z = self.apply_layer(shape, &acts[l]);
                if l + 1 < n_layers {
                    acts.push(z.iter().map(|&v| selu(v)).collect());
                }
                pres.push(z);
            }
            let z_out = &pres[n_layers - 1];

            // Head: loss terms and the output delta.
            let mut delta: Vec<f64> = vec![0.0; 2 * d];
            for i in 0..d {
                let lam = softplus(z_out[i]);
                let u = sample.target_birth[i];
                loss += inv_b * if u == 0.0 { lam } else { lam - u * (lam + eps_l).ln() };
                delta[i] = inv_b * (1.0 - u / (lam + eps_l)) * sigmoid(z_out[i]);

                let beta = softplus(z_out[d + i]);
                let xi = sample.x.get(i) as f64;
                let mu = xi * beta;
                let u = sample.target_death[i];
                loss += inv_b * if u == 0.0 { mu } else { mu - u * (mu + eps_l).ln() };
                delta[d + i] = inv_b * (1.0 - u / (mu + eps_l)) * xi * sigmoid(z_out[d + i]);
            }

            // Reverse pass.
            for l in (0..n_layers).rev() {
                let shape = &self.layers[l];
                let input = &acts[l];
                for o in 0..shape.out_width {
                    let g = delta[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut grad[shape.w_offset + o * shape.in_width
                        ..shape.w_offset + (o + 1) * shape.in_width];
                    for (gw, a) in row.iter_mut().zip(input.iter()) {
                        *gw += g * a;
                    }
                    grad[shape.b_offset + o] += g;
                }
                // Propagate to the layer input.
                let weights = &self.params[shape.w_offset..shape.b_offset];
                let mut delta_in = vec![0.0; shape.in_width];
                for o in 0..shape.out_width {
                    let g = delta[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &weights[o * shape.in_width..(o + 1) * shape.in_width];
                    for (di, w) in delta_in.iter_mut().zip(row.iter()) {
                        *di += g * w;
                    }
                }
                if l > 0 {
                    for (di, z) in delta_in.iter_mut().zip(pres[l - 1].iter()) {
                        *di *= selu_deriv(*z);
                    }
                    delta = delta_in;
                } else if self.config.n_conditions > 0 {
                    // Features enter linearly; only the embedding slice is
                    // trainable.
                    let row = self
                        .embedding_row(sample.condition)?
                        .expect("conditional model has an embedding row");
                    let w = self.config.condition_embed_width;
                    let start = self.embed_offset + row * w;
                    let feat_start = self.config.feature_width() - w;
                    for k in 0..w {
                        grad[start + k] += delta_in[feat_start + k];
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    /// One bias-corrected adaptive moment update over all parameters.
    /// Moment state is carried in the network; callers must serialize
    /// concurrent steps.
    pub fn adam_step(&mut self, grad: &[f64], lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::dim(format!(
                "gradient has {} entries, network has {}",
                grad.len(),
                self.params.len()
            )));
        }
        if !(lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        let (b1, b2) = betas;
        self.adam_steps += 1;
        let t = self.adam_steps as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for k in 0..self.params.len() {
            let g = grad[k];
            self.adam_m[k] = b1 * self.adam_m[k] + (1.0 - b1) * g;
            self.adam_v[k] = b2 * self.adam_v[k] + (1.0 - b2) * g * g;
            let m_hat = self.adam_m[k] / bc1;
            let v_hat = self.adam_v[k] / bc2;
            self.params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    /// Serialize to the checkpoint format: magic, format version, a JSON
    /// architecture header, then every parameter as little-endian f64 in
    /// declaration order. Round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::with_capacity(4 + 4 + 8 + meta.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fail("not a countflow checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + meta_len {
            return Err(fail("truncated checkpoint header"));
        }
        let config: NetConfig = serde_json::from_slice(&bytes[16..16 + meta_len])
            .map_err(|e| Error::Checkpoint(format!("bad architecture header: {e}")))?;
        config.validate()?;
        let (layers, embed_offset, total) = build_layout(&config);
        let body = &bytes[16 + meta_len..];
        if body.len() != 8 * total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {} bytes",
                total,
                body.len()
            )));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(RateNetwork {
            config,
            params,
            layers,
            embed_offset,
            adam_m: vec![0.0; total],
            adam_v: vec![0.0; total],
            adam_steps: 0,
        })
    }

    pub fn save_checkpoint(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

impl RateModel for RateNetwork {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn rates(&self, x: &CountVector, t: f64, condition: Option<usize>) -> Result<RateField> {
        self.forward(x, t, condition)
    }
}
