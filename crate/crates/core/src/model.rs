//! Desk-scale transformer encoder with an MLM head.
//!
//! Post-LN encoder blocks (attention + FFN with GELU), learned token and
//! position embeddings, and a linear vocabulary head. All arithmetic runs
//! in f64 and parameters live in a [`TensorMap`] under a fixed naming
//! scheme (`enc.{i}.attn.q`, `enc.{i}.ln1.weight`, `mlm_head.weight`, ...)
//! so layer-exclusion patterns apply directly.
//!
//! Both the forward pass and the analytic backward pass are hand-written;
//! there is no dropout, so a fixed seed gives a bit-identical trajectory.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tensor, TensorMap};

const LN_EPS: f64 = 1e-5;

/// Label value marking positions that do not contribute to the loss.
pub const IGNORE_LABEL: i32 = -100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for EncoderConfig {
    /// Desk-scale defaults: small enough for minutes-scale CPU training,
    /// large enough to overfit bias.
    fn default() -> Self {
        EncoderConfig { layers: 2, d_model: 64, heads: 4, ffn_dim: 128, max_len: 32, vocab_size: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    BadConfig(String),
    MissingTensor(String),
    ShapeMismatch(String),
    /// The batch has no position with a real label; the mean loss would be
    /// undefined.
    NoLabeledPositions,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::BadConfig(msg) => write!(f, "bad encoder config: {msg}"),
            ModelError::MissingTensor(name) => write!(f, "params missing tensor {name:?}"),
            ModelError::ShapeMismatch(name) => write!(f, "unexpected shape for tensor {name:?}"),
            ModelError::NoLabeledPositions => write!(f, "batch has no labeled positions"),
        }
    }
}

impl core::error::Error for ModelError {}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0
            || self.d_model == 0
            || self.heads == 0
            || self.ffn_dim == 0
            || self.max_len < 2
            || self.vocab_size == 0
        {
            return Err(ModelError::BadConfig("all dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Every parameter tensor the config implies, with shapes.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let f = self.ffn_dim;
        let mut out = vec![
            ("emb.tok".to_owned(), vec![self.vocab_size, d]),
            ("emb.pos".to_owned(), vec![self.max_len, d]),
        ];
        for i in 0..self.layers {
            for proj in ["q", "k", "v", "o"] {
                out.push((format!("enc.{i}.attn.{proj}"), vec![d, d]));
            }
            out.push((format!("enc.{i}.ln1.weight"), vec![d]));
            out.push((format!("enc.{i}.ln1.bias"), vec![d]));
            out.push((format!("enc.{i}.ffn.w1"), vec![f, d]));
            out.push((format!("enc.{i}.ffn.b1"), vec![f]));
            out.push((format!("enc.{i}.ffn.w2"), vec![d, f]));
            out.push((format!("enc.{i}.ffn.b2"), vec![d]));
            out.push((format!("enc.{i}.ln2.weight"), vec![d]));
            out.push((format!("enc.{i}.ln2.bias"), vec![d]));
        }
        out.push(("mlm_head.weight".to_owned(), vec![self.vocab_size, d]));
        out.push(("mlm_head.bias".to_owned(), vec![self.vocab_size]));
        out
    }

    /// Fresh parameters: N(0, 0.02) weights, zero biases, unit LayerNorm
    /// gains. Deterministic in the seed.
    pub fn init_params(&self, seed: u64) -> Result<TensorMap, ModelError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = TensorMap::new();
        for (name, shape) in self.param_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("ln1.weight") || name.ends_with("ln2.weight") {
                vec![1.0; n]
            } else if name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| 0.02 * normal_sample(&mut rng)).collect()
            };
            params
                .insert(&name, Tensor::from_f64(shape, data).expect("shape matches data"))
                .expect("param names unique");
        }
        params.set_metadata("encoder.layers", &format!("{}", self.layers));
        params.set_metadata("encoder.d_model", &format!("{}", self.d_model));
        params.set_metadata("encoder.heads", &format!("{}", self.heads));
        params.set_metadata("encoder.ffn_dim", &format!("{}", self.ffn_dim));
        params.set_metadata("encoder.max_len", &format!("{}", self.max_len));
        params.set_metadata("encoder.vocab_size", &format!("{}", self.vocab_size));
        Ok(params)
    }

    /// Recover the config a checkpoint was built with, from its metadata.
    pub fn from_metadata(params: &TensorMap) -> Option<EncoderConfig> {
        let get = |k: &str| params.metadata().get(k)?.parse::<usize>().ok();
        Some(EncoderConfig {
            layers: get("encoder.layers")?,
            d_model: get("encoder.d_model")?,
            heads: get("encoder.heads")?,
            ffn_dim: get("encoder.ffn_dim")?,
            max_len: get("encoder.max_len")?,
            vocab_size: get("encoder.vocab_size")?,
        })
    }
}

/// Box-Muller standard normal.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// A batch of masked token sequences, row-major `[batch, seq_len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub input_ids: Vec<u32>,
    /// Original id at predicted positions, [`IGNORE_LABEL`] elsewhere.
    pub labels: Vec<i32>,
    /// 1 for real tokens, 0 for padding.
    pub attention_mask: Vec<u8>,
    pub batch: usize,
    pub seq_len: usize,
}

impl MaskedBatch {
    pub fn labeled_positions(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_LABEL).count()
    }
}

struct ParamView<'a> {
    map: &'a TensorMap,
}

impl<'a> ParamView<'a> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<&'a [f64], ModelError> {
        let t = self.map.get(name).ok_or_else(|| ModelError::MissingTensor(name.to_owned()))?;
        if t.shape() != shape {
            return Err(ModelError::ShapeMismatch(name.to_owned()));
        }
        t.as_f64().ok_or_else(|| ModelError::ShapeMismatch(name.to_owned()))
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2));
    let phi_pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    phi_cdf + x * phi_pdf
}

/// `y[t] = x[t] . w[j,:] + b[j]` with `w` stored `[out, in]`.
fn linear(x: &[f64], t_len: usize, d_in: usize, w: &[f64], b: Option<&[f64]>, d_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; t_len * d_out];
    for t in 0..t_len {
        for j in 0..d_out {
            let mut acc = match b {
                Some(b) => b[j],
                None => 0.0,
            };
            let wrow = &w[j * d_in..(j + 1) * d_in];
            let xrow = &x[t * d_in..(t + 1) * d_in];
            for i in 0..d_in {
                acc += xrow[i] * wrow[i];
            }
            y[t * d_out + j] = acc;
        }
    }
    y
}

#[derive(Debug)]
struct LnCache {
    /// Normalized values before gain/bias, [T, d].
    xhat: Vec<f64>,
    /// 1/sigma per position, [T].
    inv_sigma: Vec<f64>,
    /// Output, [T, d].
    output: Vec<f64>,
}

fn layer_norm(input: &[f64], t_len: usize, d: usize, gamma: &[f64], beta: &[f64]) -> LnCache {
    let mut xhat = vec![0.0; t_len * d];
    let mut inv_sigma = vec![0.0; t_len];
    let mut output = vec![0.0; t_len * d];
    for t in 0..t_len {
        let row = &input[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / libm::sqrt(var + LN_EPS);
        inv_sigma[t] = inv;
        for i in 0..d {
            let xh = (row[i] - mean) * inv;
            xhat[t * d + i] = xh;
            output[t * d + i] = gamma[i] * xh + beta[i];
        }
    }
    LnCache { xhat, inv_sigma, output }
}

/// d(loss)/d(input) of layer_norm; accumulates gamma/beta grads.
fn layer_norm_backward(
    cache: &LnCache,
    t_len: usize,
    d: usize,
    gamma: &[f64],
    d_out: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Vec<f64> {
    let mut d_in = vec![0.0; t_len * d];
    for t in 0..t_len {
        let xhat = &cache.xhat[t * d..(t + 1) * d];
        let dy = &d_out[t * d..(t + 1) * d];
        let inv = cache.inv_sigma[t];
        let mut sum_dyg = 0.0;
        let mut sum_dyg_xhat = 0.0;
        for i in 0..d {
            let dyg = dy[i] * gamma[i];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat[i];
            d_gamma[i] += dy[i] * xhat[i];
            d_beta[i] += dy[i];
        }
        let n = d as f64;
        for i in 0..d {
            let dyg = dy[i] * gamma[i];
            d_in[t * d + i] = inv * (dyg - sum_dyg / n - xhat[i] * sum_dyg_xhat / n);
        }
    }
    d_in
}

#[derive(Debug)]
struct LayerCache {
    /// Block input, [T, d].
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, [heads, T, T].
    probs: Vec<f64>,
    /// Head-concatenated context before the output projection, [T, d].
    ctx: Vec<f64>,
    ln1: LnCache,
    /// FFN pre-activation, [T, f].
    z: Vec<f64>,
    /// gelu(z), [T, f].
    u: Vec<f64>,
    ln2: LnCache,
}

#[derive(Debug)]
struct ItemCache {
    layers: Vec<LayerCache>,
    /// Final hidden states, [T, d].
    hidden: Vec<f64>,
}

fn encode_item(
    pv: &ParamView<'_>,
    cfg: &EncoderConfig,
    ids: &[u32],
    attn_mask: &[u8],
) -> Result<ItemCache, ModelError> {
    let d = cfg.d_model;
    let t_len = ids.len();
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);

    let tok = pv.get("emb.tok", &[cfg.vocab_size, d])?;
    let pos = pv.get("emb.pos", &[cfg.max_len, d])?;

    let mut x = vec![0.0; t_len * d];
    for t in 0..t_len {
        let id = ids[t] as usize;
        if id >= cfg.vocab_size {
            return Err(ModelError::ShapeMismatch("emb.tok".to_owned()));
        }
        for i in 0..d {
            x[t * d + i] = tok[id * d + i] + pos[t * d + i];
        }
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let wq = pv.get(&format!("enc.{l}.attn.q"), &[d, d])?;
        let wk = pv.get(&format!("enc.{l}.attn.k"), &[d, d])?;
        let wv = pv.get(&format!("enc.{l}.attn.v"), &[d, d])?;
        let wo = pv.get(&format!("enc.{l}.attn.o"), &[d, d])?;
        let g1 = pv.get(&format!("enc.{l}.ln1.weight"), &[d])?;
        let b1 = pv.get(&format!("enc.{l}.ln1.bias"), &[d])?;
        let w1 = pv.get(&format!("enc.{l}.ffn.w1"), &[cfg.ffn_dim, d])?;
        let bf1 = pv.get(&format!("enc.{l}.ffn.b1"), &[cfg.ffn_dim])?;
        let w2 = pv.get(&format!("enc.{l}.ffn.w2"), &[d, cfg.ffn_dim])?;
        let bf2 = pv.get(&format!("enc.{l}.ffn.b2"), &[d])?;
        let g2 = pv.get(&format!("enc.{l}.ln2.weight"), &[d])?;
        let b2 = pv.get(&format!("enc.{l}.ln2.bias"), &[d])?;

        let q = linear(&x, t_len, d, wq, None, d);
        let k = linear(&x, t_len, d, wk, None, d);
        let v = linear(&x, t_len, d, wv, None, d);

        // scores and softmax per head; PAD keys masked out
        let mut probs = vec![0.0; heads * t_len * t_len];
        let mut ctx = vec![0.0; t_len * d];
        for h in 0..heads {
            let off = h * dh;
            for t in 0..t_len {
                let mut row = vec![f64::NEG_INFINITY; t_len];
                let mut max = f64::NEG_INFINITY;
                for u in 0..t_len {
                    if attn_mask[u] == 0 {
                        continue;
                    }
                    let mut s = 0.0;
                    for i in 0..dh {
                        s += q[t * d + off + i] * k[u * d + off + i];
                    }
                    let s = s * scale;
                    row[u] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut denom = 0.0;
                for u in 0..t_len {
                    if row[u] > f64::NEG_INFINITY {
                        let e = libm::exp(row[u] - max);
                        row[u] = e;
                        denom += e;
                    } else {
                        row[u] = 0.0;
                    }
                }
                for u in 0..t_len {
                    let p = row[u] / denom;
                    probs[(h * t_len + t) * t_len + u] = p;
                    for i in 0..dh {
                        ctx[t * d + off + i] += p * v[u * d + off + i];
                    }
                }
            }
        }

        let attn_out = linear(&ctx, t_len, d, wo, None, d);
        let mut sum1 = vec![0.0; t_len * d];
        for i in 0..t_len * d {
            sum1[i] = x[i] + attn_out[i];
        }
        let ln1 = layer_norm(&sum1, t_len, d, g1, b1);

        let z = linear(&ln1.output, t_len, d, w1, Some(bf1), cfg.ffn_dim);
        let u: Vec<f64> = z.iter().map(|&zv| gelu(zv)).collect();
        let ffn_out = linear(&u, t_len, cfg.ffn_dim, w2, Some(bf2), d);
        let mut sum2 = vec![0.0; t_len * d];
        for i in 0..t_len * d {
            sum2[i] = ln1.output[i] + ffn_out[i];
        }
        let ln2 = layer_norm(&sum2, t_len, d, g2, b2);

        let next = ln2.output.clone();
        layers.push(LayerCache { input: x, q, k, v, probs, ctx, ln1, z, u, ln2 });
        x = next;
    }

    Ok(ItemCache { hidden: x, layers })
}

/// Forward pass output: logits `[batch, seq_len, vocab]` plus the mean
/// cross-entropy over labeled positions.
#[derive(Debug)]
pub struct MlmForward {
    pub logits: Vec<f64>,
    pub loss: f64,
    pub labeled: usize,
    caches: Vec<ItemCache>,
    /// Softmax probabilities at labeled positions: (item, position, probs).
    label_probs: Vec<(usize, usize, Vec<f64>)>,
}

/// Run the encoder + MLM head over a batch. The loss averages only
/// positions whose label is not [`IGNORE_LABEL`]; a batch with no such
/// position is an error rather than a NaN.
pub fn forward_mlm(
    params: &TensorMap,
    cfg: &EncoderConfig,
    batch: &MaskedBatch,
) -> Result<MlmForward, ModelError> {
    cfg.validate()?;
    if batch.input_ids.len() != batch.batch * batch.seq_len
        || batch.labels.len() != batch.input_ids.len()
        || batch.attention_mask.len() != batch.input_ids.len()
        || batch.seq_len > cfg.max_len
    {
        return Err(ModelError::BadConfig("batch dimensions inconsistent".into()));
    }
    let n_labeled = batch.labeled_positions();
    if n_labeled == 0 {
        return Err(ModelError::NoLabeledPositions);
    }
    let pv = ParamView { map: params };
    let d = cfg.d_model;
    let vs = cfg.vocab_size;
    let head_w = pv.get("mlm_head.weight", &[vs, d])?;
    let head_b = pv.get("mlm_head.bias", &[vs])?;

    let t_len = batch.seq_len;
    let mut logits = vec![0.0; batch.batch * t_len * vs];
    let mut caches = Vec::with_capacity(batch.batch);
    let mut label_probs = Vec::new();
    let mut loss = 0.0;
    for b in 0..batch.batch {
        let ids = &batch.input_ids[b * t_len..(b + 1) * t_len];
        let mask = &batch.attention_mask[b * t_len..(b + 1) * t_len];
        let cache = encode_item(&pv, cfg, ids, mask)?;
        let item_logits = linear(&cache.hidden, t_len, d, head_w, Some(head_b), vs);
        for t in 0..t_len {
            let label = batch.labels[b * t_len + t];
            if label != IGNORE_LABEL {
                let row = &item_logits[t * vs..(t + 1) * vs];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
                loss += lse - row[label as usize];
                let probs: Vec<f64> = row.iter().map(|&x| libm::exp(x - lse)).collect();
                label_probs.push((b, t, probs));
            }
        }
        logits[b * t_len * vs..(b + 1) * t_len * vs].copy_from_slice(&item_logits);
        caches.push(cache);
    }
    loss /= n_labeled as f64;
    Ok(MlmForward { logits, loss, labeled: n_labeled, caches, label_probs })
}

/// Parameter gradients keyed by tensor name.
pub type Grads = BTreeMap<String, Vec<f64>>;

/// Analytic gradients of the mean MLM loss from [`forward_mlm`].
pub fn backward_mlm(
    params: &TensorMap,
    cfg: &EncoderConfig,
    batch: &MaskedBatch,
    fwd: &MlmForward,
) -> Result<Grads, ModelError> {
    let pv = ParamView { map: params };
    let d = cfg.d_model;
    let vs = cfg.vocab_size;
    let f = cfg.ffn_dim;
    let t_len = batch.seq_len;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let head_w = pv.get("mlm_head.weight", &[vs, d])?;

    let mut grads: Grads = cfg
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            (name, vec![0.0; n])
        })
        .collect();

    // d(loss)/d(logits) is nonzero only at labeled positions
    let inv_n = 1.0 / fwd.labeled as f64;
    let mut d_hidden_per_item: Vec<Vec<f64>> = (0..batch.batch).map(|_| vec![0.0; t_len * d]).collect();
    for &(b, t, ref probs) in &fwd.label_probs {
        let label = batch.labels[b * t_len + t] as usize;
        let hidden = &fwd.caches[b].hidden;
        let d_hidden = &mut d_hidden_per_item[b];
        let gw = grads.get_mut("mlm_head.weight").expect("grad buffer exists");
        for v in 0..vs {
            let mut dl = probs[v] * inv_n;
            if v == label {
                dl -= inv_n;
            }
            if dl == 0.0 {
                continue;
            }
            for i in 0..d {
                gw[v * d + i] += dl * hidden[t * d + i];
                d_hidden[t * d + i] += dl * head_w[v * d + i];
            }
        }
        let gb = grads.get_mut("mlm_head.bias").expect("grad buffer exists");
        for v in 0..vs {
            let mut dl = probs[v] * inv_n;
            if v == label {
                dl -= inv_n;
            }
            gb[v] += dl;
        }
    }

    for b in 0..batch.batch {
        let ids = &batch.input_ids[b * t_len..(b + 1) * t_len];
        let cache = &fwd.caches[b];
        let mut d_x = core::mem::take(&mut d_hidden_per_item[b]);

        for l in (0..cfg.layers).rev() {
            let lc = &cache.layers[l];
            let wq = pv.get(&format!("enc.{l}.attn.q"), &[d, d])?;
            let wk = pv.get(&format!("enc.{l}.attn.k"), &[d, d])?;
            let wv = pv.get(&format!("enc.{l}.attn.v"), &[d, d])?;
            let wo = pv.get(&format!("enc.{l}.attn.o"), &[d, d])?;
            let g1 = pv.get(&format!("enc.{l}.ln1.weight"), &[d])?;
            let g2 = pv.get(&format!("enc.{l}.ln2.weight"), &[d])?;
            let w1 = pv.get(&format!("enc.{l}.ffn.w1"), &[f, d])?;
            let w2 = pv.get(&format!("enc.{l}.ffn.w2"), &[d, f])?;

            // ln2
            let d_sum2 = {
                let (gg, bb) = (format!("enc.{l}.ln2.weight"), format!("enc.{l}.ln2.bias"));
                let mut dg = core::mem::take(grads.get_mut(&gg).expect("grad buffer exists"));
                let mut db = core::mem::take(grads.get_mut(&bb).expect("grad buffer exists"));
                let out = layer_norm_backward(&lc.ln2, t_len, d, g2, &d_x, &mut dg, &mut db);
                *grads.get_mut(&gg).expect("grad buffer exists") = dg;
                *grads.get_mut(&bb).expect("grad buffer exists") = db;
                out
            };

            // sum2 = ln1.output + ffn_out
            // ffn_out = gelu(ln1.output W1^T + b1) W2^T + b2
            let mut d_u = vec![0.0; t_len * f];
            {
                let gw2 = grads.get_mut(&format!("enc.{l}.ffn.w2")).expect("grad buffer exists");
                for t in 0..t_len {
                    for j in 0..d {
                        let dy = d_sum2[t * d + j];
                        if dy == 0.0 {
                            continue;
                        }
                        for i in 0..f {
                            gw2[j * f + i] += dy * lc.u[t * f + i];
                            d_u[t * f + i] += dy * w2[j * f + i];
                        }
                    }
                }
                let gb2 = grads.get_mut(&format!("enc.{l}.ffn.b2")).expect("grad buffer exists");
                for t in 0..t_len {
                    for j in 0..d {
                        gb2[j] += d_sum2[t * d + j];
                    }
                }
            }
            let d_z: Vec<f64> =
                d_u.iter().zip(&lc.z).map(|(&du, &z)| du * gelu_grad(z)).collect();
            let mut d_ln1out = d_sum2.clone(); // residual branch
            {
                let gw1 = grads.get_mut(&format!("enc.{l}.ffn.w1")).expect("grad buffer exists");
                for t in 0..t_len {
                    for j in 0..f {
                        let dz = d_z[t * f + j];
                        if dz == 0.0 {
                            continue;
                        }
                        for i in 0..d {
                            gw1[j * d + i] += dz * lc.ln1.output[t * d + i];
                            d_ln1out[t * d + i] += dz * w1[j * d + i];
                        }
                    }
                }
                let gb1 = grads.get_mut(&format!("enc.{l}.ffn.b1")).expect("grad buffer exists");
                for t in 0..t_len {
                    for j in 0..f {
                        gb1[j] += d_z[t * f + j];
                    }
                }
            }

            // ln1
            let d_sum1 = {
                let (gg, bb) = (format!("enc.{l}.ln1.weight"), format!("enc.{l}.ln1.bias"));
                let mut dg = core::mem::take(grads.get_mut(&gg).expect("grad buffer exists"));
                let mut db = core::mem::take(grads.get_mut(&bb).expect("grad buffer exists"));
                let out = layer_norm_backward(&lc.ln1, t_len, d, g1, &d_ln1out, &mut dg, &mut db);
                *grads.get_mut(&gg).expect("grad buffer exists") = dg;
                *grads.get_mut(&bb).expect("grad buffer exists") = db;
                out
            };

            // sum1 = input + ctx Wo^T
            let mut d_ctx = vec![0.0; t_len * d];
            {
                let gwo = grads.get_mut(&format!("enc.{l}.attn.o")).expect("grad buffer exists");
                for t in 0..t_len {
                    for j in 0..d {
                        let dy = d_sum1[t * d + j];
                        if dy == 0.0 {
                            continue;
                        }
                        for i in 0..d {
                            gwo[j * d + i] += dy * lc.ctx[t * d + i];
                            d_ctx[t * d + i] += dy * wo[j * d + i];
                        }
                    }
                }
            }

            // attention core
            let mut d_q = vec![0.0; t_len * d];
            let mut d_k = vec![0.0; t_len * d];
            let mut d_v = vec![0.0; t_len * d];
            for h in 0..heads {
                let off = h * dh;
                for t in 0..t_len {
                    let probs = &lc.probs[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                    // d_probs[u] = d_ctx(t) . v(u); then softmax backward
                    let mut d_probs = vec![0.0; t_len];
                    for u in 0..t_len {
                        if probs[u] == 0.0 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for i in 0..dh {
                            acc += d_ctx[t * d + off + i] * lc.v[u * d + off + i];
                            d_v[u * d + off + i] += probs[u] * d_ctx[t * d + off + i];
                        }
                        d_probs[u] = acc;
                    }
                    let dot: f64 = probs.iter().zip(&d_probs).map(|(&p, &g)| p * g).sum();
                    for u in 0..t_len {
                        let ds = probs[u] * (d_probs[u] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for i in 0..dh {
                            d_q[t * d + off + i] += ds * lc.k[u * d + off + i];
                            d_k[u * d + off + i] += ds * lc.q[t * d + off + i];
                        }
                    }
                }
            }

            // projections back to the block input
            let mut d_input = d_sum1; // residual branch
            for (dout, w, gname) in [
                (&d_q, wq, format!("enc.{l}.attn.q")),
                (&d_k, wk, format!("enc.{l}.attn.k")),
                (&d_v, wv, format!("enc.{l}.attn.v")),
            ] {
                let gw = grads.get_mut(&gname).expect("grad buffer exists");
                for t in 0..t_len {
                    for j in 0..d {
                        let dy = dout[t * d + j];
                        if dy == 0.0 {
                            continue;
                        }
                        for i in 0..d {
                            gw[j * d + i] += dy * lc.input[t * d + i];
                            d_input[t * d + i] += dy * w[j * d + i];
                        }
                    }
                }
            }
            d_x = d_input;
        }

        // embeddings
        let g_tok = grads.get_mut("emb.tok").expect("grad buffer exists");
        for t in 0..t_len {
            let id = ids[t] as usize;
            for i in 0..d {
                g_tok[id * d + i] += d_x[t * d + i];
            }
        }
        let g_pos = grads.get_mut("emb.pos").expect("grad buffer exists");
        for t in 0..t_len {
            for i in 0..d {
                g_pos[t * d + i] += d_x[t * d + i];
            }
        }
    }

    Ok(grads)
}

/// Final-layer hidden states for a single tokenized sentence, `[len, d]`.
pub fn encode_sentence(
    params: &TensorMap,
    cfg: &EncoderConfig,
    ids: &[u32],
) -> Result<Vec<f64>, ModelError> {
    cfg.validate()?;
    if ids.is_empty() || ids.len() > cfg.max_len {
        return Err(ModelError::BadConfig("sentence length out of range".into()));
    }
    let pv = ParamView { map: params };
    let mask = vec![1u8; ids.len()];
    let cache = encode_item(&pv, cfg, ids, &mask)?;
    Ok(cache.hidden)
}
