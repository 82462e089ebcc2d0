//! Transformer encoder over element embeddings with learned relative
//! spatial biases added to the attention logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterStore, Tensor, Var};
use crate::embed::{ElementFeatures, SequenceBatch};
use crate::error::{Error, Result};
use crate::layout::MAX_ELEMENTS;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Adds the relative position/stacking biases when set.
    pub spatial: bool,
    pub x_buckets: usize,
    pub y_buckets: usize,
    pub z_buckets: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            heads: 4,
            d_model: 128,
            d_k: 32,
            d_ff: 256,
            dropout: 0.3,
            spatial: true,
            x_buckets: 32,
            y_buckets: 32,
            z_buckets: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model != self.heads * self.d_k {
            return Err(Error::Config(format!(
                "d_model {} must equal heads {} x d_k {}",
                self.d_model, self.heads, self.d_k
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.x_buckets < 3 || self.y_buckets < 3 || self.z_buckets < 3 {
            return Err(Error::Config("need at least 3 buckets per spatial axis".into()));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout enabled, masks drawn from this seed.
    Train { seed: u64 },
    Infer,
}

/// Smallest and largest offset magnitudes that get their own bucket, per axis.
const XY_RANGE: (f64, f64) = (1.0 / 256.0, 0.5);
const Z_RANGE: (f64, f64) = (1.0, 64.0);

/// Signed log-spaced bucket of `delta` among `n` buckets.
///
/// Bucket `n / 2` holds offsets with magnitude below `min_mag`; larger
/// magnitudes step outwards logarithmically up to `max_mag` and clamp there.
pub fn signed_log_bucket(delta: f64, n: usize, min_mag: f64, max_mag: f64) -> usize {
    let mid = n / 2;
    let m = delta.abs();
    if m < min_mag || m.is_nan() {
        return mid;
    }
    let levels = if delta > 0.0 { n - 1 - mid } else { mid };
    if levels == 0 {
        return mid;
    }
    let t = ((m / min_mag).ln() / (max_mag / min_mag).ln()).min(1.0);
    let level = (1 + (t * (levels - 1) as f64).floor() as usize).min(levels);
    if delta > 0.0 {
        mid + level
    } else {
        mid - level
    }
}

pub fn x_bucket(delta: f64, n: usize) -> usize {
    signed_log_bucket(delta, n, XY_RANGE.0, XY_RANGE.1)
}

pub fn z_bucket(delta_rank: i64, n: usize) -> usize {
    signed_log_bucket(delta_rank as f64, n, Z_RANGE.0, Z_RANGE.1)
}

/// Flattened `n*n` bucket indices for the three axes.
pub fn bucket_indices(features: &[ElementFeatures], cfg: &EncoderConfig) -> [Vec<usize>; 3] {
    let n = features.len();
    let mut bx = Vec::with_capacity(n * n);
    let mut by = Vec::with_capacity(n * n);
    let mut bz = Vec::with_capacity(n * n);
    for fi in features {
        for fj in features {
            bx.push(x_bucket(fi.center.0 - fj.center.0, cfg.x_buckets));
            by.push(x_bucket(fi.center.1 - fj.center.1, cfg.y_buckets));
            bz.push(z_bucket(fi.rank as i64 - fj.rank as i64, cfg.z_buckets));
        }
    }
    [bx, by, bz]
}

/// Naive reference for the scaled logits, masked columns at `-inf`.
pub fn attention_scores(e: &Tensor, wq: &Tensor, wk: &Tensor, mask: Option<&[bool]>, d_k: usize) -> Result<Tensor> {
    if e.cols() != wq.rows() || e.cols() != wk.rows() || wq.cols() != wk.cols() {
        return Err(Error::ShapeMismatch {
            op: "attention_scores",
            detail: format!("e {:?}, wq {:?}, wk {:?}", e.shape(), wq.shape(), wk.shape()),
        });
    }
    let q = project(e, wq);
    let k = project(e, wk);
    let n = e.rows();
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = if mask.map_or(true, |m| m[j]) {
                q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale
            } else {
                f64::NEG_INFINITY
            };
            out.set(i, j, v);
        }
    }
    Ok(out)
}

fn project(e: &Tensor, w: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(e.rows(), w.cols());
    for i in 0..e.rows() {
        for j in 0..w.cols() {
            out.set(i, j, (0..e.cols()).map(|k| e.get(i, k) * w.get(k, j)).sum());
        }
    }
    out
}

/// Value of the per-head spatial bias matrices.
pub fn spatial_bias(features: &[ElementFeatures], cfg: &EncoderConfig, params: &ParameterStore) -> Result<Vec<Tensor>> {
    let enc = ContextEncoder::new(*cfg)?;
    let mut g = Graph::new(params);
    let idx = bucket_indices(features, cfg);
    (0..cfg.heads)
        .map(|h| {
            let b = enc.head_bias(&mut g, &idx, features.len(), h)?;
            Ok(g.value(b).clone())
        })
        .collect()
}

fn mix(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from `seed` and `k`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    mix(seed, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEncoder {
    pub cfg: EncoderConfig,
}

impl ContextEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ContextEncoder { cfg })
    }

    pub fn init_params(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        for l in 0..c.layers {
            for h in 0..c.heads {
                for w in ["wq", "wk", "wv"] {
                    store.insert_glorot(&format!("enc.l{l}.h{h}.{w}"), c.d_model, c.d_k, rng);
                }
            }
            store.insert_glorot(&format!("enc.l{l}.wo"), c.d_model, c.d_model, rng);
            store.insert(format!("enc.l{l}.bo"), Tensor::zeros(1, c.d_model));
            store.insert(format!("enc.l{l}.ln1.g"), Tensor::filled(1, c.d_model, 1.0));
            store.insert(format!("enc.l{l}.ln1.b"), Tensor::zeros(1, c.d_model));
            store.insert_glorot(&format!("enc.l{l}.ff1.w"), c.d_model, c.d_ff, rng);
            store.insert(format!("enc.l{l}.ff1.b"), Tensor::zeros(1, c.d_ff));
            store.insert_glorot(&format!("enc.l{l}.ff2.w"), c.d_ff, c.d_model, rng);
            store.insert(format!("enc.l{l}.ff2.b"), Tensor::zeros(1, c.d_model));
            store.insert(format!("enc.l{l}.ln2.g"), Tensor::filled(1, c.d_model, 1.0));
            store.insert(format!("enc.l{l}.ln2.b"), Tensor::zeros(1, c.d_model));
        }
        if c.spatial {
            for h in 0..c.heads {
                store.insert(format!("enc.bias.x.h{h}"), Tensor::zeros(c.x_buckets, 1));
                store.insert(format!("enc.bias.y.h{h}"), Tensor::zeros(c.y_buckets, 1));
                store.insert(format!("enc.bias.z.h{h}"), Tensor::zeros(c.z_buckets, 1));
            }
        }
    }

    fn head_bias(&self, g: &mut Graph, idx: &[Vec<usize>; 3], n: usize, h: usize) -> Result<Var> {
        let tx = g.named(&format!("enc.bias.x.h{h}"))?;
        let ty = g.named(&format!("enc.bias.y.h{h}"))?;
        let tz = g.named(&format!("enc.bias.z.h{h}"))?;
        let bx = g.gather_rows(tx, &idx[0])?;
        let by = g.gather_rows(ty, &idx[1])?;
        let bz = g.gather_rows(tz, &idx[2])?;
        let s = g.add(bx, by)?;
        let s = g.add(s, bz)?;
        g.reshape(s, n, n)
    }

    fn drop(&self, g: &mut Graph, x: Var, mode: Mode, counter: &mut u64) -> Result<Var> {
        match mode {
            Mode::Train { seed } if self.cfg.dropout > 0.0 => {
                *counter += 1;
                g.dropout(x, self.cfg.dropout, mix(seed, *counter))
            }
            _ => Ok(x),
        }
    }

    /// Records the encoder over the `n x d_model` rows `x` of one layout.
    pub fn forward(&self, g: &mut Graph, x: Var, features: &[ElementFeatures], mode: Mode) -> Result<Var> {
        let c = &self.cfg;
        let n = features.len();
        if g.shape(x) != (n, c.d_model) {
            return Err(Error::ShapeMismatch {
                op: "encode",
                detail: format!("input {:?} for {n} elements of width {}", g.shape(x), c.d_model),
            });
        }
        let biases = if c.spatial {
            let idx = bucket_indices(features, c);
            (0..c.heads)
                .map(|h| self.head_bias(g, &idx, n, h).map(Some))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![None; c.heads]
        };
        let scale = 1.0 / (c.d_k as f64).sqrt();
        let mut counter = 0u64;
        let mut x = x;
        for l in 0..c.layers {
            let mut heads = Vec::with_capacity(c.heads);
            for (h, bias) in biases.iter().enumerate() {
                let wq = g.named(&format!("enc.l{l}.h{h}.wq"))?;
                let wk = g.named(&format!("enc.l{l}.h{h}.wk"))?;
                let wv = g.named(&format!("enc.l{l}.h{h}.wv"))?;
                let q = g.matmul(x, wq)?;
                let k = g.matmul(x, wk)?;
                let v = g.matmul(x, wv)?;
                heads.push(g.attention(q, k, v, *bias, None, scale)?);
            }
            let cat = g.concat(&heads)?;
            let wo = g.named(&format!("enc.l{l}.wo"))?;
            let bo = g.named(&format!("enc.l{l}.bo"))?;
            let o = g.matmul(cat, wo)?;
            let o = g.add_row(o, bo)?;
            let o = self.drop(g, o, mode, &mut counter)?;
            let r = g.add(x, o)?;
            let (gn, bn) = (g.named(&format!("enc.l{l}.ln1.g"))?, g.named(&format!("enc.l{l}.ln1.b"))?);
            x = g.layer_norm(r, gn, bn, LN_EPS)?;

            let w1 = g.named(&format!("enc.l{l}.ff1.w"))?;
            let b1 = g.named(&format!("enc.l{l}.ff1.b"))?;
            let w2 = g.named(&format!("enc.l{l}.ff2.w"))?;
            let b2 = g.named(&format!("enc.l{l}.ff2.b"))?;
            let f = g.matmul(x, w1)?;
            let f = g.add_row(f, b1)?;
            let f = g.relu(f);
            let f = g.matmul(f, w2)?;
            let f = g.add_row(f, b2)?;
            let f = self.drop(g, f, mode, &mut counter)?;
            let r = g.add(x, f)?;
            let (gn, bn) = (g.named(&format!("enc.l{l}.ln2.g"))?, g.named(&format!("enc.l{l}.ln2.b"))?);
            x = g.layer_norm(r, gn, bn, LN_EPS)?;
        }
        Ok(x)
    }

    /// Encodes every item of `batch`; rows past each item's length are zero.
    pub fn encode(&self, batch: &SequenceBatch, params: &ParameterStore, mode: Mode) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let n = batch.lengths[i];
            let item_mode = match mode {
                Mode::Train { seed } => Mode::Train {
                    seed: mix(seed, i as u64),
                },
                Mode::Infer => Mode::Infer,
            };
            let mut g = Graph::new(params);
            let x = g.constant(batch.valid_rows(i));
            let h = self.forward(&mut g, x, &batch.features[i], item_mode)?;
            let mut t = Tensor::zeros(MAX_ELEMENTS, self.cfg.d_model);
            t.data_mut()[..n * self.cfg.d_model].copy_from_slice(g.value(h).data());
            out.push(t);
        }
        Ok(out)
    }
}

/// Convenience for tests and tools: a store initialized for `enc` from `seed`.
pub fn init_store(enc: &ContextEncoder, seed: u64) -> ParameterStore {
    let mut store = ParameterStore::new();
    enc.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
    store
}
