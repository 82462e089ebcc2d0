//! Element feature embedding and padded sequence batches.
//!
//! Each element becomes `tanh(W [e_type, e_z, e_pos, e_size, e_rot, e_align] + b)`
//! where the continuous parts are parameter-free sinusoidal encodings and the
//! categorical parts are learned table rows.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::layout::{HAlign, Layout, VAlign, VisualElement, MAX_ELEMENTS};
use rand_chacha::ChaCha8Rng;

/// Seven element types plus the padding token.
pub const TYPE_VOCAB: usize = 8;
pub const PAD_TYPE: usize = 7;
pub const HALIGN_VOCAB: usize = 5;
pub const VALIGN_VOCAB: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub d_type: usize,
    pub d_z: usize,
    /// Per coordinate; four coordinates.
    pub d_pos: usize,
    /// Per dimension; width and height.
    pub d_size: usize,
    /// Per component; sine and cosine of the angle.
    pub d_rot: usize,
    /// Per axis; horizontal and vertical.
    pub d_align: usize,
    pub d_model: usize,
    /// Unit-interval features are multiplied by this before sinusoidal encoding.
    pub scalar_scale: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            d_type: 16,
            d_z: 16,
            d_pos: 16,
            d_size: 16,
            d_rot: 16,
            d_align: 8,
            d_model: 128,
            scalar_scale: MAX_ELEMENTS as f64,
        }
    }
}

impl EmbedderConfig {
    pub fn sinusoid_dim(&self) -> usize {
        self.d_z + 4 * self.d_pos + 2 * self.d_size + 2 * self.d_rot
    }

    pub fn concat_dim(&self) -> usize {
        self.d_type + self.sinusoid_dim() + 2 * self.d_align
    }

    pub fn validate(&self) -> Result<()> {
        for d in [self.d_z, self.d_pos, self.d_size, self.d_rot] {
            if d == 0 || d % 2 != 0 {
                return Err(Error::OddDimension(d));
            }
        }
        if self.d_type == 0 || self.d_align == 0 || self.d_model == 0 {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        if !(self.scalar_scale > 0.0) {
            return Err(Error::Config("scalar_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Sinusoidal encoding: `[sin(v / 10000^(2k/dims)), cos(...)]` for `k < dims/2`.
pub fn encode_scalar(value: f64, dims: usize) -> Result<Vec<f64>> {
    if dims % 2 != 0 {
        return Err(Error::OddDimension(dims));
    }
    let mut out = Vec::with_capacity(dims);
    encode_into(value, dims, &mut out);
    Ok(out)
}

fn encode_into(value: f64, dims: usize, out: &mut Vec<f64>) {
    for k in 0..dims / 2 {
        let freq = 10000f64.powf(-((2 * k) as f64) / dims as f64);
        let a = value * freq;
        out.push(a.sin());
        out.push(a.cos());
    }
}

/// Model-ready view of one element: categorical indices plus the fixed
/// sinusoidal block.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementFeatures {
    pub type_index: usize,
    pub halign_index: usize,
    pub valign_index: usize,
    pub sinusoid: Vec<f64>,
    pub center: (f64, f64),
    pub rank: u32,
}

impl ElementFeatures {
    pub fn from_element(e: &VisualElement, cfg: &EmbedderConfig) -> Self {
        let s = cfg.scalar_scale;
        let mut sinusoid = Vec::with_capacity(cfg.sinusoid_dim());
        encode_into(e.z_feature() * s, cfg.d_z, &mut sinusoid);
        for c in [e.bbox.x1, e.bbox.y1, e.bbox.x2, e.bbox.y2] {
            encode_into(c * s, cfg.d_pos, &mut sinusoid);
        }
        encode_into(e.size.0 * s, cfg.d_size, &mut sinusoid);
        encode_into(e.size.1 * s, cfg.d_size, &mut sinusoid);
        let theta = e.rotation.to_radians();
        encode_into(theta.sin() * s, cfg.d_rot, &mut sinusoid);
        encode_into(theta.cos() * s, cfg.d_rot, &mut sinusoid);
        ElementFeatures {
            type_index: e.etype.index(),
            halign_index: e.halign.index(),
            valign_index: e.valign.index(),
            sinusoid,
            center: e.bbox.center(),
            rank: e.z,
        }
    }

    /// The padding token: its own type row, no alignment, zero continuous part.
    pub fn padding(cfg: &EmbedderConfig) -> Self {
        ElementFeatures {
            type_index: PAD_TYPE,
            halign_index: HAlign::None.index(),
            valign_index: VAlign::None.index(),
            sinusoid: vec![0.0; cfg.sinusoid_dim()],
            center: (0.0, 0.0),
            rank: 0,
        }
    }
}

pub fn layout_features(elements: &[VisualElement], cfg: &EmbedderConfig) -> Vec<ElementFeatures> {
    elements.iter().map(|e| ElementFeatures::from_element(e, cfg)).collect()
}

/// Embedding layer parameters live under `{prefix}.` in a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEmbedder {
    pub cfg: EmbedderConfig,
    pub prefix: String,
}

impl FeatureEmbedder {
    pub fn new(cfg: EmbedderConfig, prefix: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        Ok(FeatureEmbedder {
            cfg,
            prefix: prefix.into(),
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init_params(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        store.insert_normal(&self.name("type"), TYPE_VOCAB, c.d_type, 1.0, rng);
        store.insert_normal(&self.name("halign"), HALIGN_VOCAB, c.d_align, 1.0, rng);
        store.insert_normal(&self.name("valign"), VALIGN_VOCAB, c.d_align, 1.0, rng);
        store.insert_glorot(&self.name("theta.w"), c.concat_dim(), c.d_model, rng);
        store.insert(self.name("theta.b"), Tensor::zeros(1, c.d_model));
    }

    /// Records the embedding of `features` (one row each) on `g`.
    pub fn embed(&self, g: &mut Graph, features: &[ElementFeatures]) -> Result<Var> {
        let n = features.len();
        let types: Vec<usize> = features.iter().map(|f| f.type_index).collect();
        let hal: Vec<usize> = features.iter().map(|f| f.halign_index).collect();
        let val: Vec<usize> = features.iter().map(|f| f.valign_index).collect();
        let sd = self.cfg.sinusoid_dim();
        let mut sin = Vec::with_capacity(n * sd);
        for f in features {
            if f.sinusoid.len() != sd {
                return Err(Error::ShapeMismatch {
                    op: "embed",
                    detail: format!("sinusoid block of {} for {sd}", f.sinusoid.len()),
                });
            }
            sin.extend_from_slice(&f.sinusoid);
        }
        let type_table = g.named(&self.name("type"))?;
        let hal_table = g.named(&self.name("halign"))?;
        let val_table = g.named(&self.name("valign"))?;
        let et = g.gather_rows(type_table, &types)?;
        let cont = g.constant(Tensor::from_vec(n, sd, sin)?);
        let eh = g.gather_rows(hal_table, &hal)?;
        let ev = g.gather_rows(val_table, &val)?;
        let cat = g.concat(&[et, cont, eh, ev])?;
        let w = g.named(&self.name("theta.w"))?;
        let b = g.named(&self.name("theta.b"))?;
        let lin = g.matmul(cat, w)?;
        let lin = g.add_row(lin, b)?;
        Ok(g.tanh(lin))
    }

    /// Value-level embedding of a single element.
    pub fn embed_element(&self, e: &VisualElement, params: &ParameterStore) -> Result<Vec<f64>> {
        let mut g = Graph::new(params);
        let v = self.embed(&mut g, &[ElementFeatures::from_element(e, &self.cfg)])?;
        Ok(g.value(v).data().to_vec())
    }
}

/// Padded, masked embeddings for a batch of layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    /// One `MAX_ELEMENTS x d_model` tensor per layout.
    pub embeddings: Vec<Tensor>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
    pub features: Vec<Vec<ElementFeatures>>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Dimensions `(batch, sequence, d_model)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let d = self.embeddings.first().map_or(0, Tensor::cols);
        (self.len(), MAX_ELEMENTS, d)
    }

    /// Embedding rows of the unmasked prefix of item `i`.
    pub fn valid_rows(&self, i: usize) -> Tensor {
        let t = &self.embeddings[i];
        let n = self.lengths[i];
        Tensor::from_vec(n, t.cols(), t.data()[..n * t.cols()].to_vec()).expect("prefix")
    }
}

pub fn build_batch(layouts: &[&Layout], embedder: &FeatureEmbedder, params: &ParameterStore) -> Result<SequenceBatch> {
    let cfg = &embedder.cfg;
    let pad = {
        let mut g = Graph::new(params);
        let v = embedder.embed(&mut g, &[ElementFeatures::padding(cfg)])?;
        g.value(v).data().to_vec()
    };
    let mut batch = SequenceBatch {
        embeddings: Vec::with_capacity(layouts.len()),
        mask: Vec::with_capacity(layouts.len()),
        lengths: Vec::with_capacity(layouts.len()),
        features: Vec::with_capacity(layouts.len()),
    };
    for layout in layouts {
        let n = layout.len();
        if n > MAX_ELEMENTS {
            return Err(Error::TooManyElements(n));
        }
        let feats = layout_features(layout.elements(), cfg);
        let mut g = Graph::new(params);
        let e = embedder.embed(&mut g, &feats)?;
        let mut t = Tensor::zeros(MAX_ELEMENTS, cfg.d_model);
        t.data_mut()[..n * cfg.d_model].copy_from_slice(g.value(e).data());
        for r in n..MAX_ELEMENTS {
            t.row_mut(r).copy_from_slice(&pad);
        }
        batch.embeddings.push(t);
        batch.mask.push((0..MAX_ELEMENTS).map(|i| i < n).collect());
        batch.lengths.push(n);
        batch.features.push(feats);
    }
    Ok(batch)
}
