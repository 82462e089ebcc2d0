//! The context-aware relatedness model, the pairwise baseline, and their
//! checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterStore, StoreCheckpoint, Tensor, Var};
use crate::embed::{layout_features, EmbedderConfig, ElementFeatures, FeatureEmbedder};
use crate::encoder::{ContextEncoder, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::layout::{Layout, MAX_ELEMENTS};
use crate::relatedness::{symmetrize, AssociationMatrix, HeadMode, RelatednessHead};

/// A model that scores element pairs and can be trained on 0/1 truth.
pub trait PairModel {
    fn embedder_config(&self) -> &EmbedderConfig;
    fn params(&self) -> &ParameterStore;
    fn params_mut(&mut self) -> &mut ParameterStore;
    /// Scalar training loss for one layout.
    fn loss(&self, g: &mut Graph, features: &[ElementFeatures], truth: &Tensor, mode: Mode, pos_weight: f64)
        -> Result<Var>;
    fn predict_features(&self, features: &[ElementFeatures]) -> Result<AssociationMatrix>;

    fn predict(&self, layout: &Layout) -> Result<AssociationMatrix> {
        if layout.len() > MAX_ELEMENTS {
            return Err(Error::TooManyElements(layout.len()));
        }
        self.predict_features(&layout_features(layout.elements(), self.embedder_config()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedder: EmbedderConfig,
    pub encoder: EncoderConfig,
    pub head: HeadMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedder: EmbedderConfig::default(),
            encoder: EncoderConfig::default(),
            head: HeadMode::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.encoder.validate()?;
        if self.embedder.d_model != self.encoder.d_model {
            return Err(Error::Config(format!(
                "embedder width {} differs from encoder width {}",
                self.embedder.d_model, self.encoder.d_model
            )));
        }
        Ok(())
    }
}

/// Embedder, spatial-aware encoder and relatedness head.
#[derive(Clone, Debug)]
pub struct RelatednessModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
    embedder: FeatureEmbedder,
    encoder: ContextEncoder,
    head: RelatednessHead,
}

/// Serialized parameters plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub model: ModelConfig,
    #[serde(flatten)]
    pub store: StoreCheckpoint,
}

impl ModelCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl RelatednessModel {
    fn parts(config: ModelConfig) -> Result<(FeatureEmbedder, ContextEncoder, RelatednessHead)> {
        config.validate()?;
        Ok((
            FeatureEmbedder::new(config.embedder, "embed")?,
            ContextEncoder::new(config.encoder)?,
            RelatednessHead {
                mode: config.head,
                d_model: config.encoder.d_model,
            },
        ))
    }

    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let (embedder, encoder, head) = Self::parts(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        embedder.init_params(&mut params, &mut rng);
        encoder.init_params(&mut params, &mut rng);
        head.init_params(&mut params, &mut rng);
        Ok(RelatednessModel {
            config,
            params,
            embedder,
            encoder,
            head,
        })
    }

    pub fn embedder(&self) -> &FeatureEmbedder {
        &self.embedder
    }

    pub fn encoder(&self) -> &ContextEncoder {
        &self.encoder
    }

    pub fn head(&self) -> &RelatednessHead {
        &self.head
    }

    /// Pairwise logits for one layout.
    pub fn logits(&self, g: &mut Graph, features: &[ElementFeatures], mode: Mode) -> Result<Var> {
        let x = self.embedder.embed(g, features)?;
        let h = self.encoder.forward(g, x, features, mode)?;
        self.head.logits(g, h)
    }

    /// Directional scores `r` before symmetrization.
    pub fn raw_scores(&self, features: &[ElementFeatures]) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let l = self.logits(&mut g, features, Mode::Infer)?;
        let r = self.head.scores(&mut g, l)?;
        Ok(g.value(r).clone())
    }

    pub fn to_checkpoint(&self, seed: u64, include_moments: bool) -> ModelCheckpoint {
        ModelCheckpoint {
            model: self.config,
            store: self.params.to_checkpoint(seed, include_moments),
        }
    }

    /// Restores a model; every parameter the architecture needs must be
    /// present with the right shape, and nothing else.
    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let reference = RelatednessModel::new(ck.model, 0)?;
        let store = ParameterStore::from_checkpoint(&ck.store)?;
        for name in reference.params.names() {
            let want = reference.params.get(name).expect("listed").shape();
            match store.get(name) {
                Some(t) if t.shape() == want => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, config expects {want:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("parameter {name} missing for this config"))),
            }
        }
        if store.len() != reference.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, config expects {}",
                store.len(),
                reference.params.len()
            )));
        }
        Ok(RelatednessModel {
            params: store,
            ..reference
        })
    }
}

impl PairModel for RelatednessModel {
    fn embedder_config(&self) -> &EmbedderConfig {
        &self.config.embedder
    }

    fn params(&self) -> &ParameterStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn loss(&self, g: &mut Graph, features: &[ElementFeatures], truth: &Tensor, mode: Mode, pos_weight: f64) -> Result<Var> {
        let l = self.logits(g, features, mode)?;
        self.head.loss(g, l, truth, pos_weight)
    }

    fn predict_features(&self, features: &[ElementFeatures]) -> Result<AssociationMatrix> {
        let r = symmetrize(&self.raw_scores(features)?);
        debug_assert!(r.validate().is_ok());
        Ok(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub embedder: EmbedderConfig,
    pub hidden: [usize; 2],
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            embedder: EmbedderConfig::default(),
            hidden: [256, 64],
        }
    }
}

/// Three tanh-affine layers over the concatenated embeddings of an ordered
/// pair, ending in a two-way decision. No context beyond the pair.
#[derive(Clone, Debug)]
pub struct BaselineModel {
    pub config: BaselineConfig,
    pub params: ParameterStore,
    embedder: FeatureEmbedder,
}

impl BaselineModel {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        let embedder = FeatureEmbedder::new(config.embedder, "embed")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        embedder.init_params(&mut params, &mut rng);
        let d = config.embedder.d_model;
        let [h1, h2] = config.hidden;
        // the first layer acts on [e_i, e_j]; its two column blocks are
        // stored separately so each element is projected once
        let limit = (6.0 / (2 * d + h1) as f64).sqrt();
        for part in ["mlp.l1.wi", "mlp.l1.wj"] {
            use rand::Rng;
            let data = (0..d * h1).map(|_| rng.gen_range(-limit..limit)).collect();
            params.insert(part, Tensor::from_vec(d, h1, data)?);
        }
        params.insert("mlp.l1.b", Tensor::zeros(1, h1));
        params.insert_glorot("mlp.l2.w", h1, h2, &mut rng);
        params.insert("mlp.l2.b", Tensor::zeros(1, h2));
        params.insert_glorot("mlp.l3.w", h2, 2, &mut rng);
        params.insert("mlp.l3.b", Tensor::zeros(1, 2));
        Ok(BaselineModel {
            config,
            params,
            embedder,
        })
    }

    fn pairs(n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut is = Vec::with_capacity(n * n.saturating_sub(1));
        let mut js = Vec::with_capacity(n * n.saturating_sub(1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    is.push(i);
                    js.push(j);
                }
            }
        }
        (is, js)
    }

    /// Two-way logits for every ordered pair `(i, j)`, `i != j`, row-major.
    pub fn pair_logits(&self, g: &mut Graph, features: &[ElementFeatures]) -> Result<Var> {
        let e = self.embedder.embed(g, features)?;
        let (is, js) = Self::pairs(features.len());
        let wi = g.named("mlp.l1.wi")?;
        let wj = g.named("mlp.l1.wj")?;
        let a = g.matmul(e, wi)?;
        let b = g.matmul(e, wj)?;
        let a = g.gather_rows(a, &is)?;
        let b = g.gather_rows(b, &js)?;
        let x = g.add(a, b)?;
        let b1 = g.named("mlp.l1.b")?;
        let x = g.add_row(x, b1)?;
        let x = g.tanh(x);
        let (w2, b2) = (g.named("mlp.l2.w")?, g.named("mlp.l2.b")?);
        let x = g.matmul(x, w2)?;
        let x = g.add_row(x, b2)?;
        let x = g.tanh(x);
        let (w3, b3) = (g.named("mlp.l3.w")?, g.named("mlp.l3.b")?);
        let x = g.matmul(x, w3)?;
        g.add_row(x, b3)
    }
}

impl PairModel for BaselineModel {
    fn embedder_config(&self) -> &EmbedderConfig {
        &self.config.embedder
    }

    fn params(&self) -> &ParameterStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn loss(&self, g: &mut Graph, features: &[ElementFeatures], truth: &Tensor, _mode: Mode, pos_weight: f64) -> Result<Var> {
        let n = features.len();
        if n < 2 {
            return Ok(g.constant(Tensor::scalar(0.0)));
        }
        let logits = self.pair_logits(g, features)?;
        let (is, js) = Self::pairs(n);
        let mut targets = Tensor::zeros(is.len(), 2);
        let mut weights = Vec::with_capacity(is.len());
        for (p, (&i, &j)) in is.iter().zip(&js).enumerate() {
            let pos = truth.get(i, j) > 0.5;
            targets.set(p, usize::from(pos), 1.0);
            weights.push(if pos { pos_weight } else { 1.0 });
        }
        g.cross_entropy(logits, targets, weights)
    }

    fn predict_features(&self, features: &[ElementFeatures]) -> Result<AssociationMatrix> {
        let n = features.len();
        let mut r = Tensor::zeros(n, n);
        if n >= 2 {
            let mut g = Graph::new(&self.params);
            let l = self.pair_logits(&mut g, features)?;
            let p = g.row_softmax(l, None)?;
            let (is, js) = Self::pairs(n);
            for (k, (&i, &j)) in is.iter().zip(&js).enumerate() {
                r.set(i, j, g.value(p).get(k, 1));
            }
        }
        Ok(symmetrize(&r))
    }
}
