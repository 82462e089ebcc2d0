//! Mini-batch Adam training with held-out model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Gradients, Graph, ParameterStore, Tensor};
use crate::embed::{layout_features, EmbedderConfig, ElementFeatures};
use crate::encoder::{derive_seed, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::eval::{pairwise_accuracy, PairCount};
use crate::layout::MAX_ELEMENTS;
use crate::model::{ModelConfig, PairModel};
use crate::relatedness::{positive_weight, HeadMode};
use crate::synth::{ground_truth_matrix, LabeledLayout};

const SPATIAL_PREFIX: &str = "enc.bias.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub batch: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub seed: u64,
    pub head: HeadMode,
    pub spatial: bool,
    /// Share of the training layouts held out for choosing the best epoch.
    pub holdout_fraction: f64,
    pub pos_weight_cap: f64,
    /// Learning-rate multiplier for the spatial bias tables.
    pub spatial_lr_scale: f64,
    pub embedder: EmbedderConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            dropout: 0.3,
            batch: 16,
            max_len: MAX_ELEMENTS,
            epochs: 30,
            seed: 0,
            head: HeadMode::SigmoidPairwise,
            spatial: true,
            holdout_fraction: 0.1,
            pos_weight_cap: 1.0,
            spatial_lr_scale: 100.0,
            embedder: EmbedderConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!("holdout_fraction {} outside [0, 1)", self.holdout_fraction)));
        }
        if self.max_len == 0 || self.max_len > MAX_ELEMENTS {
            return Err(Error::Config(format!("max_len must be in 1..={MAX_ELEMENTS}")));
        }
        if !(self.spatial_lr_scale > 0.0 && self.spatial_lr_scale.is_finite()) {
            return Err(Error::Config("spatial_lr_scale must be positive".into()));
        }
        if !(self.pos_weight_cap >= 1.0) {
            return Err(Error::Config("pos_weight_cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Architecture implied by this configuration.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embedder: self.embedder,
            encoder: EncoderConfig {
                dropout: self.dropout,
                spatial: self.spatial,
                ..self.encoder
            },
            head: self.head,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_accuracy: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub pos_weight: f64,
    pub train_layouts: usize,
    pub holdout_layouts: usize,
    pub steps: u64,
}

/// Model-ready features and truth for one labeled layout.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub features: Vec<ElementFeatures>,
    pub truth: Tensor,
}

pub fn prepare(corpus: &[LabeledLayout], cfg: &EmbedderConfig, max_len: usize) -> Result<Vec<TrainItem>> {
    corpus
        .iter()
        .map(|item| {
            if item.layout.len() > max_len {
                return Err(Error::TooManyElements(item.layout.len()));
            }
            Ok(TrainItem {
                features: layout_features(item.layout.elements(), cfg),
                truth: ground_truth_matrix(&item.truth, &item.layout)?,
            })
        })
        .collect()
}

/// Pooled accuracy of `model` over `items` at threshold 0.5, unordered pairs.
pub fn accuracy_on<M: PairModel>(model: &M, items: &[&TrainItem]) -> Result<f64> {
    let mut total = PairCount::default();
    for it in items {
        let r = model.predict_features(&it.features)?;
        total += pairwise_accuracy(&r, &it.truth, 0.5, false)?;
    }
    Ok(total.accuracy())
}

const HOLDOUT_STREAM: u64 = 0x486f_6c64;
const SHUFFLE_STREAM: u64 = 0x5368_7566;
const DROPOUT_STREAM: u64 = 0x4472_6f70;

/// Mean gradient and summed loss over one mini-batch.
fn batch_step<M: PairModel>(
    model: &M,
    items: &[TrainItem],
    chunk: &[usize],
    dropout_seed: u64,
    offset: usize,
    pos_weight: f64,
) -> Result<(Gradients, f64)> {
    let mut acc: Option<Gradients> = None;
    let mut loss_sum = 0.0;
    for (k, &i) in chunk.iter().enumerate() {
        let item = &items[i];
        let seed = derive_seed(dropout_seed, (offset + k) as u64);
        let mut g = Graph::new(model.params());
        let loss = model.loss(&mut g, &item.features, &item.truth, Mode::Train { seed }, pos_weight)?;
        loss_sum += g.value(loss).item();
        let grads = g.backward(loss)?;
        match acc.as_mut() {
            Some(a) => a.merge(grads),
            None => acc = Some(grads),
        }
    }
    let mut grads = acc.expect("non-empty chunk");
    grads.scale(1.0 / chunk.len() as f64);
    Ok((grads, loss_sum))
}

/// Trains `model` in place; on return it holds the parameters of the epoch
/// with the best held-out accuracy. A non-finite gradient restores those
/// parameters and returns the error.
pub fn train<M: PairModel>(model: &mut M, corpus: &[LabeledLayout], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with_log(model, corpus, cfg, |_| {})
}

pub fn train_with_log<M: PairModel>(
    model: &mut M,
    corpus: &[LabeledLayout],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    let items = prepare(corpus, model.embedder_config(), cfg.max_len)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, HOLDOUT_STREAM)));
    let n_hold = if items.len() >= 2 {
        ((items.len() as f64 * cfg.holdout_fraction).ceil() as usize).min(items.len() - 1)
    } else {
        0
    };
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let mut train_idx = train_idx.to_vec();
    let holdout: Vec<&TrainItem> = hold_idx.iter().map(|&i| &items[i]).collect();
    let pos_weight = positive_weight(train_idx.iter().map(|&i| &items[i].truth), cfg.pos_weight_cap);
    let adam = cfg.adam();
    let store = model.params_mut();
    let tables: Vec<_> = store.ids().filter(|&id| store.name(id).starts_with(SPATIAL_PREFIX)).collect();
    for id in tables {
        store.set_lr_scale(id, cfg.spatial_lr_scale);
    }

    let mut best: Option<(ParameterStore, f64, usize)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        train_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, SHUFFLE_STREAM)));
        let mut loss_sum = 0.0;
        for (b, chunk) in train_idx.chunks(cfg.batch).enumerate() {
            let step = batch_step(model, &items, chunk, derive_seed(epoch_seed, DROPOUT_STREAM), b * cfg.batch, pos_weight)
                .and_then(|(grads, loss)| {
                    let store = model.params_mut();
                    store.accumulate(&grads);
                    store.adam_step(&adam)?;
                    Ok(loss)
                });
            match step {
                Ok(loss) => loss_sum += loss,
                Err(e) => {
                    match best.take() {
                        Some((snapshot, _, _)) => *model.params_mut() = snapshot,
                        None => model.params_mut().zero_grad(),
                    }
                    return Err(e);
                }
            }
        }
        let holdout_accuracy = if holdout.is_empty() {
            None
        } else {
            Some(accuracy_on(model, &holdout)?)
        };
        let score = holdout_accuracy.unwrap_or(f64::NEG_INFINITY);
        let selected = best.as_ref().map_or(true, |(_, s, _)| holdout.is_empty() || score > *s);
        if selected {
            best = Some((model.params().clone(), score, epoch));
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            holdout_accuracy,
            selected,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    let steps = model.params().step();
    let best_epoch = match best {
        Some((snapshot, _, epoch)) => {
            *model.params_mut() = snapshot;
            epoch
        }
        None => 0,
    };
    Ok(TrainReport {
        epochs: log,
        best_epoch,
        pos_weight,
        train_layouts: train_idx.len(),
        holdout_layouts: holdout.len(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RelatednessModel;
    use crate::synth::{generate_corpus, GeneratorSpec};

    fn small() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            epochs: 2,
            batch: 4,
            holdout_fraction: 0.2,
            embedder: EmbedderConfig {
                d_type: 4,
                d_z: 4,
                d_pos: 4,
                d_size: 4,
                d_rot: 2,
                d_align: 2,
                d_model: 16,
                scalar_scale: 128.0,
            },
            encoder: EncoderConfig {
                layers: 1,
                heads: 2,
                d_model: 16,
                d_k: 8,
                d_ff: 16,
                ..EncoderConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: 0.0, ..small() }.validate().is_err());
        assert!(TrainConfig { batch: 0, ..small() }.validate().is_err());
        assert!(small().validate().is_ok());
        assert_eq!(TrainConfig::default().lr, 1e-4);
        assert_eq!(TrainConfig::default().batch, 16);
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let corpus = generate_corpus(&GeneratorSpec::new(2, 10)).unwrap();
        let cfg = small();
        let mut a = RelatednessModel::new(cfg.model_config(), cfg.seed).unwrap();
        let mut b = RelatednessModel::new(cfg.model_config(), cfg.seed).unwrap();
        let ra = train(&mut a, &corpus, &cfg).unwrap();
        let rb = train(&mut b, &corpus, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.to_checkpoint(0, true).to_json(), b.to_checkpoint(0, true).to_json());
        assert_eq!(ra.train_layouts + ra.holdout_layouts, 10);
    }

    #[test]
    fn loss_decreases_over_fifty_steps() {
        let corpus = generate_corpus(&GeneratorSpec::new(0, 20)).unwrap();
        let cfg = TrainConfig {
            holdout_fraction: 0.0,
            ..small()
        };
        let mut m = RelatednessModel::new(cfg.model_config(), 0).unwrap();
        let items = prepare(&corpus, &cfg.embedder, MAX_ELEMENTS).unwrap();
        let pw = positive_weight(items.iter().map(|i| &i.truth), cfg.pos_weight_cap);
        let full_loss = |m: &RelatednessModel| -> f64 {
            items
                .iter()
                .map(|it| {
                    let mut g = Graph::new(&m.params);
                    let l = m.loss(&mut g, &it.features, &it.truth, Mode::Infer, pw).unwrap();
                    g.value(l).item()
                })
                .sum::<f64>()
                / items.len() as f64
        };
        let before = full_loss(&m);
        // 20 layouts in batches of 4 -> 5 steps per epoch
        let report = train(&mut m, &corpus, &TrainConfig { epochs: 10, ..cfg }).unwrap();
        assert_eq!(report.steps, 50);
        let after = full_loss(&m);
        assert!(after < before, "{before} -> {after}");
    }

    /// Wraps a model so that every loss after `after_step` updates has an
    /// infinite gradient.
    struct Exploding {
        inner: RelatednessModel,
        after_step: u64,
    }

    impl PairModel for Exploding {
        fn embedder_config(&self) -> &EmbedderConfig {
            self.inner.embedder_config()
        }
        fn params(&self) -> &ParameterStore {
            &self.inner.params
        }
        fn params_mut(&mut self) -> &mut ParameterStore {
            &mut self.inner.params
        }
        fn loss(
            &self,
            g: &mut Graph,
            f: &[ElementFeatures],
            t: &Tensor,
            mode: Mode,
            pw: f64,
        ) -> Result<crate::autodiff::Var> {
            let l = self.inner.loss(g, f, t, mode, pw)?;
            Ok(if self.inner.params.step() >= self.after_step {
                g.scale(l, f64::INFINITY)
            } else {
                l
            })
        }
        fn predict_features(&self, f: &[ElementFeatures]) -> Result<crate::relatedness::AssociationMatrix> {
            self.inner.predict_features(f)
        }
    }

    #[test]
    fn non_finite_gradient_restores_best_parameters() {
        let corpus = generate_corpus(&GeneratorSpec::new(4, 10)).unwrap();
        let cfg = TrainConfig { batch: 8, ..small() };
        // 2 held out, 8 trained: one update per epoch
        let mut clean = RelatednessModel::new(cfg.model_config(), 1).unwrap();
        train(&mut clean, &corpus, &TrainConfig { epochs: 2, ..cfg.clone() }).unwrap();
        let mut boom = Exploding {
            inner: RelatednessModel::new(cfg.model_config(), 1).unwrap(),
            after_step: 2,
        };
        let err = train(&mut boom, &corpus, &TrainConfig { epochs: 5, ..cfg }).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)), "{err:?}");
        assert_eq!(boom.inner.params, clean.params);
    }

    #[test]
    fn rejects_oversized_layouts() {
        let corpus = generate_corpus(&GeneratorSpec::new(4, 3)).unwrap();
        let cfg = TrainConfig { max_len: 3, ..small() };
        let mut m = RelatednessModel::new(cfg.model_config(), 1).unwrap();
        assert!(matches!(train(&mut m, &corpus, &cfg), Err(Error::TooManyElements(_))));
    }
}
