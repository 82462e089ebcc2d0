//! Pairwise accuracy, dataset splits, the three-way model comparison and
//! corpus statistics.

use std::collections::BTreeMap;
use std::ops::AddAssign;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::encoder::derive_seed;
use crate::error::{Error, Result};
use crate::layout::{ElementType, Layout};
use crate::model::{BaselineConfig, BaselineModel, PairModel, RelatednessModel};
use crate::relatedness::AssociationMatrix;
use crate::synth::{ground_truth_matrix, LabeledLayout};
use crate::train::{train, TrainConfig};

/// Matching and total pair counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub matches: u64,
    pub total: u64,
}

impl PairCount {
    /// `matches / total`; zero when there are no pairs.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matches as f64 / self.total as f64
        }
    }
}

impl AddAssign for PairCount {
    fn add_assign(&mut self, o: PairCount) {
        self.matches += o.matches;
        self.total += o.total;
    }
}

/// Counts off-diagonal pairs where `pred >= threshold` agrees with the truth.
/// Unordered pairs count once; ordered pairs count both directions.
pub fn pairwise_accuracy(pred: &AssociationMatrix, truth: &Tensor, threshold: f64, ordered: bool) -> Result<PairCount> {
    let n = pred.n;
    if truth.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "pairwise_accuracy",
            detail: format!("prediction {n}x{n}, truth {:?}", truth.shape()),
        });
    }
    let mut c = PairCount::default();
    for i in 0..n {
        let start = if ordered { 0 } else { i + 1 };
        for j in start..n {
            if i == j {
                continue;
            }
            c.total += 1;
            if (pred.get(i, j) >= threshold) == (truth.get(i, j) > 0.5) {
                c.matches += 1;
            }
        }
    }
    Ok(c)
}

/// Deterministic layout-level split; the first part has `round(len * ratio)` items.
pub fn split<T: Clone>(corpus: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    if corpus.len() < 2 {
        return Err(Error::InvalidInput("need at least two layouts to split".into()));
    }
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5370_6c69)));
    let k = ((corpus.len() as f64 * ratio).round() as usize).clamp(1, corpus.len() - 1);
    let pick = |ids: &[usize]| ids.iter().map(|&i| corpus[i].clone()).collect::<Vec<T>>();
    Ok((pick(&idx[..k]), pick(&idx[k..])))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub ratio: f64,
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub matches: u64,
    pub total: u64,
    pub accuracy: f64,
    pub threshold: f64,
    pub ordered_pairs: bool,
    pub layouts: usize,
    pub seed: Option<u64>,
    pub split: Option<SplitInfo>,
    pub wall_clock_seconds: f64,
}

/// Accuracy of `model` pooled over every pair of every layout.
pub fn evaluate<M: PairModel>(
    model: &M,
    name: &str,
    corpus: &[LabeledLayout],
    threshold: f64,
    ordered: bool,
) -> Result<EvalReport> {
    let start = Instant::now();
    let mut c = PairCount::default();
    for item in corpus {
        let truth = ground_truth_matrix(&item.truth, &item.layout)?;
        let pred = model.predict(&item.layout)?;
        c += pairwise_accuracy(&pred, &truth, threshold, ordered)?;
    }
    Ok(EvalReport {
        model: name.to_string(),
        matches: c.matches,
        total: c.total,
        accuracy: c.accuracy(),
        threshold,
        ordered_pairs: ordered,
        layouts: corpus.len(),
        seed: None,
        split: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Baseline,
    NoSpatial,
    Spatial,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Baseline, ModelKind::NoSpatial, ModelKind::Spatial];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Baseline => "Neural Network Baseline",
            ModelKind::NoSpatial => "Ours w/o Spatial-aware Attention",
            ModelKind::Spatial => "Ours with Spatial-aware Attention",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub train: TrainConfig,
    pub baseline_hidden: [usize; 2],
    pub ratio: f64,
    pub threshold: f64,
    pub ordered_pairs: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            train: TrainConfig::default(),
            baseline_hidden: BaselineConfig::default().hidden,
            ratio: 0.8,
            threshold: 0.5,
            ordered_pairs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub label: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub split: SplitInfo,
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<EvalReport>,
    pub wall_clock_seconds: f64,
}

impl ComparisonReport {
    pub fn row(&self, kind: ModelKind) -> &ComparisonRow {
        self.rows.iter().find(|r| r.model == kind).expect("all kinds present")
    }

    /// Plain-text table of per-seed and mean accuracies.
    pub fn table(&self) -> String {
        let mut s = format!("{:<36}", "Model");
        for seed in &self.seeds {
            s += &format!(" {:>9}", format!("seed {seed}"));
        }
        s += &format!(" {:>9}\n", "mean");
        for r in &self.rows {
            s += &format!("{:<36}", r.label);
            for a in &r.per_seed {
                s += &format!(" {:>8.2}%", a * 100.0);
            }
            s += &format!(" {:>8.2}%\n", r.mean * 100.0);
        }
        s
    }
}

/// Trains and tests the baseline and both encoder variants on one shared
/// split per seed. Models train one after another.
pub fn compare_models(
    corpus: &[LabeledLayout],
    seeds: &[u64],
    cfg: &CompareConfig,
    mut progress: impl FnMut(&str),
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let start = Instant::now();
    let mut per: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut reports = Vec::new();
    let mut info = None;
    for &seed in seeds {
        let (train_set, test_set) = split(corpus, cfg.ratio, seed)?;
        let split_info = SplitInfo {
            ratio: cfg.ratio,
            train: train_set.len(),
            test: test_set.len(),
        };
        info = Some(split_info);
        for (k, kind) in ModelKind::ALL.iter().enumerate() {
            let tcfg = TrainConfig {
                seed,
                spatial: *kind == ModelKind::Spatial,
                ..cfg.train.clone()
            };
            let t0 = Instant::now();
            let mut report = match kind {
                ModelKind::Baseline => {
                    let mut m = BaselineModel::new(
                        BaselineConfig {
                            embedder: tcfg.embedder,
                            hidden: cfg.baseline_hidden,
                        },
                        seed,
                    )?;
                    train(&mut m, &train_set, &tcfg)?;
                    evaluate(&m, kind.label(), &test_set, cfg.threshold, cfg.ordered_pairs)?
                }
                _ => {
                    let mut m = RelatednessModel::new(tcfg.model_config(), seed)?;
                    train(&mut m, &train_set, &tcfg)?;
                    evaluate(&m, kind.label(), &test_set, cfg.threshold, cfg.ordered_pairs)?
                }
            };
            report.seed = Some(seed);
            report.split = Some(split_info);
            report.wall_clock_seconds = t0.elapsed().as_secs_f64();
            progress(&format!(
                "seed {seed} {:<36} accuracy {:.4} ({:.1}s)",
                kind.label(),
                report.accuracy,
                report.wall_clock_seconds
            ));
            per.entry(k).or_default().push(report.accuracy);
            reports.push(report);
        }
    }
    let rows = ModelKind::ALL
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let v = per.remove(&k).unwrap_or_default();
            ComparisonRow {
                model: *kind,
                label: kind.label().to_string(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                per_seed: v,
            }
        })
        .collect();
    Ok(ComparisonReport {
        seeds: seeds.to_vec(),
        split: info.expect("at least one seed"),
        rows,
        reports,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Side length of the per-type spatial heat grids.
pub const HEAT_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub layouts: usize,
    pub elements: usize,
    pub mean_elements: f64,
    pub min_elements: usize,
    pub max_elements: usize,
    /// Element count -> number of layouts.
    pub count_histogram: BTreeMap<usize, usize>,
    /// Share of all elements per type.
    pub type_distribution: BTreeMap<String, f64>,
    /// Per type, element centers binned on a `HEAT_BINS x HEAT_BINS` grid (row = y).
    pub heat_grids: BTreeMap<String, Vec<Vec<u64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_groups: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_groups: Option<usize>,
}

pub fn corpus_stats(layouts: &[&Layout]) -> Result<CorpusStats> {
    if layouts.is_empty() {
        return Err(Error::InvalidInput("corpus is empty".into()));
    }
    let mut hist = BTreeMap::new();
    let mut types: BTreeMap<String, usize> = BTreeMap::new();
    let mut heat: BTreeMap<String, Vec<Vec<u64>>> = BTreeMap::new();
    let mut elements = 0;
    for l in layouts {
        *hist.entry(l.len()).or_insert(0) += 1;
        elements += l.len();
        for e in l.elements() {
            let name = e.etype.name().to_string();
            *types.entry(name.clone()).or_insert(0) += 1;
            let (cx, cy) = e.bbox.center();
            let bin = |v: f64| ((v * HEAT_BINS as f64).floor().max(0.0) as usize).min(HEAT_BINS - 1);
            heat.entry(name).or_insert_with(|| vec![vec![0; HEAT_BINS]; HEAT_BINS])[bin(cy)][bin(cx)] += 1;
        }
    }
    let counts: Vec<usize> = layouts.iter().map(|l| l.len()).collect();
    Ok(CorpusStats {
        layouts: layouts.len(),
        elements,
        mean_elements: elements as f64 / layouts.len() as f64,
        min_elements: *counts.iter().min().expect("non-empty"),
        max_elements: *counts.iter().max().expect("non-empty"),
        count_histogram: hist,
        type_distribution: types
            .into_iter()
            .map(|(k, v)| (k, v as f64 / elements as f64))
            .collect(),
        heat_grids: heat,
        mean_groups: None,
        min_groups: None,
    })
}

/// Corpus statistics plus ground-truth group counts.
pub fn labeled_stats(corpus: &[LabeledLayout]) -> Result<CorpusStats> {
    let layouts: Vec<&Layout> = corpus.iter().map(|c| &c.layout).collect();
    let mut s = corpus_stats(&layouts)?;
    let groups: Vec<usize> = corpus.iter().map(|c| c.truth.flat.len()).collect();
    s.mean_groups = Some(groups.iter().sum::<usize>() as f64 / groups.len() as f64);
    s.min_groups = groups.iter().min().copied();
    Ok(s)
}

pub fn type_names() -> Vec<&'static str> {
    ElementType::ALL.iter().map(|t| t.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Canvas, VisualElement};
    use rand::Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> AssociationMatrix {
        AssociationMatrix { n: rows.len(), scores: rows }
    }

    #[test]
    fn accuracy_examples() {
        let truth = Tensor::from_rows(&[vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let exact = matrix(vec![vec![1.0, 0.9, 0.1], vec![0.9, 1.0, 0.2], vec![0.1, 0.2, 1.0]]);
        assert_eq!(pairwise_accuracy(&exact, &truth, 0.5, false).unwrap(), PairCount { matches: 3, total: 3 });
        assert_eq!(pairwise_accuracy(&exact, &truth, 0.5, true).unwrap(), PairCount { matches: 6, total: 6 });
        let inverted = matrix(vec![vec![1.0, 0.1, 0.9], vec![0.1, 1.0, 0.8], vec![0.9, 0.8, 1.0]]);
        assert_eq!(pairwise_accuracy(&inverted, &truth, 0.5, false).unwrap().accuracy(), 0.0);
        // four elements: 6 pairs; flip two of them
        let t4 = Tensor::identity(4);
        let mut p4 = vec![vec![0.0; 4]; 4];
        for (i, row) in p4.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        p4[0][1] = 0.7;
        p4[1][0] = 0.7;
        let c = pairwise_accuracy(&matrix(p4), &t4, 0.5, false).unwrap();
        assert_eq!((c.matches, c.total), (5, 6));
        assert!(pairwise_accuracy(&exact, &Tensor::identity(2), 0.5, false).is_err());
    }

    #[test]
    fn three_of_four_pairs() {
        let mut c = PairCount::default();
        c += PairCount { matches: 3, total: 4 };
        assert_eq!(c.accuracy(), 0.75);
    }

    #[test]
    fn random_predictor_is_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 142; // 142*141/2 = 10011 pairs
        let mut truth = Tensor::identity(n);
        let mut scores = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let t = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
                truth.set(i, j, t);
                truth.set(j, i, t);
                let s: f64 = rng.gen();
                scores[i][j] = s;
                scores[j][i] = s;
            }
        }
        let acc = pairwise_accuracy(&matrix(scores), &truth, 0.5, false).unwrap().accuracy();
        assert!((acc - 0.5).abs() < 0.05, "{acc}");
    }

    #[test]
    fn split_examples() {
        let items: Vec<u32> = (0..10).collect();
        let (a, b) = split(&items, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(split(&items, 0.8, 3).unwrap(), (a.clone(), b.clone()));
        assert!(a.iter().all(|x| !b.contains(x)));
        assert!(split(&items, 1.0, 3).is_err());
        assert!(split(&items, 0.0, 3).is_err());
        let (a, b) = split(&(0..625).collect::<Vec<_>>(), 0.8, 0).unwrap();
        assert_eq!((a.len(), b.len()), (500, 125));
    }

    fn text_layout(n: usize) -> Layout {
        let els = (0..n)
            .map(|i| {
                let x = i as f64 / (n as f64 + 1.0);
                VisualElement::new(format!("t{i}"), ElementType::Text, i as u32, BBox::new(x, 0.5, x + 0.01, 0.55), 0.0, None)
                    .unwrap()
            })
            .collect();
        Layout::new("s", Canvas { width: 1.0, height: 1.0 }, els).unwrap()
    }

    #[test]
    fn stats_examples() {
        let (a, b) = (text_layout(5), text_layout(7));
        let s = corpus_stats(&[&a, &b]).unwrap();
        assert_eq!(s.mean_elements, 6.0);
        assert_eq!(s.type_distribution.len(), 1);
        assert_eq!(s.type_distribution["text"], 1.0);
        let cells: u64 = s.heat_grids["text"].iter().flatten().sum();
        assert_eq!(cells, 12);
        assert!(corpus_stats(&[]).is_err());
    }
}
