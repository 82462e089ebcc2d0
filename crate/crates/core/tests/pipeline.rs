mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use common::{random_layout, random_permutation};
use layoutgroup_core::embed::{layout_features, EmbedderConfig};
use layoutgroup_core::encoder::EncoderConfig;
use layoutgroup_core::grouping::{group_layout, is_coarsening, GroupingParams};
use layoutgroup_core::model::{ModelCheckpoint, ModelConfig, PairModel, RelatednessModel};
use layoutgroup_core::relatedness::HeadMode;
use layoutgroup_core::synth::{
    generate_corpus, ground_truth_matrix, load_corpus, partition_indices, write_corpus, GeneratorSpec,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(head: HeadMode) -> ModelConfig {
    ModelConfig {
        embedder: EmbedderConfig {
            d_model: 16,
            ..EmbedderConfig::default()
        },
        encoder: EncoderConfig {
            layers: 2,
            heads: 2,
            d_model: 16,
            d_k: 8,
            d_ff: 32,
            ..EncoderConfig::default()
        },
        head,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn predictions_are_permutation_equivariant(n in 2usize..40, seed in any::<u64>(), softmax in any::<bool>()) {
        let head = if softmax { HeadMode::SoftmaxPaper } else { HeadMode::SigmoidPairwise };
        let m = RelatednessModel::new(small_config(head), seed).unwrap();
        let l = random_layout(n, seed);
        let feats = layout_features(l.elements(), &m.config.embedder);
        let perm = random_permutation(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<_> = perm.iter().map(|&i| feats[i].clone()).collect();
        let a = m.predict_features(&feats).unwrap();
        let b = m.predict_features(&shuffled).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(b.get(i, j).to_bits(), a.get(perm[i], perm[j]).to_bits());
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let m = RelatednessModel::new(small_config(HeadMode::SigmoidPairwise), 3).unwrap();
    let back = RelatednessModel::from_checkpoint(&ModelCheckpoint::from_json(&m.to_checkpoint(3, true).to_json()).unwrap()).unwrap();
    let l = random_layout(17, 9);
    assert_eq!(m.predict(&l).unwrap(), back.predict(&l).unwrap());
}

#[test]
fn generated_truth_is_consistent() {
    let corpus = generate_corpus(&GeneratorSpec::new(11, 60)).unwrap();
    for item in &corpus {
        let l = &item.layout;
        let t = ground_truth_matrix(&item.truth, l).unwrap();
        let n = l.len();
        for i in 0..n {
            assert_eq!(t.get(i, i), 1.0);
            for j in 0..n {
                assert_eq!(t.get(i, j), t.get(j, i));
            }
        }
        let flat = partition_indices(&item.truth.flat, l).unwrap();
        let covered: BTreeSet<usize> = flat.iter().flatten().copied().collect();
        assert_eq!(covered.len(), n);
        for g in &flat {
            for &i in g {
                for j in 0..n {
                    assert_eq!(t.get(i, j) > 0.5, g.contains(&j));
                }
            }
        }
        let mut levels: Vec<Vec<Vec<usize>>> = item
            .truth
            .hierarchy
            .iter()
            .map(|lv| partition_indices(lv, l).unwrap())
            .collect();
        assert_eq!(levels[0], flat);
        for lv in &mut levels {
            for g in lv.iter_mut() {
                g.sort_unstable();
            }
        }
        for w in levels.windows(2) {
            assert!(is_coarsening(&w[0], &w[1]));
        }
        for e in l.elements() {
            let b = e.bbox;
            assert!(0.0 <= b.x1 && b.x1 <= b.x2 && b.x2 <= 1.0 && 0.0 <= b.y1 && b.y1 <= b.y2 && b.y2 <= 1.0);
        }
    }
}

#[test]
fn corpus_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&GeneratorSpec::new(5, 8)).unwrap();
    write_corpus(dir.path(), &corpus).unwrap();
    assert_eq!(load_corpus(dir.path()).unwrap(), corpus);
}

#[test]
fn grouping_a_generated_layout() {
    let m = RelatednessModel::new(small_config(HeadMode::SigmoidPairwise), 0).unwrap();
    let corpus = generate_corpus(&GeneratorSpec::new(2, 3)).unwrap();
    for item in &corpus {
        let (r, h) = group_layout(&m, &item.layout, &GroupingParams::default()).unwrap();
        assert!(r.validate().is_ok());
        assert_eq!(h.levels.last().unwrap().len(), 1);
    }
}

fn cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_layoutgroup"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"epochs": 1, "batch": 4}"#).unwrap();
    std::fs::write(d.join("spec.json"), r#"{"n_layouts": 12}"#).unwrap();
    let ok = |args: &[&str]| {
        let out = cli(args, d);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    ok(&["generate", "--spec", "spec.json", "--seed", "4", "--out", "corpus"]);
    ok(&["train", "--corpus", "corpus", "--config", "cfg.json", "--out", "m.json"]);
    let layout = "corpus/layout_00001.json";
    let predicted: serde_json::Value = serde_json::from_slice(&ok(&["predict", "--layout", layout, "--ckpt", "m.json"])).unwrap();
    assert!(predicted["n"].as_u64().unwrap() >= 2);
    ok(&["group", "--layout", layout, "--ckpt", "m.json", "--out", "g.json"]);
    ok(&["render", "--layout", layout, "--groups", "g.json", "--level", "1", "--out", "g.svg"]);
    assert!(std::fs::read_to_string(d.join("g.svg")).unwrap().starts_with("<svg"));
    let report: serde_json::Value = serde_json::from_slice(&ok(&["eval", "--corpus", "corpus", "--ckpt", "m.json"])).unwrap();
    assert!(report["total"].as_u64().unwrap() > 0);
    let stats: serde_json::Value = serde_json::from_slice(&ok(&["stats", "--corpus", "corpus", "--svg", "h.svg"])).unwrap();
    assert_eq!(stats["layouts"], 12);

    let bad = cli(&["render", "--layout", layout, "--groups", "g.json", "--level", "999", "--out", "x.svg"], d);
    assert!(!bad.status.success());
    let missing = cli(&["predict", "--layout", "nope.json", "--ckpt", "m.json"], d);
    assert!(!missing.status.success());
}
