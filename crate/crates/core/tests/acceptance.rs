//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs all ten; numeric arguments after `--`
//! select a subset, e.g. `cargo test --test acceptance -- 1 5`.

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::{brute_force_int, random_connected_group, random_layout, random_matrix, random_permutation};
use layoutgroup_core::autodiff::{grad_check, Graph, Tensor};
use layoutgroup_core::embed::{layout_features, ElementFeatures, FeatureEmbedder};
use layoutgroup_core::encoder::{attention_scores, spatial_bias, ContextEncoder, EncoderConfig, Mode};
use layoutgroup_core::eval::{compare_models, evaluate, labeled_stats, CompareConfig, ModelKind};
use layoutgroup_core::grouping::{group_layout, hierarchical_group, is_coarsening, is_laminar, GroupingParams};
use layoutgroup_core::layout::{BBox, Canvas, ElementType, Layout, VisualElement};
use layoutgroup_core::model::{ModelConfig, PairModel, RelatednessModel};
use layoutgroup_core::proximity::{build_graph, internal_distance};
use layoutgroup_core::relatedness::AssociationMatrix;
use layoutgroup_core::synth::{generate_corpus, GeneratorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SECONDS: f64 = 30.0;
const SOFTMAX_TOL: f64 = 1e-9;
const EQUIVARIANCE_LAYOUTS: usize = 100;
const CORPUS_SEED: u64 = 7;
const TRAIN_LAYOUTS: usize = 500;
const TEST_LAYOUTS: usize = 125;
const MIN_SPATIAL_ACCURACY: f64 = 0.90;
const MIN_BASELINE_GAP: f64 = 0.02;
const COMPARE_SECONDS: f64 = 1800.0;
const MST_GROUPS: usize = 200;
const MST_MAX_NODES: usize = 6;
const GROUPING_RUNS: usize = 1000;
const SCALE_ELEMENTS: usize = 128;
const SCALE_LAYOUT_SECONDS: f64 = 1.0;
const SCALE_CORPUS_SECONDS: f64 = 60.0;
const STATS_LAYOUTS: usize = 1000;
const MEAN_ELEMENTS: (f64, f64) = (20.0, 34.0);
const MIN_GROUPS: usize = 2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid_layout(boxes: &[BBox]) -> Layout {
    let els = boxes
        .iter()
        .enumerate()
        .map(|(i, &b)| VisualElement::new(((b'a' + i as u8) as char).to_string(), ElementType::Text, i as u32, b, 0.0, None).unwrap())
        .collect();
    Layout::new("trace", Canvas { width: 1.0, height: 1.0 }, els).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let mut m = RelatednessModel::new(cfg, 21).unwrap();
    // small random tables so the spatial path carries gradient signal
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let tables: Vec<_> = m.params.ids().filter(|&id| m.params.name(id).starts_with("enc.bias.")).collect();
    for id in tables {
        for v in m.params.value_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let layout = random_layout(5, 21);
    let feats = layout_features(layout.elements(), &cfg.embedder);
    let mut truth = Tensor::identity(5);
    for (i, j) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
        truth.set(i, j, 1.0);
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for mode in [Mode::Infer, Mode::Train { seed: 3 }] {
        let probe = m.clone();
        let r = grad_check(&mut m.params, |g| probe.loss(g, &feats, &truth, mode, 1.0), GRAD_EPS, Some(16), 5).unwrap();
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < GRAD_TOL && secs < GRAD_SECONDS,
        format!("max relative error {worst:.2e} over {checked} coordinates, {secs:.1}s (limits {GRAD_TOL:.0e}, {GRAD_SECONDS}s)"),
    )
}

fn attention_algebra() -> Outcome {
    let cfg = EncoderConfig::default();
    let m = RelatednessModel::new(ModelConfig::default(), 2).unwrap();
    let mut store = m.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tables: Vec<_> = store.ids().filter(|&id| store.name(id).starts_with("enc.bias.")).collect();
    for &id in &tables {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
    }
    let embedder = FeatureEmbedder::new(m.config.embedder, "embed").unwrap();
    let mut worst_row: f64 = 0.0;
    let mut masked_mass: f64 = 0.0;
    for s in 0..20 {
        let n = 3 + s;
        let layout = random_layout(n, 100 + s as u64);
        let mut feats = layout_features(layout.elements(), &m.config.embedder);
        let pad = s % 4;
        feats.extend((0..pad).map(|_| ElementFeatures::padding(&m.config.embedder)));
        let mask: Vec<bool> = (0..n + pad).map(|j| j < n).collect();
        let mut g = Graph::new(&store);
        let x = embedder.embed(&mut g, &feats).unwrap();
        let e = g.value(x).clone();
        let bias = spatial_bias(&feats, &cfg, &store).unwrap();
        for (h, b) in bias.iter().enumerate() {
            let wq = store.get(&format!("enc.l0.h{h}.wq")).unwrap();
            let wk = store.get(&format!("enc.l0.h{h}.wk")).unwrap();
            let mut scores = attention_scores(&e, wq, wk, Some(&mask), cfg.d_k).unwrap();
            scores.add_assign(b);
            let sv = g.constant(scores);
            let p = g.row_softmax(sv, Some(&mask)).unwrap();
            let p = g.value(p);
            for i in 0..n + pad {
                let row = p.row(i);
                let sum: f64 = row.iter().sum();
                worst_row = worst_row.max((sum - 1.0).abs());
                masked_mass += row[n..].iter().map(|v| v.abs()).sum::<f64>();
            }
        }
    }

    for &id in &tables {
        store.value_mut(id).data_mut().fill(0.0);
    }
    let spatial = ContextEncoder::new(cfg).unwrap();
    let plain = ContextEncoder::new(EncoderConfig { spatial: false, ..cfg }).unwrap();
    let mut identical = true;
    for s in 0..10u64 {
        let layout = random_layout(4 + 3 * s as usize, 300 + s);
        let feats = layout_features(layout.elements(), &m.config.embedder);
        for mode in [Mode::Infer, Mode::Train { seed: s }] {
            let run = |enc: &ContextEncoder| {
                let mut g = Graph::new(&store);
                let x = embedder.embed(&mut g, &feats).unwrap();
                let h = enc.forward(&mut g, x, &feats, mode).unwrap();
                g.value(h).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            };
            identical &= run(&spatial) == run(&plain);
        }
    }
    outcome(
        worst_row <= SOFTMAX_TOL && masked_mass == 0.0 && identical,
        format!(
            "max |row sum - 1| {worst_row:.1e} (limit {SOFTMAX_TOL:.0e}), masked mass {masked_mass}, zero tables bit-identical to plain encoder: {identical}"
        ),
    )
}

fn permutation_equivariance() -> Outcome {
    let m = RelatednessModel::new(ModelConfig::default(), 4).unwrap();
    let corpus = generate_corpus(&GeneratorSpec::new(404, EQUIVARIANCE_LAYOUTS)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0usize;
    let mut entries = 0usize;
    for item in &corpus {
        let feats = layout_features(item.layout.elements(), &m.config.embedder);
        let n = feats.len();
        let perm = random_permutation(n, &mut rng);
        let shuffled: Vec<_> = perm.iter().map(|&i| feats[i].clone()).collect();
        let a = m.predict_features(&feats).unwrap();
        let b = m.predict_features(&shuffled).unwrap();
        for i in 0..n {
            for j in 0..n {
                entries += 1;
                if b.get(i, j).to_bits() != a.get(perm[i], perm[j]).to_bits() {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{EQUIVARIANCE_LAYOUTS} layouts, {mismatches} of {entries} entries differ (exact comparison)"),
    )
}

fn table_replication() -> Outcome {
    let start = Instant::now();
    let corpus = generate_corpus(&GeneratorSpec::new(CORPUS_SEED, TRAIN_LAYOUTS + TEST_LAYOUTS)).unwrap();
    let cfg = CompareConfig::default();
    let report = match compare_models(&corpus, &[0, 1, 2], &cfg, |line| eprintln!("    {line}")) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("comparison failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let spatial = report.row(ModelKind::Spatial).mean;
    let plain = report.row(ModelKind::NoSpatial).mean;
    let base = report.row(ModelKind::Baseline).mean;
    eprint!("{}", report.table());
    let split_ok = report.split.train == TRAIN_LAYOUTS && report.split.test == TEST_LAYOUTS;
    outcome(
        split_ok && spatial >= plain && plain >= base && spatial >= MIN_SPATIAL_ACCURACY && spatial - base >= MIN_BASELINE_GAP && secs < COMPARE_SECONDS,
        format!(
            "means spatial {:.4} >= no-spatial {:.4} >= baseline {:.4}; gap {:.2} points (min {}); split {}/{}; {:.0}s (limit {COMPARE_SECONDS}s)",
            spatial,
            plain,
            base,
            100.0 * (spatial - base),
            100.0 * MIN_BASELINE_GAP,
            report.split.train,
            report.split.test,
            secs
        ),
    )
}

fn mst_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut sizes = [0usize; MST_MAX_NODES + 1];
    for k in 0..MST_GROUPS {
        let layout = random_layout(rng.gen_range(2..14), 500 + k as u64);
        let g = build_graph(&layout);
        let group = random_connected_group(&g, MST_MAX_NODES, &mut rng);
        sizes[group.len()] += 1;
        if Some(internal_distance(&group, &g).unwrap()) != brute_force_int(&group, &g) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{MST_GROUPS} groups (sizes 1..=6: {:?}), {mismatches} mismatches", &sizes[1..]),
    )
}

fn hand_trace() -> Outcome {
    let layout = grid_layout(&[
        BBox::new(0.0, 0.0, 0.1, 0.1),
        BBox::new(0.11, 0.0, 0.21, 0.1),
        BBox::new(0.61, 0.0, 0.71, 0.1),
        BBox::new(0.72, 0.0, 0.82, 0.1),
    ]);
    let r = AssociationMatrix {
        n: 4,
        scores: vec![
            vec![1.0, 1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![0.0, 0.0, 1.0, 1.0],
        ],
    };
    let h = hierarchical_group(&build_graph(&layout), &r, &GroupingParams::default()).unwrap();
    let ids: Vec<Vec<Vec<String>>> = (0..h.num_levels()).map(|q| h.level_ids(q).unwrap()).collect();
    let want: Vec<Vec<Vec<String>>> = vec![
        vec![vec!["a".into()], vec!["b".into()], vec!["c".into()], vec!["d".into()]],
        vec![vec!["a".into(), "b".into()], vec!["c".into(), "d".into()]],
        vec![vec!["a".into(), "b".into(), "c".into(), "d".into()]],
    ];
    outcome(ids == want, format!("levels {ids:?}"))
}

fn laminarity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut lam, mut coarse, mut overrun, mut unrooted) = (0, 0, 0, 0);
    let mut max_iter = 0;
    for k in 0..GROUPING_RUNS {
        let n = rng.gen_range(1..64);
        let layout = random_layout(n, 7000 + k as u64);
        let params = GroupingParams {
            t_initial: rng.gen_range(0.3..1.0),
            tau_initial: rng.gen_range(0.0..0.1),
            alpha: rng.gen_range(0.5..0.99),
            beta: rng.gen_range(1.0..1.5),
            ..GroupingParams::default()
        };
        let h = hierarchical_group(&build_graph(&layout), &random_matrix(n, k as u64), &params).unwrap();
        lam += usize::from(!is_laminar(&h.levels));
        coarse += h.levels.windows(2).filter(|w| !is_coarsening(&w[0], &w[1]) || w[1].len() >= w[0].len()).count();
        overrun += usize::from(h.iterations > params.max_iterations);
        unrooted += usize::from(h.levels.last().map_or(true, |l| l.len() != 1));
        max_iter = max_iter.max(h.iterations);
    }
    outcome(
        lam == 0 && coarse == 0 && overrun == 0 && unrooted == 0,
        format!(
            "{GROUPING_RUNS} runs: {lam} laminarity, {coarse} coarsening, {overrun} iteration-limit violations, {unrooted} without a single root; most iterations {max_iter}"
        ),
    )
}

fn run_cli(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_layoutgroup"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"epochs": 2, "batch": 8}"#).unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let corpus = format!("corpus{k}");
        let ckpt = format!("m{k}.json");
        let groups = format!("g{k}.json");
        let layout = format!("{corpus}/layout_00002.json");
        let steps: Result<Vec<(String, Vec<u8>)>, String> = (|| {
            run_cli(&["generate", "--seed", "8", "--n", "40", "--out", &corpus], d)?;
            let mut files = Vec::new();
            let mut names: Vec<_> = std::fs::read_dir(d.join(&corpus)).unwrap().map(|e| e.unwrap().file_name()).collect();
            names.sort();
            let mut generated = Vec::new();
            for name in names {
                generated.extend(std::fs::read(d.join(&corpus).join(name)).unwrap());
            }
            files.push(("generate".to_string(), generated));
            let report = run_cli(&["train", "--corpus", &corpus, "--config", "cfg.json", "--seed", "3", "--out", &ckpt], d)?;
            let mut trained = std::fs::read(d.join(&ckpt)).unwrap();
            trained.extend(report);
            files.push(("train".to_string(), trained));
            files.push(("predict".to_string(), run_cli(&["predict", "--layout", &layout, "--ckpt", &ckpt], d)?));
            run_cli(&["group", "--layout", &layout, "--ckpt", &ckpt, "--out", &groups], d)?;
            files.push(("group".to_string(), std::fs::read(d.join(&groups)).unwrap()));
            Ok(files)
        })();
        match steps {
            Ok(f) => runs.push(f),
            Err(e) => return outcome(false, e),
        }
    }
    let differing: Vec<&str> = runs[0].iter().zip(&runs[1]).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0.as_str()).collect();
    outcome(
        differing.is_empty(),
        format!("generate/train/predict/group run twice; differing outputs: {differing:?}"),
    )
}

fn scale() -> Outcome {
    let m = RelatednessModel::new(ModelConfig::default(), 9).unwrap();
    let big = random_layout(SCALE_ELEMENTS, 9);
    let start = Instant::now();
    let (_, h) = group_layout(&m, &big, &GroupingParams::default()).unwrap();
    let one = start.elapsed().as_secs_f64();
    // no relatedness at all: every merge waits for the distance bar or the valve
    let zero = AssociationMatrix {
        n: SCALE_ELEMENTS,
        scores: (0..SCALE_ELEMENTS)
            .map(|i| (0..SCALE_ELEMENTS).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect(),
    };
    let start = Instant::now();
    let hz = hierarchical_group(&build_graph(&big), &zero, &GroupingParams::default()).unwrap();
    let worst = start.elapsed().as_secs_f64();

    let corpus = generate_corpus(&GeneratorSpec::new(CORPUS_SEED, TRAIN_LAYOUTS + TEST_LAYOUTS)).unwrap();
    let start = Instant::now();
    let report = evaluate(&m, "untrained", &corpus, 0.5, false).unwrap();
    for item in &corpus {
        group_layout(&m, &item.layout, &GroupingParams::default()).unwrap();
    }
    let all = start.elapsed().as_secs_f64();
    outcome(
        one < SCALE_LAYOUT_SECONDS && worst < SCALE_LAYOUT_SECONDS && all < SCALE_CORPUS_SECONDS,
        format!(
            "{SCALE_ELEMENTS} elements: predict+group {one:.3}s ({} levels), zero-relatedness grouping {worst:.3}s ({} levels); {} layouts evaluated and grouped in {all:.1}s (limits {SCALE_LAYOUT_SECONDS}s, {SCALE_CORPUS_SECONDS}s)",
            h.num_levels(),
            hz.num_levels(),
            report.layouts
        ),
    )
}

fn corpus_sanity() -> Outcome {
    let corpus = generate_corpus(&GeneratorSpec::new(CORPUS_SEED, STATS_LAYOUTS)).unwrap();
    let s = labeled_stats(&corpus).unwrap();
    let min_groups = s.min_groups.unwrap_or(0);
    outcome(
        (MEAN_ELEMENTS.0..=MEAN_ELEMENTS.1).contains(&s.mean_elements) && min_groups >= MIN_GROUPS,
        format!(
            "{STATS_LAYOUTS} layouts: mean elements {:.2} (range {:?}), fewest ground-truth groups {min_groups} (min {MIN_GROUPS}), mean groups {:.2}",
            s.mean_elements,
            MEAN_ELEMENTS,
            s.mean_groups.unwrap_or(0.0)
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("attention algebra", attention_algebra),
        ("permutation equivariance", permutation_equivariance),
        ("directional accuracy ordering", table_replication),
        ("MST oracle", mst_oracle),
        ("merge hand-trace", hand_trace),
        ("laminarity and coarsening", laminarity),
        ("CLI determinism", determinism),
        ("scale", scale),
        ("corpus statistics", corpus_sanity),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {id:>2} [{tag}] {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
