#![allow(dead_code)]

use layoutgroup_core::layout::{BBox, Canvas, ElementType, Layout, VisualElement};
use layoutgroup_core::proximity::ProximityGraph;
use layoutgroup_core::relatedness::AssociationMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random layout of `n` boxes; some share centers or overlap.
pub fn random_layout(n: usize, seed: u64) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    for _ in 0..n {
        let b = if !boxes.is_empty() && rng.gen_bool(0.1) {
            boxes[rng.gen_range(0..boxes.len())]
        } else {
            let w = rng.gen_range(0.005..0.3);
            let h = rng.gen_range(0.005..0.3);
            let x = rng.gen_range(0.0..1.0 - w);
            let y = rng.gen_range(0.0..1.0 - h);
            BBox::new(x, y, x + w, y + h)
        };
        boxes.push(b);
    }
    let mut ranks: Vec<u32> = (0..n as u32).collect();
    ranks.shuffle(&mut rng);
    let els = boxes
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            let t = ElementType::ALL[rng.gen_range(0..ElementType::ALL.len())];
            let rot = if rng.gen_bool(0.2) { rng.gen_range(0.0..360.0) } else { 0.0 };
            VisualElement::new(format!("e{i}"), t, ranks[i], b, rot, None).unwrap()
        })
        .collect();
    Layout::new(format!("rand_{seed}"), Canvas { width: 1.0, height: 1.0 }, els).unwrap()
}

/// Symmetric random scores in `[0, 1]` with a unit diagonal.
pub fn random_matrix(n: usize, seed: u64) -> AssociationMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = if rng.gen_bool(0.3) { rng.gen_range(0.8..1.0) } else { rng.gen_range(0.0..1.0) };
            scores[i][j] = v;
            scores[j][i] = v;
        }
    }
    AssociationMatrix { n, scores }
}

pub fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Largest edge of the minimum spanning tree of the subgraph induced by
/// `members`, by enumerating every spanning tree. The MST minimizes the
/// largest edge among all spanning trees, so no weight sums are involved.
pub fn brute_force_int(members: &[usize], graph: &ProximityGraph) -> Option<f64> {
    let k = members.len();
    if k == 1 {
        return Some(0.0);
    }
    let local = |v: usize| members.iter().position(|&m| m == v);
    let edges: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .filter_map(|e| Some((local(e.a)?, local(e.b)?, e.weight)))
        .collect();
    let mut best: Option<f64> = None;
    let mut pick = Vec::with_capacity(k - 1);
    choose(&edges, 0, k - 1, &mut pick, &mut |tree| {
        let mut comp: Vec<usize> = (0..k).collect();
        for &(a, b, _) in tree {
            let (ca, cb) = (comp[a], comp[b]);
            if ca == cb {
                return;
            }
            for c in comp.iter_mut() {
                if *c == cb {
                    *c = ca;
                }
            }
        }
        let top = tree.iter().map(|e| e.2).fold(0.0, f64::max);
        best = Some(best.map_or(top, |b: f64| b.min(top)));
    });
    best
}

fn choose<'a>(
    edges: &'a [(usize, usize, f64)],
    from: usize,
    left: usize,
    pick: &mut Vec<(usize, usize, f64)>,
    visit: &mut dyn FnMut(&[(usize, usize, f64)]),
) {
    if left == 0 {
        visit(pick);
        return;
    }
    for i in from..edges.len() {
        if edges.len() - i < left {
            break;
        }
        pick.push(edges[i]);
        choose(edges, i + 1, left - 1, pick, visit);
        pick.pop();
    }
}

/// A random subset of at most `max` nodes that is connected in `graph`.
pub fn random_connected_group(graph: &ProximityGraph, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let adj = graph.neighbors();
    let target = rng.gen_range(1..=max.min(graph.len()));
    let mut group = vec![rng.gen_range(0..graph.len())];
    while group.len() < target {
        let frontier: Vec<usize> = group
            .iter()
            .flat_map(|&v| adj[v].iter().copied())
            .filter(|v| !group.contains(v))
            .collect();
        if frontier.is_empty() {
            break;
        }
        group.push(frontier[rng.gen_range(0..frontier.len())]);
    }
    group.sort_unstable();
    group
}
