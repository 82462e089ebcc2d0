//! Neighborhood graph over a layout's elements with bounding-box gap weights.

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::layout::{BBox, Layout};

/// Areas below this are treated as this when dividing by a group's size.
pub const MIN_GROUP_AREA: f64 = 1e-4;

/// Euclidean gap between two axis-aligned boxes; zero when they touch or overlap.
pub fn distance(a: &BBox, b: &BBox) -> f64 {
    let dx = (a.x1.max(b.x1) - a.x2.min(b.x2)).max(0.0);
    let dy = (a.y1.max(b.y1) - a.y2.min(b.y2)).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// How neighbors are chosen before nearest-neighbor augmentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    #[default]
    Delaunay,
    /// Each element linked to its `k` nearest by box gap.
    Knn(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProximityGraph {
    pub ids: Vec<String>,
    pub boxes: Vec<BBox>,
    /// Sorted by `(a, b)` with `a < b`; no duplicates.
    pub edges: Vec<Edge>,
}

#[derive(Serialize)]
struct EdgeDump<'a> {
    a: &'a str,
    b: &'a str,
    weight: f64,
}

impl ProximityGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.is_empty() {
            return true;
        }
        let adj = self.neighbors();
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Edge list `[{a, b, weight}]` keyed by element id.
    pub fn edges_json(&self) -> String {
        let dump: Vec<EdgeDump> = self
            .edges
            .iter()
            .map(|e| EdgeDump {
                a: &self.ids[e.a],
                b: &self.ids[e.b],
                weight: e.weight,
            })
            .collect();
        serde_json::to_string(&dump).expect("serializable")
    }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn edge_order(x: &Edge, y: &Edge) -> std::cmp::Ordering {
    x.weight.total_cmp(&y.weight).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b))
}

fn delaunay_pairs(boxes: &[BBox]) -> Vec<(usize, usize)> {
    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    // several elements may share a center; they share a vertex
    let mut at_vertex: Vec<Vec<usize>> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        let (cx, cy) = b.center();
        let Ok(h) = tri.insert(Point2::new(cx, cy)) else {
            continue;
        };
        let v = h.index();
        if at_vertex.len() <= v {
            at_vertex.resize(v + 1, Vec::new());
        }
        at_vertex[v].push(i);
    }
    let mut pairs = Vec::new();
    for members in &at_vertex {
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                pairs.push((a, b));
            }
        }
    }
    for e in tri.undirected_edges() {
        let [u, v] = e.vertices();
        for &a in &at_vertex[u.fix().index()] {
            for &b in &at_vertex[v.fix().index()] {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

fn nearest(boxes: &[BBox], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..boxes.len())
        .filter(|&j| j != i)
        .map(|j| (distance(&boxes[i], &boxes[j]), j))
        .collect();
    others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Builds the neighborhood graph, always connected.
pub fn build_graph_with(layout: &Layout, hood: Neighborhood) -> ProximityGraph {
    let boxes: Vec<BBox> = layout.elements().iter().map(|e| e.bbox).collect();
    let ids: Vec<String> = layout.elements().iter().map(|e| e.id.clone()).collect();
    let n = boxes.len();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    if n <= 3 {
        for a in 0..n {
            for b in a + 1..n {
                pairs.push((a, b));
            }
        }
    } else {
        match hood {
            Neighborhood::Delaunay => pairs.extend(delaunay_pairs(&boxes)),
            Neighborhood::Knn(k) => {
                for i in 0..n {
                    pairs.extend(nearest(&boxes, i, k).into_iter().map(|j| (i, j)));
                }
            }
        }
        for i in 0..n {
            pairs.extend(nearest(&boxes, i, 1).into_iter().map(|j| (i, j)));
        }
    }
    let mut edges: Vec<Edge> = pairs
        .into_iter()
        .filter(|(a, b)| a != b)
        .map(|(a, b)| {
            let (a, b) = (a.min(b), a.max(b));
            Edge {
                a,
                b,
                weight: distance(&boxes[a], &boxes[b]),
            }
        })
        .collect();
    edges.sort_by(|x, y| x.a.cmp(&y.a).then(x.b.cmp(&y.b)));
    edges.dedup_by(|x, y| x.a == y.a && x.b == y.b);

    // join any leftover components by their shortest connecting gap
    let mut dsu = Dsu::new(n);
    for e in &edges {
        dsu.union(e.a, e.b);
    }
    let mut extra = Vec::new();
    let mut candidates: Vec<Edge> = Vec::new();
    if (1..n).any(|i| dsu.find(i) != dsu.find(0)) {
        for a in 0..n {
            for b in a + 1..n {
                if dsu.find(a) != dsu.find(b) {
                    candidates.push(Edge {
                        a,
                        b,
                        weight: distance(&boxes[a], &boxes[b]),
                    });
                }
            }
        }
        candidates.sort_by(edge_order);
        for e in candidates {
            if dsu.union(e.a, e.b) {
                extra.push(e);
            }
        }
    }
    edges.extend(extra);
    edges.sort_by(|x, y| x.a.cmp(&y.a).then(x.b.cmp(&y.b)));
    ProximityGraph { ids, boxes, edges }
}

pub fn build_graph(layout: &Layout) -> ProximityGraph {
    build_graph_with(layout, Neighborhood::Delaunay)
}

/// Largest edge weight on a minimum spanning tree of the subgraph induced by
/// `members`; zero for a singleton.
pub fn internal_distance(members: &[usize], graph: &ProximityGraph) -> Result<f64> {
    if members.len() <= 1 {
        return Ok(0.0);
    }
    let n = graph.len();
    let mut local = vec![usize::MAX; n];
    for (k, &m) in members.iter().enumerate() {
        if m >= n {
            return Err(Error::OutOfRange { index: m, len: n });
        }
        local[m] = k;
    }
    let mut inner: Vec<Edge> = graph
        .edges
        .iter()
        .filter(|e| local[e.a] != usize::MAX && local[e.b] != usize::MAX)
        .copied()
        .collect();
    inner.sort_by(edge_order);
    let mut dsu = Dsu::new(members.len());
    let mut joined = 1;
    let mut max_w = 0.0f64;
    for e in inner {
        if dsu.union(local[e.a], local[e.b]) {
            max_w = max_w.max(e.weight);
            joined += 1;
            if joined == members.len() {
                return Ok(max_w);
            }
        }
    }
    Err(Error::DisconnectedGraph)
}

/// Union bounding-box area of `members`, floored at [`MIN_GROUP_AREA`].
pub fn group_size(members: &[usize], graph: &ProximityGraph) -> f64 {
    group_bbox(members, graph).map_or(MIN_GROUP_AREA, |b| b.area().max(MIN_GROUP_AREA))
}

pub fn group_bbox(members: &[usize], graph: &ProximityGraph) -> Option<BBox> {
    members.iter().map(|&m| graph.boxes[m]).reduce(|a, b| a.union(&b))
}

/// A set of elements with its cached internal distance and extent.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub members: Vec<usize>,
    pub int: f64,
    pub bbox: BBox,
}

impl Group {
    pub fn singleton(i: usize, graph: &ProximityGraph) -> Group {
        Group {
            members: vec![i],
            int: 0.0,
            bbox: graph.boxes[i],
        }
    }

    pub fn size(&self) -> f64 {
        self.bbox.area().max(MIN_GROUP_AREA)
    }
}

/// Minimal internal distance: `min(Int(a) + tau/size(a), Int(b) + tau/size(b))`.
pub fn mid(a: &Group, b: &Group, tau: f64) -> f64 {
    (a.int + tau / a.size()).min(b.int + tau / b.size())
}
