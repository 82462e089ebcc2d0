//! Bottom-up hierarchical grouping over a proximity graph, gated by
//! relatedness scores and an annealed distance bar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::model::PairModel;
use crate::proximity::{build_graph, internal_distance, mid, Edge, Group, ProximityGraph};
use crate::relatedness::AssociationMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingParams {
    #[serde(rename = "T_initial")]
    pub t_initial: f64,
    pub tau_initial: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_max_iterations", skip_serializing)]
    pub max_iterations: usize,
    /// Below this relatedness threshold every pair counts as related.
    #[serde(default = "default_t_floor", skip_serializing)]
    pub t_floor: f64,
}

fn default_max_iterations() -> usize {
    500
}

fn default_t_floor() -> f64 {
    1e-3
}

impl Default for GroupingParams {
    fn default() -> Self {
        GroupingParams {
            t_initial: 0.9,
            tau_initial: 0.02,
            alpha: 0.9,
            beta: 1.1,
            max_iterations: default_max_iterations(),
            t_floor: default_t_floor(),
        }
    }
}

impl GroupingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta > 1.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha < 1 < beta, got alpha {} beta {}",
                self.alpha, self.beta
            )));
        }
        if !(self.t_initial > 0.0 && self.t_initial <= 1.0) {
            return Err(Error::Config(format!("T_initial {} outside (0, 1]", self.t_initial)));
        }
        if !(self.tau_initial > 0.0 && self.tau_initial.is_finite()) {
            return Err(Error::Config(format!("tau_initial {} must be positive", self.tau_initial)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Relatedness threshold after `t` iterations.
    pub fn threshold_at(&self, t: usize) -> f64 {
        self.t_initial * self.alpha.powi(t as i32)
    }

    /// Distance relaxation after `t` iterations.
    pub fn tau_at(&self, t: usize) -> f64 {
        self.tau_initial * self.beta.powi(t as i32)
    }
}

/// A partition of element indices: members ascending, groups ordered by
/// their smallest member.
pub type Partition = Vec<Vec<usize>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    /// 1-based iteration of the pass that performed the merge.
    pub iteration: usize,
    /// Index of the level the merge first appears in.
    pub level: usize,
    pub a: usize,
    pub b: usize,
    pub weight: f64,
    pub relatedness: f64,
    /// Merged only because the threshold had decayed below the floor.
    pub forced: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupingHierarchy {
    pub ids: Vec<String>,
    pub levels: Vec<Partition>,
    pub merges: Vec<MergeRecord>,
    pub params: GroupingParams,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct HierarchyDoc {
    levels: Vec<Vec<Vec<String>>>,
    params: GroupingParams,
}

impl GroupingHierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, q: usize) -> Result<&Partition> {
        self.levels.get(q).ok_or(Error::OutOfRange {
            index: q,
            len: self.levels.len(),
        })
    }

    /// Partition at level `q` as element ids.
    pub fn level_ids(&self, q: usize) -> Result<Vec<Vec<String>>> {
        Ok(self
            .level(q)?
            .iter()
            .map(|g| g.iter().map(|&i| self.ids[i].clone()).collect())
            .collect())
    }

    /// Keeps the finest level and the `k - 1` coarsest ones.
    pub fn truncate(&self, k: usize) -> Result<GroupingHierarchy> {
        let l = self.levels.len();
        if k == 0 || k > l {
            return Err(Error::OutOfRange { index: k, len: l });
        }
        let mut levels = vec![self.levels[0].clone()];
        levels.extend(self.levels[l - (k - 1)..].iter().cloned());
        let kept: Vec<usize> = std::iter::once(0).chain(l - (k - 1)..l).collect();
        let merges = self
            .merges
            .iter()
            .map(|m| {
                let level = kept.iter().position(|&q| q >= m.level).unwrap_or(kept.len() - 1);
                MergeRecord { level, ..*m }
            })
            .collect();
        Ok(GroupingHierarchy {
            ids: self.ids.clone(),
            levels,
            merges,
            params: self.params,
            iterations: self.iterations,
        })
    }

    pub fn to_json(&self) -> String {
        let doc = HierarchyDoc {
            levels: (0..self.levels.len()).map(|q| self.level_ids(q).expect("in range")).collect(),
            params: self.params,
        };
        serde_json::to_string(&doc).expect("serializable")
    }

    /// Reads the `{levels, params}` document; ids must belong to `ids`.
    pub fn from_json(s: &str, ids: &[String]) -> Result<GroupingHierarchy> {
        let doc: HierarchyDoc = serde_json::from_str(s)?;
        let index: std::collections::HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut levels = Vec::with_capacity(doc.levels.len());
        for level in &doc.levels {
            let mut part: Partition = Vec::with_capacity(level.len());
            for g in level {
                let mut members = Vec::with_capacity(g.len());
                for id in g {
                    members.push(
                        *index
                            .get(id.as_str())
                            .ok_or_else(|| Error::InvalidInput(format!("unknown element {id:?} in grouping")))?,
                    );
                }
                part.push(members);
            }
            levels.push(canonical(part));
        }
        if levels.is_empty() {
            return Err(Error::InvalidInput("grouping has no levels".into()));
        }
        Ok(GroupingHierarchy {
            ids: ids.to_vec(),
            levels,
            merges: Vec::new(),
            params: doc.params,
            iterations: 0,
        })
    }
}

fn canonical(mut part: Partition) -> Partition {
    for g in part.iter_mut() {
        g.sort_unstable();
    }
    part.sort_by_key(|g| g.first().copied());
    part
}

/// True when every two groups, across all levels, are disjoint or nested.
pub fn is_laminar(levels: &[Partition]) -> bool {
    let sets: Vec<&Vec<usize>> = levels.iter().flatten().collect();
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            let inter = a.iter().filter(|x| b.binary_search(x).is_ok()).count();
            if inter != 0 && inter != a.len() && inter != b.len() {
                return false;
            }
        }
    }
    true
}

/// True when every block of `coarse` is a union of blocks of `fine`.
pub fn is_coarsening(fine: &Partition, coarse: &Partition) -> bool {
    let n: usize = fine.iter().map(Vec::len).sum();
    let mut owner = vec![usize::MAX; n];
    for (k, g) in coarse.iter().enumerate() {
        for &m in g {
            if m >= n {
                return false;
            }
            owner[m] = k;
        }
    }
    fine.iter().all(|g| g.iter().all(|&m| owner[m] == owner[g[0]] && owner[m] != usize::MAX))
}

struct State {
    parent: Vec<usize>,
    groups: Vec<Option<Group>>,
    count: usize,
}

impl State {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn partition(&mut self) -> Partition {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = self.find(i);
            by_root[r].push(i);
        }
        canonical(by_root.into_iter().filter(|g| !g.is_empty()).collect())
    }
}

/// Runs the iterative merge and returns every strictly coarser level.
pub fn hierarchical_group(
    graph: &ProximityGraph,
    r: &AssociationMatrix,
    params: &GroupingParams,
) -> Result<GroupingHierarchy> {
    params.validate()?;
    let n = graph.len();
    if r.n != n {
        return Err(Error::ElementMismatch { matrix: r.n, graph: n });
    }
    if !graph.is_connected() {
        return Err(Error::DisconnectedGraph);
    }
    let mut edges: Vec<Edge> = graph.edges.clone();
    edges.sort_by(|x, y| x.weight.total_cmp(&y.weight).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));

    let mut st = State {
        parent: (0..n).collect(),
        groups: (0..n).map(|i| Some(Group::singleton(i, graph))).collect(),
        count: n,
    };
    let mut levels = vec![st.partition()];
    let mut merges: Vec<MergeRecord> = Vec::new();
    let mut t = 0usize;
    while st.count > 1 && t < params.max_iterations {
        let threshold = params.threshold_at(t);
        let tau = params.tau_at(t);
        let valve = threshold < params.t_floor;
        let before = st.count;
        for e in &edges {
            let (ra, rb) = (st.find(e.a), st.find(e.b));
            if ra == rb {
                continue;
            }
            let rel = r.get(e.a, e.b);
            let c1 = rel >= threshold || valve;
            if !c1 {
                continue;
            }
            let (ga, gb) = (st.groups[ra].as_ref().expect("root"), st.groups[rb].as_ref().expect("root"));
            if e.weight > mid(ga, gb, tau) {
                continue;
            }
            let ga = st.groups[ra].take().expect("root");
            let gb = st.groups[rb].take().expect("root");
            let (keep, gone) = (ra.min(rb), ra.max(rb));
            st.parent[gone] = keep;
            let mut members = ga.members;
            members.extend(gb.members);
            members.sort_unstable();
            let int = internal_distance(&members, graph)?;
            st.groups[keep] = Some(Group {
                members,
                int,
                bbox: ga.bbox.union(&gb.bbox),
            });
            st.count -= 1;
            merges.push(MergeRecord {
                iteration: t + 1,
                level: levels.len(),
                a: e.a,
                b: e.b,
                weight: e.weight,
                relatedness: rel,
                forced: rel < threshold,
            });
        }
        t += 1;
        if st.count < before {
            levels.push(st.partition());
        }
    }
    Ok(GroupingHierarchy {
        ids: graph.ids.clone(),
        levels,
        merges,
        params: *params,
        iterations: t,
    })
}

/// Predicts relatedness for `layout` with `model`, builds the proximity graph
/// and runs the merge.
pub fn group_layout<M: PairModel>(
    model: &M,
    layout: &Layout,
    params: &GroupingParams,
) -> Result<(AssociationMatrix, GroupingHierarchy)> {
    let r = model.predict(layout)?;
    let graph = build_graph(layout);
    let h = hierarchical_group(&graph, &r, params)?;
    Ok((r, h))
}
