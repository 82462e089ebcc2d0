//! Pairwise relatedness head, the symmetric association matrix and the
//! training losses.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// Independent logistic score per ordered pair.
    #[default]
    SigmoidPairwise,
    /// Row softmax over the query-memory logits.
    SoftmaxPaper,
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid-pairwise" | "sigmoid" => Ok(HeadMode::SigmoidPairwise),
            "softmax-paper" | "softmax" => Ok(HeadMode::SoftmaxPaper),
            other => Err(Error::Config(format!("unknown head mode {other:?}"))),
        }
    }
}

/// Symmetric relatedness scores in `[0, 1]` with a unit diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub n: usize,
    pub scores: Vec<Vec<f64>>,
}

impl AssociationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i][j]
    }

    /// Checks range, symmetry and the diagonal.
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.n || self.scores.iter().any(|r| r.len() != self.n) {
            return Err(Error::InvalidInput(format!("association matrix is not {0}x{0}", self.n)));
        }
        for i in 0..self.n {
            if self.scores[i][i] != 1.0 {
                return Err(Error::InvalidInput(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..self.n {
                let v = self.scores[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!("score ({i},{j}) = {v} outside [0,1]")));
                }
                if v != self.scores[j][i] {
                    return Err(Error::InvalidInput(format!("scores ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(())
    }

    /// Reorders rows and columns: entry `(a, b)` of the result is entry
    /// `(perm[a], perm[b])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> AssociationMatrix {
        AssociationMatrix {
            n: self.n,
            scores: perm
                .iter()
                .map(|&pa| perm.iter().map(|&pb| self.scores[pa][pb]).collect())
                .collect(),
        }
    }
}

/// `(r_ij + r_ji) / 2` off the diagonal, 1 on it.
pub fn symmetrize(r: &Tensor) -> AssociationMatrix {
    let n = r.rows();
    let mut scores = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = ((r.get(i, j) + r.get(j, i)) / 2.0).clamp(0.0, 1.0);
            scores[i][j] = v;
            scores[j][i] = v;
        }
    }
    AssociationMatrix { n, scores }
}

/// Query-memory projections `W_Q^r`, `W_M^r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelatednessHead {
    pub mode: HeadMode,
    pub d_model: usize,
}

impl RelatednessHead {
    /// Normal init with std `d^-3/4`, so logits of unit-variance inputs start
    /// with unit variance instead of growing with `d`.
    pub fn init_params(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
        let std = (self.d_model as f64).powf(-0.75);
        store.insert_normal("head.wq", self.d_model, self.d_model, std, rng);
        store.insert_normal("head.wm", self.d_model, self.d_model, std, rng);
    }

    /// Unnormalized `n x n` logits `(h_i W_Q)(h_j W_M)^T`.
    pub fn logits(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let wq = g.named("head.wq")?;
        let wm = g.named("head.wm")?;
        let q = g.matmul(h, wq)?;
        let m = g.matmul(h, wm)?;
        g.matmul_t(q, m)
    }

    /// Scores `r` from logits, according to the head mode.
    pub fn scores(&self, g: &mut Graph, logits: Var) -> Result<Var> {
        match self.mode {
            HeadMode::SigmoidPairwise => Ok(g.sigmoid(logits)),
            HeadMode::SoftmaxPaper => g.row_softmax(logits, None),
        }
    }

    pub fn pairwise_scores(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let l = self.logits(g, h)?;
        self.scores(g, l)
    }

    /// Training loss from the logits against the 0/1 truth matrix. Positive
    /// pairs are weighted by `pos_weight` in sigmoid mode.
    pub fn loss(&self, g: &mut Graph, logits: Var, truth: &Tensor, pos_weight: f64) -> Result<Var> {
        let n = truth.rows();
        if g.shape(logits) != (n, n) || truth.cols() != n {
            return Err(Error::ShapeMismatch {
                op: "relatedness loss",
                detail: format!("logits {:?}, truth {:?}", g.shape(logits), truth.shape()),
            });
        }
        if !g.value(logits).is_finite() {
            return Err(Error::NonFinite("relatedness logits"));
        }
        match self.mode {
            HeadMode::SigmoidPairwise => sigmoid_pair_loss(g, logits, truth, pos_weight),
            HeadMode::SoftmaxPaper => g.cross_entropy(logits, row_targets(truth), vec![1.0; n]),
        }
    }
}

/// Weighted BCE of the symmetrized sigmoid scores over unordered pairs
/// `i < j`, taken straight from the logits.
pub fn sigmoid_pair_loss(g: &mut Graph, logits: Var, truth: &Tensor, pos_weight: f64) -> Result<Var> {
    let n = truth.rows();
    if n < 2 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let mut w = Tensor::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            w.set(i, j, if truth.get(i, j) > 0.5 { pos_weight } else { 1.0 });
        }
    }
    g.pair_bce_logits(logits, truth.clone(), w)
}

/// Row-normalized off-diagonal truth; rows without partners target themselves.
pub fn row_targets(truth: &Tensor) -> Tensor {
    let n = truth.rows();
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        let count = (0..n).filter(|&j| j != i && truth.get(i, j) > 0.5).count();
        if count == 0 {
            t.set(i, i, 1.0);
        } else {
            for j in 0..n {
                if j != i && truth.get(i, j) > 0.5 {
                    t.set(i, j, 1.0 / count as f64);
                }
            }
        }
    }
    t
}

/// Negative-to-positive ratio over unordered off-diagonal pairs, capped.
pub fn positive_weight<'a>(truths: impl IntoIterator<Item = &'a Tensor>, cap: f64) -> f64 {
    let (mut pos, mut neg) = (0usize, 0usize);
    for t in truths {
        for i in 0..t.rows() {
            for j in (i + 1)..t.rows() {
                if t.get(i, j) > 0.5 {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
    }
    if pos == 0 {
        return 1.0;
    }
    (neg as f64 / pos as f64).clamp(1.0, cap)
}
