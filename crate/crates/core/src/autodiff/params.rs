use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
    frozen: bool,
    lr_scale: f64,
}

/// Named learnable tensors with their gradient slots and Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, ParamId>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        if let Some(&id) = self.by_name.get(&name) {
            let e = &mut self.entries[id.0];
            e.grad = Tensor::zeros(value.rows(), value.cols());
            e.m = e.grad.clone();
            e.v = e.grad.clone();
            e.value = value;
            return id;
        }
        let (r, c) = value.shape();
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.clone(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            frozen: false,
            lr_scale: 1.0,
        });
        self.by_name.insert(name, id);
        id
    }

    /// Glorot-uniform initialized `rows x cols` matrix.
    pub fn insert_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        self.insert(name, Tensor::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn insert_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    /// Frozen parameters keep their value through [`adam_step`](Self::adam_step).
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Multiplier on the learning rate for one parameter.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.entries[id.0].lr_scale = scale;
    }

    pub fn lr_scale(&self, id: ParamId) -> f64 {
        self.entries[id.0].lr_scale
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Adds a backward pass's gradients into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (e, g) in self.entries.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                e.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// One bias-corrected Adam update followed by clearing the gradients.
    /// Nothing is modified when any gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| !e.grad.is_finite()) {
            return Err(Error::NonFiniteGradient(e.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in &mut self.entries {
            if e.frozen {
                continue;
            }
            let g = e.grad.data();
            let m = e.m.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = e.v.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let lr = cfg.lr * e.lr_scale;
            let (m, v) = (e.m.data(), e.v.data());
            for ((w, mi), vi) in e.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        self.zero_grad();
        Ok(())
    }

    pub fn to_checkpoint(&self, seed: u64, include_moments: bool) -> StoreCheckpoint {
        let mut params = BTreeMap::new();
        let mut moments = BTreeMap::new();
        for e in &self.entries {
            params.insert(e.name.clone(), StoredTensor::from(&e.value));
            if include_moments {
                moments.insert(
                    e.name.clone(),
                    StoredMoments {
                        m: e.m.data().to_vec(),
                        v: e.v.data().to_vec(),
                    },
                );
            }
        }
        StoreCheckpoint {
            format_version: CHECKPOINT_VERSION,
            seed,
            step: self.step,
            params,
            moments,
        }
    }

    pub fn from_checkpoint(ck: &StoreCheckpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        let mut store = ParameterStore::new();
        for (name, t) in &ck.params {
            let value = Tensor::from_vec(t.shape[0], t.shape[1], t.data.clone())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            let id = store.insert(name.clone(), value);
            if let Some(mo) = ck.moments.get(name) {
                let (r, c) = (t.shape[0], t.shape[1]);
                let e = &mut store.entries[id.0];
                e.m = Tensor::from_vec(r, c, mo.m.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
                e.v = Tensor::from_vec(r, c, mo.v.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
            }
        }
        store.step = ck.step;
        Ok(store)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl From<&Tensor> for StoredTensor {
    fn from(t: &Tensor) -> Self {
        StoredTensor {
            shape: [t.rows(), t.cols()],
            data: t.data().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Serialized [`ParameterStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreCheckpoint {
    pub format_version: u32,
    pub seed: u64,
    pub step: u64,
    pub params: BTreeMap<String, StoredTensor>,
    #[serde(default)]
    pub moments: BTreeMap<String, StoredMoments>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::SeedableRng;

    fn store_with(values: &[f64]) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.insert("theta", Tensor::from_vec(1, values.len(), values.to_vec()).unwrap());
        (s, id)
    }

    fn half_sq_norm_grad(s: &mut ParameterStore, id: ParamId) {
        let grads = {
            let mut g = Graph::new(s);
            let th = g.param(id);
            let n = g.shape(th);
            let flat = g.reshape(th, 1, n.0 * n.1).unwrap();
            let sq = g.matmul_t(flat, flat).unwrap();
            let loss = g.scale(sq, 0.5);
            g.backward(loss).unwrap()
        };
        s.accumulate(&grads);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut s, id) = store_with(&[1.0, -2.0, 0.5]);
        let g = Tensor::from_vec(1, 3, vec![0.3, -4.0, 1e-3]).unwrap();
        s.entries[id.0].grad = g;
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        s.adam_step(&cfg).unwrap();
        let after = s.value(id).data();
        let deltas = [after[0] - 1.0, after[1] + 2.0, after[2] - 0.5];
        assert!((deltas[0] + 0.01).abs() < 1e-6);
        assert!((deltas[1] - 0.01).abs() < 1e-6);
        assert!((deltas[2] + 0.01).abs() < 1e-4);
        assert!(s.grad(id).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = store_with(&[1.0, 2.0]);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value(id).data(), &[1.0, 2.0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let (mut s, id) = store_with(&[1.0, 2.0]);
        s.entries[id.0].grad = Tensor::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(s.adam_step(&AdamConfig::default()), Err(Error::NonFiniteGradient(_))));
        assert_eq!(s.value(id).data(), &[1.0, 2.0]);
        assert_eq!(s.step(), 0);
    }

    /// Scalar simulation of Adam on f(x) = x^2/2, run independently of the store.
    fn simulate_norms(theta0: &[f64], lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut th = theta0.to_vec();
        let mut m = vec![0.0; th.len()];
        let mut v = vec![0.0; th.len()];
        let mut norms = Vec::new();
        for t in 1..=steps {
            for i in 0..th.len() {
                let g = th[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / (1.0 - b1.powi(t as i32));
                let vh = v[i] / (1.0 - b2.powi(t as i32));
                th[i] -= lr * mh / (vh.sqrt() + eps);
            }
            norms.push(th.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        norms
    }

    #[test]
    fn quadratic_bowl_norm_decreases() {
        let theta0 = [0.8, -0.6, 1.5, 0.3];
        let oracle = simulate_norms(&theta0, 0.01, 100);
        // Warm-up: the oracle's norm is strictly decreasing from here on.
        let warmup = 5;
        assert!(oracle[warmup..].windows(2).all(|w| w[1] < w[0]));

        let (mut s, id) = store_with(&theta0);
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut norms = Vec::new();
        for _ in 0..100 {
            half_sq_norm_grad(&mut s, id);
            s.adam_step(&cfg).unwrap();
            norms.push(s.value(id).data().iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        for (a, b) in norms.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(norms[warmup..].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (mut s, id) = store_with(&[1.0]);
        s.set_frozen(id, true);
        half_sq_norm_grad(&mut s, id);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value(id).data(), &[1.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParameterStore::new();
        let a = s.insert_glorot("a", 3, 4, &mut rng);
        s.insert_normal("b", 1, 4, 0.1, &mut rng);
        half_sq_norm_grad(&mut s, a);
        s.adam_step(&AdamConfig::default()).unwrap();
        let ck = s.to_checkpoint(3, true);
        let text = serde_json::to_string(&ck).unwrap();
        let back: StoreCheckpoint = serde_json::from_str(&text).unwrap();
        let restored = ParameterStore::from_checkpoint(&back).unwrap();
        assert_eq!(restored.step(), 1);
        for name in s.names() {
            assert_eq!(restored.get(name), s.get(name));
        }
        let mut wrong = back;
        wrong.format_version = 99;
        assert!(ParameterStore::from_checkpoint(&wrong).is_err());
    }
}
