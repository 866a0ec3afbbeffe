//! Named parameter tensors with gradient slots and Adam state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    frozen: bool,
}

/// Adam hyperparameters. Weight decay is decoupled: each step first shrinks
/// the weights by `lr * weight_decay * θ`, then applies the bias-corrected
/// Adam update computed from the raw gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Gradients produced by one backward pass, indexed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Gradients {
            slots: vec![None; n],
        }
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    /// Gradient for `id`, or `None` if the loss does not reach it.
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    /// Largest absolute entry for `id` (0 when unreached).
    pub fn max_abs(&self, id: ParamId) -> f64 {
        self.get(id)
            .map_or(0.0, |g| g.iter().fold(0.0, |a, &b| a.max(b.abs())))
    }
}

/// Zeroes moment estimates that have decayed below `tiny`. Left alone they
/// sink into subnormal range, which is very slow on most CPUs; at these
/// magnitudes their contribution to the update is far below `eps`.
#[inline]
fn flush(x: f64, tiny: f64) -> f64 {
    if x.abs() < tiny {
        0.0
    } else {
        x
    }
}

/// Every learnable tensor of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a zero-initialized `rows × cols` tensor.
    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        let name = name.into();
        assert!(
            rows >= 1 && cols >= 1,
            "parameter `{name}` must be non-empty"
        );
        assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        let n = rows * cols;
        self.slots.push(Slot {
            name,
            rows,
            cols,
            value: vec![0.0; n],
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            frozen: false,
        });
        ParamId(self.slots.len() - 1)
    }

    /// Adds a tensor drawn uniformly from `±sqrt(6 / (rows + cols))`.
    pub fn glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let id = self.zeros(name, rows, cols);
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        for x in &mut self.slots[id.0].value {
            *x = rng.random_range(-limit..=limit);
        }
        id
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.find(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let s = &self.slots[id.0];
        (s.rows, s.cols)
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0].grad
    }

    /// Excludes a tensor from optimizer updates (including weight decay).
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.slots[id.0].frozen = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.slots[id.0].frozen
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale * grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (slot, g) in self.slots.iter_mut().zip(&grads.slots) {
            if let Some(g) = g {
                for (a, b) in slot.grad.iter_mut().zip(g) {
                    *a += scale * b;
                }
            }
        }
    }

    /// One bias-corrected Adam step with decoupled weight decay. Gradients
    /// are zeroed afterwards. If any gradient is non-finite nothing is
    /// modified.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(bad) = self
            .slots
            .iter()
            .find(|s| s.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFiniteGradient(bad.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - cfg.lr * cfg.weight_decay;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let step = cfg.lr / bc1;
        let inv_bc2 = 1.0 / bc2;
        for s in &mut self.slots {
            if s.frozen {
                s.grad.iter_mut().for_each(|g| *g = 0.0);
                continue;
            }
            let lanes = s
                .value
                .iter_mut()
                .zip(s.grad.iter_mut())
                .zip(s.m.iter_mut().zip(s.v.iter_mut()));
            for ((x, g), (m, v)) in lanes {
                let gi = *g;
                let mi = flush(b1 * *m + (1.0 - b1) * gi, 1e-100);
                let vi = flush(b2 * *v + (1.0 - b2) * gi * gi, 1e-200);
                *m = mi;
                *v = vi;
                *x = *x * decay - step * mi / ((vi * inv_bc2).sqrt() + cfg.eps);
                *g = 0.0;
            }
        }
        Ok(())
    }

    /// Copies all parameter values from `other`, which must have the same
    /// layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.value.copy_from_slice(&b.value);
        }
    }

    pub fn to_checkpoint(&self) -> TensorMap {
        TensorMap(
            self.slots
                .iter()
                .map(|s| {
                    (
                        s.name.clone(),
                        NamedTensor {
                            shape: [s.rows, s.cols],
                            values: s.value.clone(),
                        },
                    )
                })
                .collect(),
        )
    }

    /// Loads values for every parameter of this store from `map`. Shapes must
    /// agree; extra entries in `map` are an error.
    pub fn load_checkpoint(&mut self, map: &TensorMap) -> Result<()> {
        if map.0.len() != self.slots.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} tensors, model has {}",
                map.0.len(),
                self.slots.len()
            )));
        }
        for s in &mut self.slots {
            let t = map
                .0
                .get(&s.name)
                .ok_or_else(|| Error::UnknownParam(s.name.clone()))?;
            if t.shape != [s.rows, s.cols] || t.values.len() != s.value.len() {
                return Err(Error::DimMismatch(format!(
                    "checkpoint tensor `{}` has shape {:?}, expected [{}, {}]",
                    s.name, t.shape, s.rows, s.cols
                )));
            }
            s.value.copy_from_slice(&t.values);
        }
        Ok(())
    }
}

/// One tensor in a checkpoint: shape `[rows, cols]` and row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Checkpoint payload: parameter name → tensor, sorted by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorMap(pub BTreeMap<String, NamedTensor>);

impl TensorMap {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
