//! Named parameter storage and the Adam optimizer.
//!
//! Parameters flagged `sparse` are embedding tables: Adam updates them
//! row-lazily, skipping rows whose gradient is entirely zero, so an
//! incremental step touches exactly the gathered rows. Everything else is
//! dense and updated in full. Dense/sparse classification is also encoded
//! in the name: sparse tables end in `_table`.

use std::collections::HashMap;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{CecdrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    pub sparse: bool,
}

/// Suffix convention used to recognize sparse tables in checkpoints.
pub const SPARSE_SUFFIX: &str = "_table";

#[derive(Default)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor, sparse: bool) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "parameter '{name}' registered twice"
        );
        assert_eq!(
            sparse,
            name.ends_with(SPARSE_SUFFIX),
            "sparse flag must agree with the {SPARSE_SUFFIX} naming convention for '{name}'"
        );
        let id = ParamId(self.params.len());
        self.index.insert(name.to_string(), id.0);
        self.params.push(Param { name: name.to_string(), value, grad: None, sparse });
        id
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| CecdrError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_sparse(&self, id: ParamId) -> bool {
        self.params[id.0].sparse
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Copy the parameter into a graph as a trainable leaf.
    pub fn leaf(&self, graph: &mut Graph, id: ParamId) -> Var {
        graph.leaf(self.params[id.0].value.clone(), true)
    }

    /// Pull the gradient computed for `var` back onto the parameter,
    /// accumulating if one is already present.
    pub fn absorb_grad(&mut self, graph: &Graph, id: ParamId, var: Var) {
        if let Some(g) = graph.grad(var) {
            match &mut self.params[id.0].grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                slot => *slot = Some(g.to_vec()),
            }
        }
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Snapshot all parameters as (name, tensor) pairs in registration order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Replace values from a snapshot; every name must resolve and shapes
    /// must match.
    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in snapshot {
            let id = self.id(name)?;
            if self.params[id.0].value.shape() != tensor.shape() {
                return Err(CecdrError::ShapeMismatch {
                    op: "restore",
                    detail: format!(
                        "parameter '{name}': stored {:?}, expected {:?}",
                        tensor.shape(),
                        self.params[id.0].value.shape()
                    ),
                });
            }
            self.params[id.0].value = tensor.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

struct Slot {
    id: ParamId,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam over a fixed subset of a store's parameters.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParameterStore, ids: &[ParamId]) -> Self {
        let slots = ids
            .iter()
            .map(|&id| {
                let n = store.value(id).len();
                Slot { id, m: vec![0.0; n], v: vec![0.0; n] }
            })
            .collect();
        Adam { cfg, step: 0, slots }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over the registered subset. Every registered
    /// parameter must carry a gradient; grads are cleared afterwards.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        for slot in &self.slots {
            if store.grad(slot.id).is_none() {
                return Err(CecdrError::MissingGrad(store.name(slot.id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for slot in &mut self.slots {
            let sparse = store.is_sparse(slot.id);
            let cols = store.value(slot.id).cols();
            let grad = store.grad(slot.id).unwrap().to_vec();
            let values = store.value_mut(slot.id).values_mut();
            let row_width = if sparse { cols } else { grad.len() };
            for start in (0..grad.len()).step_by(row_width) {
                let row = &grad[start..start + row_width];
                if sparse && row.iter().all(|&g| g == 0.0) {
                    continue;
                }
                for (off, &g) in row.iter().enumerate() {
                    let i = start + off;
                    slot.m[i] = self.cfg.beta1 * slot.m[i] + (1.0 - self.cfg.beta1) * g;
                    slot.v[i] = self.cfg.beta2 * slot.v[i] + (1.0 - self.cfg.beta2) * g * g;
                    let mhat = slot.m[i] / c1;
                    let vhat = slot.v[i] / c2;
                    values[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
                }
            }
        }
        for slot in &self.slots {
            let id = slot.id;
            store.params[id.0].grad = None;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.register(name, t, name.ends_with(SPARSE_SUFFIX));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let (mut store, id) = store_with("w", Tensor::vector(vec![1.0, -2.0, 3.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store, &[id]);
        store.params[0].grad = Some(vec![0.0; 3]);
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(id).values(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn single_step_matches_hand_calculation() {
        // grad 1, lr 0.1, step 1: bias-corrected mhat = 1, vhat = 1,
        // so the parameter drops by ~0.1.
        let (mut store, id) = store_with("w", Tensor::scalar(0.5));
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &store, &[id]);
        store.params[0].grad = Some(vec![1.0]);
        adam.step(&mut store).unwrap();
        let got = store.value(id).values()[0];
        assert!((got - 0.4).abs() < 1e-8, "got {got}");
    }

    #[test]
    fn missing_grad_is_an_error() {
        let (mut store, id) = store_with("w", Tensor::scalar(0.5));
        let mut adam = Adam::new(AdamConfig::default(), &store, &[id]);
        assert!(matches!(adam.step(&mut store), Err(CecdrError::MissingGrad(_))));
    }

    #[test]
    fn sparse_rows_with_zero_grad_are_skipped_even_with_history() {
        let (mut store, id) =
            store_with("emb_table", Tensor::matrix(3, 2, vec![1.0; 6]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &store, &[id]);
        // first step touches row 1 only
        store.params[0].grad = Some(vec![0.0, 0.0, 0.5, -0.5, 0.0, 0.0]);
        adam.step(&mut store).unwrap();
        let after_first = store.value(id).values().to_vec();
        assert_eq!(&after_first[0..2], &[1.0, 1.0]);
        assert_ne!(&after_first[2..4], &[1.0, 1.0]);
        // second step touches row 2 only; row 1 must stay put despite its
        // nonzero optimizer history
        store.params[0].grad = Some(vec![0.0, 0.0, 0.0, 0.0, 0.5, -0.5]);
        adam.step(&mut store).unwrap();
        let after_second = store.value(id).values().to_vec();
        assert_eq!(&after_second[0..4], &after_first[0..4]);
        assert_ne!(&after_second[4..6], &after_first[4..6]);
    }

    #[test]
    fn determinism_two_runs_identical() {
        let run = || {
            let (mut store, id) = store_with("w", Tensor::vector(vec![0.3, -0.7]));
            let mut adam = Adam::new(AdamConfig::default(), &store, &[id]);
            for k in 0..10 {
                store.params[0].grad = Some(vec![0.1 * k as f64, -0.2]);
                adam.step(&mut store).unwrap();
            }
            store.value(id).values().to_vec()
        };
        assert_eq!(run(), run());
    }
}
