//! Named parameter storage and the per-forward evaluation context.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sshd_tensor::{BatchNormMode, Real, Tape, Tensor, Var};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable parameters plus non-trainable buffers (batch-norm running
/// statistics), both keyed by unique dotted names in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: IndexMap::new(), buffers: IndexMap::new() }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.params.contains_key(&name) && !self.buffers.contains_key(&name), "duplicate parameter {name}");
        let (index, _) = self.params.insert_full(name, value);
        ParamId(index)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        let name = name.into();
        assert!(!self.params.contains_key(&name) && !self.buffers.contains_key(&name), "duplicate buffer {name}");
        let (index, _) = self.buffers.insert_full(name, value);
        BufferId(index)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).expect("id from this store").0
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.params[id.0].shape(), value.shape(), "shape change for {}", self.name(id));
        self.params[id.0] = value;
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0]
    }

    pub fn param_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Parameters followed by buffers, as 32-bit tensors.
    pub fn to_table(&self) -> IndexMap<String, Tensor<f32>> {
        self.params.iter().chain(&self.buffers).map(|(k, v)| (k.clone(), v.cast())).collect()
    }

    /// Replaces every parameter and buffer from `table`; names and shapes must
    /// match exactly.
    pub fn load_table(&mut self, table: &IndexMap<String, Tensor<f32>>) -> Result<()> {
        if table.len() != self.params.len() + self.buffers.len() {
            return Err(CoreError::Checkpoint {
                field: "tensor count",
                detail: format!("expected {}, found {}", self.params.len() + self.buffers.len(), table.len()),
            });
        }
        for (name, slot) in self.params.iter_mut().chain(self.buffers.iter_mut()) {
            let t = table
                .get(name)
                .ok_or_else(|| CoreError::Checkpoint { field: "name", detail: format!("missing tensor {name}") })?;
            if t.shape() != slot.shape() {
                return Err(CoreError::Checkpoint {
                    field: "extents",
                    detail: format!("{name}: expected {:?}, found {:?}", slot.shape(), t.shape()),
                });
            }
            *slot = t.cast();
        }
        Ok(())
    }
}

/// Deterministic initializer; draws in 64-bit and casts on insertion.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in<T: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.rng.gen_range(-bound..bound))).collect();
        Tensor::new(shape.to_vec(), data).expect("positive extents")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: owns the tape, binds parameters lazily as tape leaves.
pub struct Ctx<'s, T: Real> {
    pub tape: Tape<T>,
    store: &'s mut ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    track_grads: bool,
}

impl<'s, T: Real> Ctx<'s, T> {
    /// `track_grads` makes parameters gradient-requiring leaves regardless of mode.
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode, track_grads: bool) -> Self {
        let bound = vec![None; store.len()];
        Self { tape: Tape::new(), store, bound, mode, track_grads }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.value(id).clone(), self.track_grads);
        self.bound[id.0] = Some(v);
        v
    }

    /// Batch norm using the buffer `stats` (`2×C`: running mean row, running
    /// variance row). A channel with a single value per batch has no usable
    /// batch statistics, so such inputs are normalized with the running ones
    /// even in training mode.
    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, stats: BufferId, momentum: f64, eps: f64) -> Result<Var> {
        let (g, b) = (self.param(gamma), self.param(beta));
        let shape = self.tape.shape(x);
        let per_channel = shape.iter().product::<usize>() / shape.get(1).copied().unwrap_or(1).max(1);
        let buf = self.store.buffers[stats.0].data_mut();
        let c = buf.len() / 2;
        let (mean, var) = buf.split_at_mut(c);
        let mode = match self.mode {
            Mode::Train if per_channel > 1 => BatchNormMode::Train { running_mean: mean, running_var: var, momentum: T::lit(momentum) },
            _ => BatchNormMode::Eval { running_mean: mean, running_var: var },
        };
        Ok(self.tape.batch_norm(x, g, b, mode, T::lit(eps))?)
    }

    /// Gradients per parameter after `tape.backward`; `None` for parameters the
    /// forward never touched.
    pub fn param_grads(&self) -> Vec<Option<Tensor<T>>> {
        self.bound.iter().map(|v| v.and_then(|v| self.tape.grad(v).cloned())).collect()
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.bound[id.0].and_then(|v| self.tape.grad(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_roundtrip_and_validation() {
        let mut store = ParamStore::<f32>::new();
        let mut init = Init::new(3);
        let a = store.add_param("a", init.fan_in(&[2, 3], 3));
        store.add_buffer("a.stats", Tensor::zeros(vec![2, 2]));
        let table = store.to_table();
        let mut other = store.clone();
        other.value_mut(a).data_mut()[0] = 9.0;
        other.load_table(&table).unwrap();
        assert_eq!(other.value(a), store.value(a));

        let mut bad = table.clone();
        bad.insert("a".into(), Tensor::zeros(vec![3, 2]));
        assert!(other.load_table(&bad).is_err());
        bad.shift_remove("a");
        assert!(other.load_table(&bad).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a: Tensor<f64> = Init::new(1).fan_in(&[64], 4);
        let b: Tensor<f64> = Init::new(1).fan_in(&[64], 4);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 0.5));
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::<f32>::new();
        store.add_param("w", Tensor::zeros(vec![1]));
        store.add_param("w", Tensor::zeros(vec![1]));
    }
}
