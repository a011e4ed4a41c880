//! Named parameter store with per-parameter trainability and Adam state.

use std::collections::HashMap;

use rand::Rng;

use super::Tensor;
use crate::{Error, Result};

/// Handle into a [`ParamStore`]. Layers hold ids, the store owns the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// One named parameter: its tensor (data + optional grad), a trainable flag,
/// and first/second Adam moment buffers.
///
/// When `trainable` is false the data is bitwise unchanged by any number of
/// optimizer steps; backward passes skip gradient accumulation for it.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    pub(crate) adam_m: Vec<f64>,
    pub(crate) adam_v: Vec<f64>,
    pub(crate) step_count: u64,
}

impl Parameter {
    fn new(name: String, tensor: Tensor, trainable: bool) -> Self {
        let n = tensor.len();
        Self {
            name,
            tensor,
            trainable,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }
}

/// Ordered collection of parameters. Insertion order is the declaration order
/// used for checkpoint serialization; names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, tensor, trainable));
        id
    }

    /// Inserts a 2-D parameter initialized with uniform Glorot scaling,
    /// `limit = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        self.insert(name, Tensor::new(vec![rows, cols], data).unwrap(), trainable)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Zeroes every allocated gradient buffer.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if let Some(_g) = p.tensor.grad() {
                p.tensor.grad_mut().fill(0.0);
            }
        }
    }

    /// Marks every parameter whose name starts with `prefix` as frozen.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = false;
            }
        }
    }

    /// Copies every parameter of `other` into this store under
    /// `prefix + name`, with the given trainability.
    pub fn adopt(&mut self, other: &ParamStore, prefix: &str, trainable: bool) {
        for p in other.iter() {
            let mut tensor = p.tensor.clone();
            tensor.clear_grad();
            self.insert(format!("{prefix}{}", p.name), tensor, trainable && p.trainable);
        }
    }

    /// Overwrites the data of the named parameter; shape must match.
    pub fn load_data(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let id = self
            .id_of(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let p = self.get_mut(id);
        if p.tensor.len() != data.len() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` expects {} values, checkpoint has {}",
                p.tensor.len(),
                data.len()
            )));
        }
        p.tensor.data_mut().copy_from_slice(&data);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn insertion_order_is_preserved() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor::zeros(vec![2]), true);
        store.insert("a", Tensor::zeros(vec![2]), true);
        let names: Vec<_> = store.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
    }

    #[test]
    fn glorot_init_is_seed_deterministic_and_bounded() {
        let mut r1 = stream(11, "init");
        let mut r2 = stream(11, "init");
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        let a = s1.insert_glorot("w", 8, 4, 4, 8, true, &mut r1);
        let b = s2.insert_glorot("w", 8, 4, 4, 8, true, &mut r2);
        assert_eq!(s1.get(a).data(), s2.get(b).data());
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(s1.get(a).data().iter().all(|w| w.abs() < limit));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(vec![1]), true);
        store.insert("w", Tensor::zeros(vec![1]), true);
    }
}
