use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use std::collections::HashMap;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// One learnable (or tracked) tensor with its gradient and Adam state.
/// Per-channel vectors are stored as `1 x C` matrices so every parameter is
/// uniformly two-dimensional.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Array2<T>,
    pub grad: Array2<T>,
    pub m: Array2<T>,
    pub v: Array2<T>,
    pub step: u64,
    pub trainable: bool,
}

/// Flat, name-addressed parameter store. Insertion order is the checkpoint
/// record order, so serialization is deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let shape = value.raw_dim();
        self.params.push(Param {
            name: name.clone(),
            value,
            grad: Array2::zeros(shape),
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            step: 0,
            trainable,
        });
        self.by_name.insert(name, id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Array2<T>) {
        self.params[id.0].grad += delta;
    }

    /// Replaces a parameter value, keeping optimizer state; shapes must match.
    pub fn set_value(&mut self, id: ParamId, value: Array2<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.raw_dim() != value.raw_dim() {
            return Err(Error::ShapeMismatch {
                context: "set_value",
                expected: format!("{:?}", p.value.raw_dim()),
                got: format!("{:?}", value.raw_dim()),
            });
        }
        p.value = value;
        Ok(())
    }
}
