use std::collections::HashMap;
use std::rc::Rc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Scalar, Tensor};

/// Handle to one entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable, receives gradients.
    Weight,
    /// State updated outside of gradient descent (batch-norm running stats).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Entry<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    value: Rc<Tensor<T>>,
}

impl<T: Scalar> Entry<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }
}

/// Named tensors of a model in registration order.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            kind,
            value: Rc::new(value),
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    /// Mutable access; copies the tensor first if a tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Entry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn weights(&self) -> impl Iterator<Item = (ParamId, &Entry<T>)> {
        self.iter().filter(|(_, e)| e.kind == ParamKind::Weight)
    }

    /// Number of learnable scalars (buffers excluded).
    pub fn param_count(&self) -> usize {
        self.weights().map(|(_, e)| e.value.numel()).sum()
    }

    fn shared(&self, id: ParamId) -> Rc<Tensor<T>> {
        Rc::clone(&self.entries[id.0].value)
    }
}

/// One forward pass: binds store entries to a tape on first use and gives
/// layers access to their buffers.
pub struct Session<'t, 's, T: Scalar> {
    tape: &'t Tape<T>,
    store: &'s mut ParamStore<T>,
    bound: HashMap<ParamId, Var<'t, T>>,
    order: Vec<ParamId>,
    mode: Mode,
}

impl<'t, 's, T: Scalar> Session<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        Session {
            tape,
            store,
            bound: HashMap::new(),
            order: Vec::new(),
            mode,
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The tape leaf for a weight, created on first request.
    pub fn param(&mut self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.bound.get(&id) {
            return v.clone();
        }
        let v = self.tape.var(self.store.shared(id));
        self.bound.insert(id, v.clone());
        self.order.push(id);
        v
    }

    /// Uses `var` in place of the stored value of `id` for this pass.
    pub fn bind(&mut self, id: ParamId, var: Var<'t, T>) -> Result<()> {
        if var.dims() != self.store.get(id).dims() {
            return Err(Error::shape(format!(
                "binding {:?} to parameter `{}` of shape {:?}",
                var.dims(),
                self.store.entry(id).name,
                self.store.get(id).dims()
            )));
        }
        if self.bound.insert(id, var).is_none() {
            self.order.push(id);
        }
        Ok(())
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn buffer_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        self.store.get_mut(id)
    }

    pub fn buffer_pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        assert_ne!(a, b, "buffer pair must be distinct");
        let (lo, hi, swap) = if a.0 < b.0 { (a.0, b.0, false) } else { (b.0, a.0, true) };
        let (head, tail) = self.store.entries.split_at_mut(hi);
        let first = Rc::make_mut(&mut head[lo].value);
        let second = Rc::make_mut(&mut tail[0].value);
        if swap {
            (second, first)
        } else {
            (first, second)
        }
    }

    /// Leaves bound during this pass, in first-use order.
    pub fn into_bindings(self) -> Vec<(ParamId, Var<'t, T>)> {
        let mut bound = self.bound;
        self.order
            .into_iter()
            .map(|id| {
                let v = bound.remove(&id).expect("bound parameter");
                (id, v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut store = ParamStore::<f32>::new();
        let a = store.insert("a.weight", ParamKind::Weight, Tensor::zeros([2, 3]).unwrap()).unwrap();
        store
            .insert("a.running_mean", ParamKind::Buffer, Tensor::zeros([3]).unwrap())
            .unwrap();
        assert!(store.insert("a.weight", ParamKind::Weight, Tensor::zeros([1]).unwrap()).is_err());
        assert_eq!(store.param_count(), 6);
        assert_eq!(store.id("a.weight"), Some(a));
        let names: Vec<_> = store.iter().map(|(_, e)| e.name.as_str()).collect();
        assert_eq!(names, ["a.weight", "a.running_mean"]);
    }

    #[test]
    fn session_binds_each_weight_once() {
        let mut store = ParamStore::<f64>::new();
        let w = store.insert("w", ParamKind::Weight, Tensor::ones([2]).unwrap()).unwrap();
        let tape = Tape::new();
        let mut s = Session::new(&tape, &mut store, Mode::Train);
        let a = s.param(w);
        let b = s.param(w);
        assert_eq!(a.id(), b.id());
        a.mul(&b).unwrap().sum().backward().unwrap();
        let bindings = s.into_bindings();
        assert_eq!(bindings.len(), 1);
        assert_eq!(bindings[0].1.grad().unwrap().data(), &[2.0, 2.0]);
        drop(bindings);
        store.get_mut(w).fill(3.0);
        assert_eq!(store.get(w).data(), &[3.0, 3.0]);
    }
}
