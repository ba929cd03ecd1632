use super::tape::Grads;
use super::{Real, Tensor};
use crate::rng::SplitMix64;
use std::collections::HashMap;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a trainable tensor. Panics on duplicate names.
    pub fn register(&mut self, name: impl Into<String>, mut t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        t.set_requires_grad(true);
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(t);
        id
    }

    /// Kaiming-uniform conv weight `[cout, cin, k, k]`: U(-b, b) with
    /// b = sqrt(6 / fan_in).
    pub fn conv_weight(
        &mut self,
        name: impl Into<String>,
        cout: usize,
        cin: usize,
        k: usize,
        rng: &mut SplitMix64,
    ) -> ParamId {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        let t = Tensor::from_fn(&[cout, cin, k, k], |_| T::from_f64(rng.uniform(-bound, bound)));
        self.register(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds every parameter gradient in `grads` onto the stored buffers.
    pub fn accumulate(&mut self, grads: &Grads<T>) {
        for (id, g) in grads.params() {
            self.tensors[id.0].accumulate_grad(g);
        }
    }

    /// Scales every accumulated gradient (e.g. 1/batch).
    pub fn scale_grads(&mut self, c: T) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v *= c);
            }
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Overwrites values of an existing parameter, keeping its grad flag.
    pub fn set_data(&mut self, id: ParamId, data: Vec<T>) {
        let t = &mut self.tensors[id.0];
        assert_eq!(t.len(), data.len());
        t.data_mut().copy_from_slice(&data);
    }
}
