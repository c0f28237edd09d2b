use std::collections::HashMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`Registry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
}

/// Named parameters in registration order. Names are dotted paths and unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Registry<F> {
    params: Vec<Parameter<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> Registry<F> {
    pub fn new() -> Self {
        Registry {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value,
            trainable: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Freeze or unfreeze every parameter whose name satisfies `pred`.
    pub fn set_trainable_where(&mut self, trainable: bool, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.trainable = trainable;
            }
        }
    }

    /// Number of scalar values, optionally restricted to trainable parameters.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Zero-filled gradient buffers for every parameter.
    pub fn zero_grads(&self) -> Grads<F> {
        Grads {
            slots: self
                .params
                .iter()
                .map(|p| Some(Tensor::zeros(p.value.shape())))
                .collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> Registry<G> {
        Registry {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient buffers parallel to a registry. A `None` slot means "no gradient computed".
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F> {
    slots: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn empty(n: usize) -> Self {
        Grads { slots: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        self.slots[id.0].as_mut().expect("gradient slot allocated")
    }

    pub fn set(&mut self, id: ParamId, g: Tensor<F>) {
        self.slots[id.0] = Some(g);
    }

    pub fn clear(&mut self, id: ParamId) {
        self.slots[id.0] = None;
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Accumulate `g` into slot `id`.
    pub fn accumulate(&mut self, id: ParamId, g: &[F]) {
        let slot = self.get_mut(id);
        for (a, &b) in slot.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.slots.iter_mut().flatten() {
            t.fill(F::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut r = Registry::<f32>::new();
        r.add("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(r.add("a.w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn counting_respects_freeze_flag() {
        let mut r = Registry::<f32>::new();
        let a = r.add("a", Tensor::zeros(&[2, 3])).unwrap();
        r.add("b", Tensor::zeros(&[4])).unwrap();
        r.set_trainable(a, false);
        assert_eq!(r.count(false), 10);
        assert_eq!(r.count(true), 4);
    }
}
