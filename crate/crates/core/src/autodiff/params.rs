use std::collections::BTreeMap;

use crate::error::{param_err, Result};
use crate::tensor::Tensor4;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor4,
    /// Whether weight decay applies (false for norm parameters and biases).
    pub decay: bool,
}

/// Flat, ordered list of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor4, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor4 {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradients keyed by parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    map: BTreeMap<ParamId, Tensor4>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor4> {
        self.map.get(&id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor4> {
        self.map.get_mut(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor4)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor4)> {
        self.map.iter_mut().map(|(k, v)| (*k, v))
    }

    /// Adds `g` into the entry for `id`, creating it if needed.
    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor4) -> Result<()> {
        match self.map.get_mut(&id) {
            Some(acc) => {
                if acc.dims() != g.dims() {
                    return Err(param_err!(
                        "gradient dims {:?} vs {:?} for {:?}",
                        acc.dims(),
                        g.dims(),
                        id
                    ));
                }
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                self.map.insert(id, g.clone());
            }
        }
        Ok(())
    }

    /// Euclidean norm over every gradient entry, summed in id order.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.map.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}
