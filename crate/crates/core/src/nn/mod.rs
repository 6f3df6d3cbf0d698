//! Parameter storage, layers and the optimizer on top of [`crate::tensor`].

mod adam;
mod layers;

pub use adam::{Adam, AdamConfig, AdamState};
pub use layers::{Conv2d, Ctx, Linear};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Array, Scalar};

/// Which optimizer owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Generator,
    Discriminator,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Array<T>,
    pub group: Group,
}

/// Flat, ordered list of every weight of a model. Indices are stable for
/// the lifetime of the store and double as tape parameter ids.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>, group: Group) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            group,
        });
        self.params.len() - 1
    }

    /// Normal(0, std) initialized parameter.
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        group: Group,
        rng: &mut impl Rng,
    ) -> usize {
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        let value = Array::from_fn(shape, |_| T::of(normal.sample(rng)));
        self.add(name, value, group)
    }

    pub fn get(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Array<T> {
        &mut self.params[index].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn indices_in(&self, group: Group) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].group == group)
            .collect()
    }

    /// Total scalar count, optionally restricted to one group.
    pub fn numel(&self, group: Option<Group>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    group: p.group,
                })
                .collect(),
        }
    }
}
