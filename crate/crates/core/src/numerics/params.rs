use indexmap::IndexMap;

use super::graph::{Gradients, Graph, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NumericsError;

/// Named trainable tensors, kept in insertion order so that iteration (and
/// therefore checkpoint layout and optimizer updates) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S> {
    tensors: IndexMap<String, Tensor<S>>,
}

/// Per-parameter gradients, keyed like the [`ParamSet`] they came from.
pub type ParamGrads<S> = IndexMap<String, Tensor<S>>;

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Registers every tensor as a trainable leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph<S>) -> Bound<'g, S> {
        Bound {
            graph,
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), graph.param(v.clone())))
                .collect(),
        }
    }
}

/// A [`ParamSet`] registered on a graph.
pub struct Bound<'g, S> {
    graph: &'g Graph<S>,
    vars: IndexMap<String, Var<'g, S>>,
}

impl<'g, S: Scalar> Bound<'g, S> {
    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn get(&self, name: &str) -> Result<Var<'g, S>, NumericsError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::MissingParam(name.to_string()))
    }

    /// Extracts the gradient of every bound parameter.
    pub fn gradients(&self, grads: &mut Gradients<S>) -> ParamGrads<S> {
        self.vars.iter().map(|(k, &v)| (k.clone(), grads.take(v))).collect()
    }
}
