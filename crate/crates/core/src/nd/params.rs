//! Named parameter storage and binding onto a tape.

use std::collections::HashMap;
use std::sync::Arc;

use super::{Gradients, Tape, Tensor, Var};
use crate::{Error, Result};

/// Ordered collection of named tensors. Names are `/`-separated paths such
/// as `fssm0/mamba/in_x/w`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: Arc<HashMap<String, usize>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        Arc::make_mut(&mut self.index).insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let &i = self.index.get(name).ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::shape(format!(
                "{name}: {:?} cannot become {:?}",
                self.tensors[i].shape(),
                value.shape()
            )));
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(), index: self.index.clone() }
    }

    /// Uses existing vars, one per parameter in store order, as the bound
    /// parameters. Lets gradient checks perturb parameters directly.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound> {
        if vars.len() != self.len() || vars.iter().zip(&self.tensors).any(|(v, t)| v.shape() != t.shape()) {
            return Err(Error::shape("vars do not match the parameter table"));
        }
        Ok(Bound { vars, index: self.index.clone() })
    }

    /// Builder for inserting parameters under `prefix`.
    pub fn init(&mut self, prefix: &str) -> Init<'_> {
        Init { store: self, prefix: prefix.to_string() }
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

/// Inserts parameters under a name prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Init<'_> {
    pub fn add(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.store.insert(join(&self.prefix, name), value)
    }

    pub fn sub(&mut self, name: &str) -> Init<'_> {
        Init { prefix: join(&self.prefix, name), store: self.store }
    }
}

/// Parameters of a [`ParamStore`] bound as leaves of one tape.
pub struct Bound {
    vars: Vec<Var>,
    index: Arc<HashMap<String, usize>>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i].clone())
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn scope(&self, prefix: &str) -> Scope<'_> {
        Scope { bound: self, prefix: prefix.to_string() }
    }

    /// Gradients in store order, zeros for unused parameters.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    }
}

/// Prefixed view of a [`Bound`].
#[derive(Clone)]
pub struct Scope<'a> {
    bound: &'a Bound,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.bound.get(&join(&self.prefix, name))
    }

    pub fn sub(&self, name: &str) -> Scope<'a> {
        Scope { bound: self.bound, prefix: join(&self.prefix, name) }
    }
}
