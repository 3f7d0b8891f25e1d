use std::collections::BTreeMap;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

pub struct ParamEntry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Flat registry of named parameter tensors. Registration order is stable and
/// doubles as the optimizer-state index, so builders must register in a fixed
/// order.
pub struct ParamStore<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name '{name}'")));
        }
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "parameter '{name}' shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.to_string(), id.0);
        self.entries.push(ParamEntry { name: name.to_string(), shape: shape.to_vec(), data });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Bind every parameter onto a fresh tape. Trainable parameters become
    /// gradient-tracking leaves; the rest become constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: &[bool]) -> Result<Bound> {
        if trainable.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "trainable mask has {} entries for {} parameters",
                trainable.len(),
                self.entries.len()
            )));
        }
        let mut ids = Vec::with_capacity(self.entries.len());
        for (e, &t) in self.entries.iter().zip(trainable) {
            let id = if t {
                tape.leaf(e.data.clone(), &e.shape)?
            } else {
                tape.constant(e.data.clone(), &e.shape)?
            };
            ids.push(id);
        }
        Ok(Bound { ids })
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn max_param_len(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).max().unwrap_or(0)
    }

    /// Pair every parameter with its gradient from this pass, in registry
    /// order, substituting a zero slice when the tape never reached it (the
    /// optimizer skips all-zero gradients without touching state).
    pub fn optimizer_updates<'a>(
        &'a mut self,
        tape: &'a Tape<T>,
        bound: &Bound,
        zeros: &'a [T],
    ) -> Vec<(&'a mut [T], &'a [T])> {
        self.entries
            .iter_mut()
            .enumerate()
            .map(|(i, e)| {
                let len = e.data.len();
                let grad = tape.grad(bound.ids[i]).unwrap_or(&zeros[..len]);
                (e.data.as_mut_slice(), grad)
            })
            .collect()
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Tape-local handles for one forward pass, indexed by [`ParamId`].
pub struct Bound {
    ids: Vec<TensorId>,
}

impl Bound {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, TensorId)> + '_ {
        self.ids.iter().enumerate().map(|(i, &t)| (ParamId(i), t))
    }
}
