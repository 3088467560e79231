//! Named parameter storage with trainability flags and content hashing.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::nnkit::{Arr, Tape, VarId};
use crate::{P4dError, Result};

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Arr,
    pub trainable: bool,
}

/// Ordered collection of named parameters. Iteration order is insertion
/// order; the content hash sorts by name so it is layout-independent.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Arr) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(P4dError::InvalidArgument(format!("duplicate param `{name}`")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), value, trainable: true });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).copied().map(move |i| &mut self.params[i])
    }

    pub fn value(&self, name: &str) -> &Arr {
        &self.get(name).unwrap_or_else(|| panic!("unknown param `{name}`")).value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Set the trainable flag on every param whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).count()
    }

    /// SHA-256 over (name, shape, little-endian values) in name order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, &i) in &self.index {
            let p = &self.params[i];
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for &d in p.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in p.value.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Tape leaves bound to store parameters for one forward/backward pass.
#[derive(Default)]
pub struct Binding {
    bound: Vec<(String, VarId)>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    /// Push a leaf for `name` and remember the association.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, name: &str) -> VarId {
        let id = tape.leaf(store.value(name).clone());
        self.bound.push((name.to_string(), id));
        id
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, VarId)> {
        self.bound.iter().map(|(n, id)| (n.as_str(), *id))
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.bound.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }
}
