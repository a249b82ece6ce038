//! Named, grouped parameter tensors shared by every trainable block.

use std::fs;
use std::ops::Index;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{io_err, read_blob, write_blob, DataError, Dtype};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Learning-rate group. `Adapter` parameters train at the reduced rate
/// (`base_lr × base_lr_multiplier`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Base,
    Adapter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Ordered parameter collection. Order is creation order and is stable
/// across save/load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; names are fixed by model code.
    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param { name, group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| if trainable { g.param(&p.value) } else { g.constant(&p.value) })
                .collect(),
        )
    }

    /// Gradients of every parameter from a differentiated graph, in store order.
    pub fn collect_grads(&self, g: &Graph, bound: &Bound) -> Vec<Vec<f64>> {
        bound
            .0
            .iter()
            .zip(&self.params)
            .map(|(v, p)| g.grad(*v).map_or_else(|| vec![0.0; p.value.len()], <[f64]>::to_vec))
            .collect()
    }
}

/// Index entry for one saved parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    /// Relative to the checkpoint directory.
    pub file: String,
}

/// Writes every parameter as a 64-bit blob `dir/params/<name>.mmeb`.
/// Vectors are stored as `1×n` since blobs are rank 2 or 3.
pub fn save_params(store: &ParamStore, dir: &Path) -> Result<Vec<ParamEntry>, DataError> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(io_err(&pdir))?;
    let mut entries = Vec::with_capacity(store.len());
    for p in store.iter() {
        let file = format!("params/{}.mmeb", p.name);
        let stored = match p.value.rank() {
            1 => p.value.clone().reshape(vec![1, p.value.len()])?,
            _ => p.value.clone(),
        };
        let path = dir.join(&file);
        fs::write(&path, write_blob(&stored, Dtype::F64)?).map_err(io_err(&path))?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            group: p.group,
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    Ok(entries)
}

/// Overwrites `store` values from saved blobs. The entry set must match
/// the store's names and shapes exactly.
pub fn load_params(store: &mut ParamStore, dir: &Path, entries: &[ParamEntry]) -> Result<(), DataError> {
    if store.len() != entries.len() {
        return Err(DataError::Malformed(format!(
            "{} parameters stored, architecture has {}",
            entries.len(),
            store.len()
        )));
    }
    for entry in entries {
        let id = store
            .find(&entry.name)
            .ok_or_else(|| DataError::Malformed(format!("unknown parameter {}", entry.name)))?;
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let value = read_blob(&bytes)?.reshape(entry.shape.clone())?;
        if value.shape() != store.get(id).shape() {
            return Err(DataError::Malformed(format!(
                "{} has shape {:?}, expected {:?}",
                entry.name,
                value.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = value;
    }
    Ok(())
}

/// Graph handles for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps handles created outside [`ParamStore::bind`], in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_and_collect() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Base, Tensor::vector(vec![1.0, 2.0]));
        let b = store.add("b", ParamGroup::Adapter, Tensor::vector(vec![3.0]));
        assert_eq!(store.num_scalars(), 3);
        assert_eq!(store.find("b"), Some(b));

        let mut g = Graph::new();
        let bound = store.bind(&mut g, true);
        let s = g.sum(bound[a]);
        g.backward(s).unwrap();
        assert_eq!(store.collect_grads(&g, &bound), vec![vec![1.0, 1.0], vec![0.0]]);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::new();
        store.add("a", ParamGroup::Base, Tensor::scalar(0.0));
        store.add("a", ParamGroup::Base, Tensor::scalar(0.0));
    }
}
