//! Named parameter storage with explicit weight sharing.
//!
//! Every parameter name resolves to one storage cell. A sharing group is a
//! set of names bound to the same cell, so an update through any view is
//! observed by all of them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharingGroup {
    pub cell: CellId,
    /// Name under which the cell is serialized (the first registered view).
    pub canonical: String,
    pub members: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ParamStore<S> {
    cells: Vec<Tensor<S>>,
    canonical: Vec<String>,
    names: BTreeMap<String, CellId>,
    order: Vec<String>,
}

impl<S: Real> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { cells: Vec::new(), canonical: Vec::new(), names: BTreeMap::new(), order: Vec::new() }
    }

    /// Adds a fresh storage cell. Panics on duplicate names.
    pub fn register(&mut self, name: &str, value: Tensor<S>) -> CellId {
        assert!(!self.names.contains_key(name), "duplicate parameter name {name}");
        let id = CellId(self.cells.len());
        self.cells.push(value);
        self.canonical.push(name.into());
        self.names.insert(name.into(), id);
        self.order.push(name.into());
        id
    }

    /// Binds `name` as an additional view of an existing cell.
    pub fn bind(&mut self, name: &str, cell: CellId) -> CellId {
        assert!(!self.names.contains_key(name), "duplicate parameter name {name}");
        assert!(cell.0 < self.cells.len(), "unknown cell {cell:?}");
        self.names.insert(name.into(), cell);
        self.order.push(name.into());
        cell
    }

    pub fn get(&self, id: CellId) -> &Tensor<S> {
        &self.cells[id.0]
    }

    pub fn get_mut(&mut self, id: CellId) -> &mut Tensor<S> {
        &mut self.cells[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<CellId> {
        self.names.get(name).copied()
    }

    pub fn canonical_name(&self, id: CellId) -> &str {
        &self.canonical[id.0]
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (CellId, &Tensor<S>)> {
        self.cells.iter().enumerate().map(|(i, t)| (CellId(i), t))
    }

    /// All views in registration order.
    pub fn views(&self) -> impl Iterator<Item = (&str, CellId)> {
        self.order.iter().map(move |n| (n.as_str(), self.names[n]))
    }

    /// Distinct cells reachable through views whose name starts with `prefix`.
    pub fn cells_with_prefix(&self, prefix: &str) -> Vec<CellId> {
        let mut ids: Vec<CellId> =
            self.views().filter(|(n, _)| n.starts_with(prefix)).map(|(_, c)| c).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Groups of two or more views bound to one cell.
    pub fn sharing_groups(&self) -> Vec<SharingGroup> {
        let mut members: BTreeMap<CellId, Vec<String>> = BTreeMap::new();
        for (name, cell) in self.views() {
            members.entry(cell).or_default().push(name.into());
        }
        members
            .into_iter()
            .filter(|(_, m)| m.len() > 1)
            .map(|(cell, members)| SharingGroup { cell, canonical: self.canonical[cell.0].clone(), members })
            .collect()
    }

    /// Scalar count summing each storage cell once.
    pub fn unique_param_count(&self) -> usize {
        self.cells.iter().map(Tensor::len).sum()
    }

    /// Scalar count summing every view, so shared cells count once per view.
    pub fn view_param_count(&self) -> usize {
        self.views().map(|(_, c)| self.cells[c.0].len()).sum()
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            cells: self.cells.iter().map(Tensor::cast).collect(),
            canonical: self.canonical.clone(),
            names: self.names.clone(),
            order: self.order.clone(),
        }
    }

    /// Bitwise equality of every cell, compared via `f64` bit patterns of the
    /// stored scalars.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.cells.len() == other.cells.len()
            && self.cells.iter().zip(&other.cells).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_f64().to_bits() == y.to_f64().to_bits())
            })
    }
}

/// Per-cell membership mask used for trainable and frozen sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSet {
    mask: Vec<bool>,
}

impl CellSet {
    pub fn none(cells: usize) -> Self {
        CellSet { mask: alloc::vec![false; cells] }
    }

    pub fn all(cells: usize) -> Self {
        CellSet { mask: alloc::vec![true; cells] }
    }

    pub fn from_cells(cells: usize, ids: impl IntoIterator<Item = CellId>) -> Self {
        let mut s = Self::none(cells);
        for id in ids {
            s.insert(id);
        }
        s
    }

    pub fn insert(&mut self, id: CellId) {
        self.mask[id.0] = true;
    }

    pub fn remove(&mut self, id: CellId) {
        self.mask[id.0] = false;
    }

    pub fn contains(&self, id: CellId) -> bool {
        self.mask[id.0]
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        CellSet { mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a || *b).collect() }
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        CellSet { mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a && !*b).collect() }
    }

    pub fn ids(&self) -> impl Iterator<Item = CellId> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| CellId(i))
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
