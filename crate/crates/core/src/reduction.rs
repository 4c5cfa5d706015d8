//! Sparse Z/2Z columns and the sequential standard reduction.

use std::collections::btree_map;
use std::collections::{BTreeMap, HashMap};

use crate::filtration::CellKey;

/// A coboundary column: the owner cell and the set of its nonzero rows,
/// sorted in matrix order (earliest row first).
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub owner: CellKey,
    pub entries: Vec<CellKey>,
}

impl Column {
    /// Builds a column from entries in any order. Duplicates cancel in pairs.
    pub fn new(owner: CellKey, mut entries: Vec<CellKey>) -> Self {
        entries.sort_unstable();
        let mut out: Vec<CellKey> = Vec::with_capacity(entries.len());
        for e in entries {
            if out.last() == Some(&e) {
                out.pop();
            } else {
                out.push(e);
            }
        }
        Self {
            owner,
            entries: out,
        }
    }

    pub fn from_sorted(owner: CellKey, entries: Vec<CellKey>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0] < w[1]));
        Self { owner, entries }
    }

    /// Last nonzero row in matrix order.
    pub fn low(&self) -> Option<CellKey> {
        self.entries.last().copied()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.is_zero()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// `self += other` over Z/2Z, reusing `scratch` as the merge buffer.
    pub fn add_assign(&mut self, other: &[CellKey], scratch: &mut Vec<CellKey>) {
        symmetric_difference_into(&self.entries, other, scratch);
        std::mem::swap(&mut self.entries, scratch);
    }
}

/// Sum of two columns; the result keeps the owner of `a`.
pub fn add_columns(a: &Column, b: &Column) -> Column {
    let mut out = Vec::with_capacity(a.len() + b.len());
    symmetric_difference_into(&a.entries, &b.entries, &mut out);
    Column {
        owner: a.owner,
        entries: out,
    }
}

pub(crate) fn symmetric_difference_into(a: &[CellKey], b: &[CellKey], out: &mut Vec<CellKey>) {
    out.clear();
    out.reserve(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// Columns keyed by owner, iterated in matrix order. Zero columns are never
/// kept.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColumnStore {
    map: BTreeMap<CellKey, Column>,
}

impl ColumnStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `col`, replacing any column with the same owner. A zero column
    /// erases the slot instead.
    pub fn insert(&mut self, col: Column) {
        if col.is_zero() {
            self.map.remove(&col.owner);
        } else {
            self.map.insert(col.owner, col);
        }
    }

    pub fn get(&self, owner: &CellKey) -> Option<&Column> {
        self.map.get(owner)
    }

    pub fn remove(&mut self, owner: &CellKey) -> Option<Column> {
        self.map.remove(owner)
    }

    pub fn contains(&self, owner: &CellKey) -> bool {
        self.map.contains_key(owner)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &CellKey> + '_ {
        self.map.keys()
    }

    pub fn iter(&self) -> btree_map::Values<'_, CellKey, Column> {
        self.map.values()
    }

    /// First owner strictly after `key` in matrix order.
    pub fn next_after(&self, key: &CellKey) -> Option<CellKey> {
        use std::ops::Bound::{Excluded, Unbounded};
        self.map
            .range((Excluded(*key), Unbounded))
            .next()
            .map(|(k, _)| *k)
    }

    pub fn drain(&mut self) -> impl Iterator<Item = Column> {
        std::mem::take(&mut self.map).into_values()
    }
}

impl FromIterator<Column> for ColumnStore {
    fn from_iter<I: IntoIterator<Item = Column>>(iter: I) -> Self {
        let mut s = ColumnStore::new();
        for c in iter {
            s.insert(c);
        }
        s
    }
}

/// Row key -> owner of the column whose low is that row.
#[derive(Clone, Debug, Default)]
pub struct PivotTable {
    map: HashMap<CellKey, CellKey>,
}

impl PivotTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, row: &CellKey) -> Option<CellKey> {
        self.map.get(row).copied()
    }

    pub fn set(&mut self, row: CellKey, owner: CellKey) {
        self.map.insert(row, owner);
    }

    /// Removes the entry for `row` if it still points at `owner`.
    pub fn release(&mut self, row: &CellKey, owner: &CellKey) {
        if self.map.get(row) == Some(owner) {
            self.map.remove(row);
        }
    }

    pub fn contains_row(&self, row: &CellKey) -> bool {
        self.map.contains_key(row)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &CellKey)> + '_ {
        self.map.iter()
    }
}

/// Columns split by cell dimension (index = dimension) plus their pivots.
#[derive(Clone, Debug, Default)]
pub struct ReducedChunk {
    pub columns: Vec<ColumnStore>,
    pub pivots: PivotTable,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReduceStats {
    pub additions: u64,
    pub cleared: u64,
}

impl ReducedChunk {
    pub fn with_dims(n_dims: usize) -> Self {
        Self {
            columns: vec![ColumnStore::new(); n_dims],
            pivots: PivotTable::new(),
        }
    }

    pub fn n_columns(&self) -> usize {
        self.columns.iter().map(ColumnStore::len).sum()
    }

    /// Standard left-to-right reduction, one dimension at a time in
    /// increasing order. With `use_clearing`, columns of cells that already
    /// appear as a low of a lower-dimensional column are dropped unreduced.
    pub fn reduce(&mut self, use_clearing: bool) -> ReduceStats {
        let mut stats = ReduceStats::default();
        let mut scratch = Vec::new();
        for d in 0..self.columns.len() {
            let store = &mut self.columns[d];
            if use_clearing {
                let positive: Vec<CellKey> = store
                    .keys()
                    .filter(|k| self.pivots.contains_row(k))
                    .copied()
                    .collect();
                for k in &positive {
                    store.remove(k);
                }
                stats.cleared += positive.len() as u64;
            }
            let owners: Vec<CellKey> = store.keys().copied().collect();
            for owner in owners {
                let mut col = store.remove(&owner).unwrap();
                while let Some(low) = col.low() {
                    match self.pivots.get(&low) {
                        Some(p) if p != owner => {
                            debug_assert!(p < owner, "registered pivot must lie to the left");
                            col.add_assign(&store.get(&p).unwrap().entries, &mut scratch);
                            debug_assert!(col.low().is_none_or(|l| l < low));
                            stats.additions += 1;
                        }
                        _ => {
                            self.pivots.set(low, owner);
                            break;
                        }
                    }
                }
                store.insert(col);
            }
        }
        stats
    }
}

/// Sequential reduction of a chunk; see [`ReducedChunk::reduce`].
pub fn reduce_chunk(mut chunk: ReducedChunk, use_clearing: bool) -> (ReducedChunk, ReduceStats) {
    let stats = chunk.reduce(use_clearing);
    (chunk, stats)
}

/// `true` if no two nonzero columns across all stores share a low.
pub fn is_reduced<'a>(stores: impl IntoIterator<Item = &'a ColumnStore>) -> bool {
    let mut seen = std::collections::HashSet::new();
    stores
        .into_iter()
        .flat_map(|s| s.iter())
        .filter_map(Column::low)
        .all(|l| seen.insert(l))
}
