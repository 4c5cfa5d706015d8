//! Spatial decomposition of the grid into overlapping blocks and the local
//! phase run on each block: splitting its coboundary matrix into
//! interior/shared parts, reducing the interior part, and ultrasparsifying.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::filtration::{Cell, CellKey, Grid, Shape};
use crate::reduction::{Column, ReduceStats, ReducedChunk};

/// Axis-aligned box of vertices, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: usize,
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Block {
    pub fn contains_vertex(&self, v: [usize; 3]) -> bool {
        (0..3).all(|k| self.lo[k] <= v[k] && v[k] <= self.hi[k])
    }

    /// A cell belongs to the block's sub-complex when all its vertices do.
    pub fn contains_cell(&self, cell: &Cell) -> bool {
        (0..3).all(|k| {
            let (a, b) = cell.vertex_span(k);
            self.lo[k] <= a && b <= self.hi[k]
        })
    }

    /// Doubled-grid bounding box of the block's cells.
    pub fn cell_box(&self) -> ([usize; 3], [usize; 3]) {
        (self.lo.map(|x| 2 * x), self.hi.map(|x| 2 * x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellClass {
    Interior,
    Shared,
}

/// The block cover of a grid: near-equal slabs per axis, neighbours sharing
/// one vertex plane.
#[derive(Clone, Debug)]
pub struct Cover {
    shape: Shape,
    blocks_per_axis: [usize; 3],
    blocks: Vec<Block>,
    /// per axis and vertex coordinate: how many slabs contain it
    multiplicity: [Vec<u8>; 3],
}

/// Splits the grid into `bx * by * bz` blocks.
pub fn partition_grid(shape: &Shape, blocks_per_axis: [usize; 3]) -> Result<Cover> {
    let dims = shape.dims();
    for k in 0..3 {
        let (b, n) = (blocks_per_axis[k], dims[k]);
        if b == 0 || b > n {
            return Err(Error::Config(format!(
                "axis {k}: {b} blocks do not fit {n} vertices"
            )));
        }
    }
    let cuts: Vec<Vec<usize>> = (0..3)
        .map(|k| {
            let (b, n) = (blocks_per_axis[k], dims[k]);
            // rounded k*(n-1)/b
            (0..=b).map(|j| (2 * j * (n - 1) + b) / (2 * b)).collect()
        })
        .collect();
    let multiplicity: [Vec<u8>; 3] = std::array::from_fn(|k| {
        (0..dims[k])
            .map(|v| {
                cuts[k]
                    .windows(2)
                    .filter(|w| w[0] <= v && v <= w[1])
                    .count() as u8
            })
            .collect()
    });
    let [bx, by, bz] = blocks_per_axis;
    let mut blocks = Vec::with_capacity(bx * by * bz);
    for z in 0..bz {
        for y in 0..by {
            for x in 0..bx {
                let idx = [x, y, z];
                blocks.push(Block {
                    id: blocks.len(),
                    lo: std::array::from_fn(|k| cuts[k][idx[k]]),
                    hi: std::array::from_fn(|k| cuts[k][idx[k] + 1]),
                });
            }
        }
    }
    Ok(Cover {
        shape: *shape,
        blocks_per_axis,
        blocks,
        multiplicity,
    })
}

/// Factors `ranks` into blocks per axis, giving factors to the axes with the
/// most vertices per block first.
pub fn blocks_for_ranks(ranks: usize, dims: [usize; 3]) -> Result<[usize; 3]> {
    if ranks == 0 {
        return Err(Error::Config("need at least one rank".into()));
    }
    let mut factors = Vec::new();
    let mut r = ranks;
    let mut f = 2;
    while r > 1 {
        while r.is_multiple_of(f) {
            factors.push(f);
            r /= f;
        }
        f += 1;
    }
    factors.sort_unstable_by(|a, b| b.cmp(a));
    let mut blocks = [1usize; 3];
    for f in factors {
        let axis = (0..3)
            .filter(|&k| blocks[k] * f <= dims[k])
            .max_by_key(|&k| (dims[k] * 1000 / blocks[k], std::cmp::Reverse(k)))
            .ok_or_else(|| {
                Error::Config(format!("cannot split grid {dims:?} into {ranks} blocks"))
            })?;
        blocks[axis] *= f;
    }
    Ok(blocks)
}

/// Classification against an explicit block list: a cell is interior iff
/// one of its vertices lies in exactly one block.
pub fn classify_cell(cell: &Cell, blocks: &[Block]) -> Result<CellClass> {
    if !blocks.iter().any(|b| b.contains_cell(cell)) {
        return Err(Error::Internal(format!(
            "cell {:?} is not covered by any block",
            cell.coords
        )));
    }
    let interior = cell
        .vertices()
        .any(|v| blocks.iter().filter(|b| b.contains_vertex(v)).count() == 1);
    Ok(if interior {
        CellClass::Interior
    } else {
        CellClass::Shared
    })
}

impl Cover {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_per_axis(&self) -> [usize; 3] {
        self.blocks_per_axis
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Number of blocks containing vertex `v`.
    pub fn vertex_multiplicity(&self, v: [usize; 3]) -> usize {
        (0..3)
            .map(|k| self.multiplicity[k][v[k]] as usize)
            .product()
    }

    /// Same rule as [`classify_cell`], evaluated from coordinates alone.
    pub fn classify(&self, cell: &Cell) -> CellClass {
        // vertices form a product set, so some vertex has multiplicity one
        // iff every axis offers a coordinate with multiplicity one
        let interior = (0..3).all(|k| {
            let (a, b) = cell.vertex_span(k);
            (a..=b).any(|x| self.multiplicity[k][x] == 1)
        });
        if interior {
            CellClass::Interior
        } else {
            CellClass::Shared
        }
    }

    pub fn is_interior(&self, cell: &Cell) -> bool {
        self.classify(cell) == CellClass::Interior
    }
}

/// Column fragments of shared cells, keyed by owner. Unlike
/// [`ColumnStore`](crate::reduction::ColumnStore), empty fragments are kept so
/// the interior-row and shared-row parts always have the same owners.
pub type FragmentStore = BTreeMap<CellKey, Column>;

/// The per-block matrix triple plus the pivots of the interior part.
#[derive(Clone, Debug)]
pub struct BlockMatrices {
    pub block: Block,
    /// Interior columns (rows are interior too), split by dimension.
    pub r_ii: ReducedChunk,
    /// Shared columns restricted to interior rows.
    pub r_si: FragmentStore,
    /// Shared columns restricted to shared rows; never modified.
    pub r_ss: FragmentStore,
}

/// Builds the coboundary matrix of the block's sub-complex and splits it by
/// column and row class.
pub fn build_local_matrices(
    block: &Block,
    grid: &Grid,
    cover: &Cover,
    max_dim: usize,
) -> BlockMatrices {
    let shape = grid.shape();
    let (lo, hi) = block.cell_box();
    let mut bm = BlockMatrices {
        block: *block,
        r_ii: ReducedChunk::with_dims(max_dim + 1),
        r_si: FragmentStore::new(),
        r_ss: FragmentStore::new(),
    };
    for cell in shape.cells_in_box(lo, hi) {
        let dim = cell.dim();
        if dim > max_dim {
            continue;
        }
        let key = grid.key(&cell);
        let cofacets = shape.cofacets(&cell, max_dim);
        if cover.is_interior(&cell) {
            let entries = cofacets.iter().map(|t| grid.key(t)).collect();
            bm.r_ii.columns[dim].insert(Column::new(key, entries));
        } else {
            let (mut si, mut ss) = (Vec::new(), Vec::new());
            for t in cofacets.iter().filter(|t| block.contains_cell(t)) {
                if cover.is_interior(t) {
                    si.push(grid.key(t));
                } else {
                    ss.push(grid.key(t));
                }
            }
            bm.r_si.insert(key, Column::new(key, si));
            bm.r_ss.insert(key, Column::new(key, ss));
        }
    }
    bm
}

/// Reduces the interior part in increasing dimension order. Shared parts are
/// left alone.
pub fn reduce_local(bm: &mut BlockMatrices, use_clearing: bool) -> ReduceStats {
    bm.r_ii.reduce(use_clearing)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SparsifyStats {
    /// Row additions applied to the shared-column interior rows.
    pub row_additions: u64,
    /// Entries removed from shared columns by adding pivot columns to them.
    pub entries_removed: u64,
}

/// Ultrasparsification of a locally reduced block.
///
/// Pivot rows are processed bottom-up: the row of each pivot is added to every
/// other row of its column (mirrored on `r_si`), which leaves the interior
/// column with its low as the only entry. Then every shared column drops each
/// entry whose pivot column lies to its left.
pub fn sparsify(bm: &mut BlockMatrices) -> SparsifyStats {
    let mut stats = SparsifyStats::default();

    let mut cols: HashMap<CellKey, BTreeSet<CellKey>> = HashMap::with_capacity(bm.r_si.len());
    let mut rows: HashMap<CellKey, BTreeSet<CellKey>> = HashMap::new();
    for (owner, col) in &bm.r_si {
        for e in &col.entries {
            rows.entry(*e).or_default().insert(*owner);
        }
        cols.insert(*owner, col.entries.iter().copied().collect());
    }

    let mut pivots: Vec<(CellKey, CellKey)> =
        bm.r_ii.pivots.iter().map(|(r, c)| (*r, *c)).collect();
    // latest row in matrix order first
    pivots.sort_unstable_by_key(|p| std::cmp::Reverse(p.0));

    for &(low, owner) in &pivots {
        let store = bm
            .r_ii
            .columns
            .iter_mut()
            .find(|s| s.contains(&owner))
            .expect("pivot column present");
        let mut col = store.remove(&owner).unwrap();
        debug_assert_eq!(col.low(), Some(low));
        if let Some(targets) = rows.get(&low).cloned() {
            for e in col.entries.iter().filter(|&&e| e != low) {
                stats.row_additions += 1;
                for j in &targets {
                    let c = cols.get_mut(j).unwrap();
                    if c.remove(e) {
                        rows.get_mut(e).unwrap().remove(j);
                    } else {
                        c.insert(*e);
                        rows.entry(*e).or_default().insert(*j);
                    }
                }
            }
        }
        col.entries = vec![low];
        store.insert(col);
    }

    for (owner, col) in bm.r_si.iter_mut() {
        let set = cols.remove(owner).unwrap_or_default();
        let before = set.len();
        let kept: Vec<CellKey> = set
            .into_iter()
            .filter(|e| !matches!(bm.r_ii.pivots.get(e), Some(p) if p < *owner))
            .collect();
        stats.entries_removed += (before - kept.len()) as u64;
        col.entries = kept;
    }
    stats
}

impl BlockMatrices {
    /// Nonzero interior columns with more than one entry.
    pub fn ultrasparse_violations(&self) -> usize {
        self.r_ii
            .columns
            .iter()
            .flat_map(|s| s.iter())
            .filter(|c| c.len() != 1)
            .count()
    }

    /// Per-owner union of both shared fragments, skipping empty ones.
    pub fn shared_columns(&self) -> impl Iterator<Item = Column> + '_ {
        self.r_si.iter().filter_map(|(owner, si)| {
            let ss = &self.r_ss[owner];
            if si.is_zero() && ss.is_zero() {
                return None;
            }
            let mut entries = Vec::with_capacity(si.len() + ss.len());
            entries.extend_from_slice(&si.entries);
            entries.extend_from_slice(&ss.entries);
            entries.sort_unstable();
            Some(Column::from_sorted(*owner, entries))
        })
    }

    /// Every nonzero column this block contributes to the global matrix.
    pub fn outgoing_columns(&self) -> impl Iterator<Item = Column> + '_ {
        self.r_ii
            .columns
            .iter()
            .flat_map(|s| s.iter().cloned())
            .chain(self.shared_columns())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::Grid;
    use proptest::prelude::*;

    fn shape(d: [usize; 3]) -> Shape {
        Shape::new(d).unwrap()
    }

    #[test]
    fn partition_examples() {
        let c = partition_grid(&shape([5, 1, 1]), [2, 1, 1]).unwrap();
        assert_eq!(c.blocks()[0].lo[0], 0);
        assert_eq!(c.blocks()[0].hi[0], 2);
        assert_eq!(c.blocks()[1].lo[0], 2);
        assert_eq!(c.blocks()[1].hi[0], 4);
        assert_eq!(c.vertex_multiplicity([2, 0, 0]), 2);

        let s = shape([3, 4, 2]);
        let c = partition_grid(&s, [1, 1, 1]).unwrap();
        assert!(s.all_cells().all(|cell| c.is_interior(&cell)));

        let c = partition_grid(&shape([4, 4, 1]), [2, 2, 1]).unwrap();
        let shared = (0..4)
            .flat_map(|y| (0..4).map(move |x| [x, y, 0]))
            .filter(|&v| c.vertex_multiplicity(v) >= 2)
            .count();
        assert_eq!(shared, 4 + 4 - 1);

        assert!(partition_grid(&shape([2, 1, 1]), [3, 1, 1]).is_err());
        assert!(partition_grid(&shape([2, 1, 1]), [0, 1, 1]).is_err());
    }

    #[test]
    fn classify_examples() {
        let c = partition_grid(&shape([5, 5, 1]), [2, 1, 1]).unwrap();
        let blocks = c.blocks();
        let v_inside = Cell::vertex(1, 1, 0);
        let v_plane = Cell::vertex(2, 1, 0);
        let edge = Cell::new(3, 2, 0); // (1,1)-(2,1)
        assert_eq!(
            classify_cell(&v_inside, blocks).unwrap(),
            CellClass::Interior
        );
        assert_eq!(classify_cell(&v_plane, blocks).unwrap(), CellClass::Shared);
        assert_eq!(classify_cell(&edge, blocks).unwrap(), CellClass::Interior);
        assert_eq!(c.classify(&edge), CellClass::Interior);
        assert!(classify_cell(&v_inside, &blocks[1..]).is_err());
    }

    #[test]
    fn blocks_for_ranks_fits_axes() {
        assert_eq!(blocks_for_ranks(1, [4, 4, 4]).unwrap(), [1, 1, 1]);
        let b = blocks_for_ranks(8, [2, 2, 2]).unwrap();
        assert_eq!(b, [2, 2, 2]);
        let b = blocks_for_ranks(4, [8, 2, 2]).unwrap();
        assert_eq!(b.iter().product::<usize>(), 4);
        assert!((0..3).all(|k| b[k] <= [8, 2, 2][k]));
        assert!(blocks_for_ranks(8, [2, 2, 1]).is_err());
    }

    #[test]
    fn shared_vertex_split_like_the_figure() {
        // vertex (2,1) on the x = 2 plane of a 5x5 grid cut into 2x2 blocks
        let g = Grid::new([5, 5, 1], (0..25).map(f64::from).collect()).unwrap();
        let cover = partition_grid(g.shape(), [2, 2, 1]).unwrap();
        let block = cover.blocks()[0];
        let bm = build_local_matrices(&block, &g, &cover, 3);
        let v = g.key(&Cell::vertex(2, 1, 0));
        assert_eq!(bm.r_ss[&v].len(), 2);
        assert_eq!(bm.r_si[&v].len(), 1);
    }

    #[test]
    fn single_block_is_full_matrix() {
        let g = Grid::new([3, 2, 2], (0..12).map(|i| f64::from(i * 7 % 5)).collect()).unwrap();
        let cover = partition_grid(g.shape(), [1, 1, 1]).unwrap();
        let bm = build_local_matrices(&cover.blocks()[0], &g, &cover, 3);
        assert!(bm.r_si.is_empty() && bm.r_ss.is_empty());
        let n_nonzero = g
            .shape()
            .all_cells()
            .filter(|c| !g.shape().cofacets(c, 3).is_empty())
            .count();
        assert_eq!(bm.r_ii.n_columns(), n_nonzero);
    }

    #[test]
    fn reduce_local_leaves_shared_parts_alone() {
        let g = Grid::new(
            [5, 4, 3],
            (0..60).map(|i| f64::from((i * 37) % 11)).collect(),
        )
        .unwrap();
        let cover = partition_grid(g.shape(), [2, 2, 1]).unwrap();
        let mut bm = build_local_matrices(&cover.blocks()[1], &g, &cover, 3);
        let (si, ss) = (bm.r_si.clone(), bm.r_ss.clone());
        reduce_local(&mut bm, true);
        assert_eq!(bm.r_si, si);
        assert_eq!(bm.r_ss, ss);
        sparsify(&mut bm);
        assert_eq!(bm.r_ss, ss);
        assert_eq!(bm.ultrasparse_violations(), 0);
    }

    #[test]
    fn left_pivot_entry_survives_sparsify() {
        // 3-vertex path split at the middle vertex; values make the interior
        // pivot column sit left of the shared column in matrix order
        let g = Grid::new([4, 1, 1], vec![0.0, 3.0, 1.0, 2.0]).unwrap();
        let cover = partition_grid(g.shape(), [2, 1, 1]).unwrap();
        let mut bm = build_local_matrices(&cover.blocks()[0], &g, &cover, 3);
        reduce_local(&mut bm, true);
        sparsify(&mut bm);
        let v2 = g.key(&Cell::vertex(2, 0, 0));
        let e12 = g.key(&Cell::new(3, 0, 0));
        let v0 = g.key(&Cell::vertex(0, 0, 0));
        assert_eq!(bm.r_ii.pivots.get(&e12), Some(v0));
        assert!(v0 > v2, "pivot column lies to the right");
        assert_eq!(bm.r_si[&v2].entries, vec![e12]);
        for block in cover.blocks() {
            let mut bm = build_local_matrices(block, &g, &cover, 3);
            reduce_local(&mut bm, true);
            sparsify(&mut bm);
            for (owner, col) in &bm.r_si {
                for e in &col.entries {
                    assert!(!matches!(bm.r_ii.pivots.get(e), Some(p) if p < *owner));
                }
            }
        }
    }

    fn arb_case() -> impl Strategy<Value = (Grid, [usize; 3])> {
        (2usize..6, 2usize..6, 1usize..4).prop_flat_map(|(a, b, c)| {
            let values = proptest::collection::vec(0u8..6, a * b * c);
            let blocks = (1..=a.min(3), 1..=b.min(3), 1..=c.min(2));
            (values, blocks).prop_map(move |(v, (x, y, z))| {
                (
                    Grid::new([a, b, c], v.into_iter().map(f64::from).collect()).unwrap(),
                    [x, y, z],
                )
            })
        })
    }

    proptest! {
        #[test]
        fn fast_classification_matches_block_rule((g, bpa) in arb_case()) {
            let cover = partition_grid(g.shape(), bpa).unwrap();
            for cell in g.shape().all_cells() {
                prop_assert_eq!(cover.classify(&cell), classify_cell(&cell, cover.blocks()).unwrap());
            }
        }

        #[test]
        fn fragments_reassemble_full_coboundary((g, bpa) in arb_case()) {
            let cover = partition_grid(g.shape(), bpa).unwrap();
            let mut merged: HashMap<CellKey, BTreeSet<CellKey>> = HashMap::new();
            for block in cover.blocks() {
                let bm = build_local_matrices(block, &g, &cover, 3);
                for (owner, si) in &bm.r_si {
                    let set = merged.entry(*owner).or_default();
                    for e in &si.entries {
                        // interior rows come from one block only
                        prop_assert!(set.insert(*e));
                    }
                    set.extend(bm.r_ss[owner].entries.iter().copied());
                }
            }
            for cell in g.shape().all_cells().filter(|c| !cover.is_interior(c)) {
                let expected: BTreeSet<CellKey> =
                    g.shape().cofacets(&cell, 3).iter().map(|t| g.key(t)).collect();
                let got = merged.remove(&g.key(&cell)).unwrap_or_default();
                prop_assert_eq!(got, expected);
            }
        }

        #[test]
        fn interior_columns_ultrasparse_after_sparsify((g, bpa) in arb_case()) {
            let cover = partition_grid(g.shape(), bpa).unwrap();
            for block in cover.blocks() {
                let mut bm = build_local_matrices(block, &g, &cover, 3);
                reduce_local(&mut bm, true);
                sparsify(&mut bm);
                prop_assert_eq!(bm.ultrasparse_violations(), 0);
            }
        }
    }
}
