//! Cubical complexes of 3D scalar grids with their lower-star filtration.
//!
//! Cells live on the doubled grid: coordinate `c` along an axis is a vertex
//! position when even and a unit interval when odd, so a cell's dimension is
//! the number of odd coordinates. Each cell gets a [`CellKey`] made of its
//! lower-star value and a unique id; keys are totally ordered and their
//! [`Ord`] impl is the *matrix order*, i.e. reverse filtration order.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

/// Parity classes (bitmask of odd axes) in the order their ids are laid out:
/// by dimension first, so that a face always gets a smaller id than any of
/// its cofaces.
const CLASS_ORDER: [u8; 8] = [0b000, 0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111];

/// Identity of a cell: its filtration value plus a unique id.
///
/// `Ord` is the matrix order: `a < b` iff `(a.value, a.uid) > (b.value, b.uid)`
/// lexicographically, so iterating an ordered container walks the coboundary
/// matrix from its first column to its last.
#[derive(Clone, Copy, Debug)]
pub struct CellKey {
    pub value: f64,
    pub uid: u64,
}

impl CellKey {
    pub fn new(value: f64, uid: u64) -> Self {
        Self { value, uid }
    }
}

impl Ord for CellKey {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| other.uid.cmp(&self.uid))
    }
}

impl PartialOrd for CellKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for CellKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CellKey {}

impl Hash for CellKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // uid alone identifies the cell
        self.uid.hash(state);
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.value, self.uid)
    }
}

/// `Less` when `a` precedes `b` in the matrix, `Greater` when it follows.
pub fn compare_matrix_order(a: &CellKey, b: &CellKey) -> Ordering {
    a.cmp(b)
}

/// A cell of the cubical complex, addressed by doubled-grid coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub coords: [usize; 3],
}

impl Cell {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Self { coords: [x, y, z] }
    }

    pub fn vertex(x: usize, y: usize, z: usize) -> Self {
        Self::new(2 * x, 2 * y, 2 * z)
    }

    pub fn dim(&self) -> usize {
        self.coords.iter().filter(|&&c| c % 2 == 1).count()
    }

    fn odd_mask(&self) -> u8 {
        (0..3)
            .filter(|&k| self.coords[k] % 2 == 1)
            .fold(0, |m, k| m | (1 << k))
    }

    /// Inclusive vertex range spanned by the cell along `axis`.
    pub fn vertex_span(&self, axis: usize) -> (usize, usize) {
        let c = self.coords[axis];
        if c % 2 == 1 {
            ((c - 1) / 2, c.div_ceil(2))
        } else {
            (c / 2, c / 2)
        }
    }

    /// The `2^dim` vertices of the cell, as vertex-grid coordinates.
    pub fn vertices(&self) -> impl Iterator<Item = [usize; 3]> {
        let spans = [
            self.vertex_span(0),
            self.vertex_span(1),
            self.vertex_span(2),
        ];
        (spans[2].0..=spans[2].1).flat_map(move |z| {
            (spans[1].0..=spans[1].1)
                .flat_map(move |y| (spans[0].0..=spans[0].1).map(move |x| [x, y, z]))
        })
    }

    /// Cells of dimension `dim - 1` on the boundary of this one.
    pub fn facets(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for k in 0..3 {
            let c = self.coords[k];
            if c % 2 == 1 {
                for n in [c - 1, c + 1] {
                    let mut coords = self.coords;
                    coords[k] = n;
                    out.push(Cell { coords });
                }
            }
        }
        out
    }
}

/// Shape of a vertex grid and the cell-id layout derived from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    dims: [usize; 3],
    /// id offset of every parity class, indexed by position in `CLASS_ORDER`
    offsets: [u64; 9],
}

impl Shape {
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Input(format!(
                "grid dimensions must be positive, got {dims:?}"
            )));
        }
        let mut offsets = [0u64; 9];
        for (pos, &mask) in CLASS_ORDER.iter().enumerate() {
            offsets[pos + 1] = offsets[pos] + Self::class_size(dims, mask);
        }
        Ok(Self { dims, offsets })
    }

    fn class_size(dims: [usize; 3], mask: u8) -> u64 {
        (0..3)
            .map(|k| {
                if mask & (1 << k) != 0 {
                    dims[k] as u64 - 1
                } else {
                    dims[k] as u64
                }
            })
            .product()
    }

    fn class_extents(&self, mask: u8) -> [usize; 3] {
        let mut e = self.dims;
        for (k, ext) in e.iter_mut().enumerate() {
            if mask & (1 << k) != 0 {
                *ext -= 1;
            }
        }
        e
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_vertices(&self) -> usize {
        self.dims.iter().product()
    }

    /// Total number of cells, `(2n1-1)(2n2-1)(2n3-1)`.
    pub fn n_cells(&self) -> u64 {
        self.offsets[8]
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        (0..3).all(|k| cell.coords[k] <= 2 * self.dims[k] - 2)
    }

    pub fn check(&self, cell: &Cell) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "cell {:?} outside doubled grid of {:?}",
                cell.coords, self.dims
            )))
        }
    }

    pub fn uid(&self, cell: &Cell) -> u64 {
        let mask = cell.odd_mask();
        let pos = CLASS_ORDER.iter().position(|&m| m == mask).unwrap();
        let ext = self.class_extents(mask);
        let i = cell.coords.map(|c| c / 2);
        self.offsets[pos] + (i[0] + ext[0] * (i[1] + ext[1] * i[2])) as u64
    }

    fn class_of_uid(&self, uid: u64) -> usize {
        debug_assert!(uid < self.n_cells());
        // first class whose range ends past uid; empty classes are skipped
        (0..8).find(|&pos| uid < self.offsets[pos + 1]).unwrap()
    }

    pub fn cell(&self, uid: u64) -> Cell {
        let pos = self.class_of_uid(uid);
        let mask = CLASS_ORDER[pos];
        let ext = self.class_extents(mask);
        let mut idx = (uid - self.offsets[pos]) as usize;
        let mut coords = [0; 3];
        for k in 0..3 {
            let i = idx % ext[k];
            idx /= ext[k];
            coords[k] = 2 * i + usize::from(mask & (1 << k) != 0);
        }
        Cell { coords }
    }

    pub fn dim_of_uid(&self, uid: u64) -> usize {
        CLASS_ORDER[self.class_of_uid(uid)].count_ones() as usize
    }

    /// Cofacets restricted to cells of dimension at most `max_dim`.
    pub fn cofacets(&self, cell: &Cell, max_dim: usize) -> Vec<Cell> {
        if cell.dim() >= max_dim {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(6);
        for k in 0..3 {
            let c = cell.coords[k];
            if c.is_multiple_of(2) {
                if c >= 1 {
                    let mut coords = cell.coords;
                    coords[k] = c - 1;
                    out.push(Cell { coords });
                }
                if c < 2 * self.dims[k] - 2 {
                    let mut coords = cell.coords;
                    coords[k] = c + 1;
                    out.push(Cell { coords });
                }
            }
        }
        out
    }

    /// Every cell of the doubled grid whose coordinates lie in `lo..=hi`.
    pub fn cells_in_box(&self, lo: [usize; 3], hi: [usize; 3]) -> impl Iterator<Item = Cell> {
        (lo[2]..=hi[2]).flat_map(move |z| {
            (lo[1]..=hi[1]).flat_map(move |y| (lo[0]..=hi[0]).map(move |x| Cell::new(x, y, z)))
        })
    }

    pub fn all_cells(&self) -> impl Iterator<Item = Cell> {
        let hi = self.dims.map(|n| 2 * n - 2);
        self.cells_in_box([0; 3], hi)
    }
}

/// Scalar samples on a `n1 x n2 x n3` vertex grid, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    shape: Shape,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if values.len() != shape.n_vertices() {
            return Err(Error::Input(format!(
                "grid {dims:?} needs {} values, got {}",
                shape.n_vertices(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        // -0.0 and 0.0 must compare equal under total_cmp
        let values = values
            .into_iter()
            .map(|v| if v == 0.0 { 0.0 } else { v })
            .collect();
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> [usize; 3] {
        self.shape.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vertex_value(&self, v: [usize; 3]) -> f64 {
        let d = self.shape.dims;
        self.values[v[0] + d[0] * (v[1] + d[1] * v[2])]
    }

    /// Max of the grid values over the cell's vertices.
    pub fn lower_star_value(&self, cell: &Cell) -> Result<f64> {
        self.shape.check(cell)?;
        Ok(self.value_unchecked(cell))
    }

    pub(crate) fn value_unchecked(&self, cell: &Cell) -> f64 {
        cell.vertices()
            .map(|v| self.vertex_value(v))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn key(&self, cell: &Cell) -> CellKey {
        CellKey::new(self.value_unchecked(cell), self.shape.uid(cell))
    }

    pub fn key_of_uid(&self, uid: u64) -> CellKey {
        self.key(&self.shape.cell(uid))
    }

    pub fn cofacets(&self, cell: &Cell, max_dim: usize) -> Vec<Cell> {
        self.shape.cofacets(cell, max_dim)
    }

    /// All cells up to `max_dim`, sorted by dimension and then matrix order.
    pub fn enumerate_cells(&self, max_dim: usize) -> Result<Vec<(Cell, CellKey)>> {
        if max_dim > 3 {
            return Err(Error::Config(format!(
                "max_dim must be at most 3, got {max_dim}"
            )));
        }
        let mut cells: Vec<(Cell, CellKey)> = self
            .shape
            .all_cells()
            .filter(|c| c.dim() <= max_dim)
            .map(|c| (c, self.key(&c)))
            .collect();
        cells.sort_by(|a, b| a.0.dim().cmp(&b.0.dim()).then(a.1.cmp(&b.1)));
        Ok(cells)
    }
}
