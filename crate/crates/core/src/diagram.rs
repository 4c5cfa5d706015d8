//! Persistence diagrams: extraction from a reduced coboundary matrix, the two
//! sequential oracles (cohomology and homology), and exact comparison.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::filtration::{CellKey, Grid};
use crate::reduction::{Column, ReducedChunk};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistencePair {
    pub dim: usize,
    pub birth: f64,
    /// `f64::INFINITY` for essential classes.
    pub death: f64,
    pub birth_cell: u64,
    pub death_cell: Option<u64>,
}

impl PersistencePair {
    pub fn is_essential(&self) -> bool {
        self.death_cell.is_none()
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.dim
            .cmp(&other.dim)
            .then(self.birth.total_cmp(&other.birth))
            .then(self.death.total_cmp(&other.death))
            .then(self.birth_cell.cmp(&other.birth_cell))
    }
}

/// Pairs sorted by (dim, birth, death, birth uid).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagram {
    pairs: Vec<PersistencePair>,
}

impl Diagram {
    pub fn new(mut pairs: Vec<PersistencePair>) -> Self {
        pairs.sort_by(PersistencePair::canonical_cmp);
        Self { pairs }
    }

    pub fn pairs(&self) -> &[PersistencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn in_dim(&self, dim: usize) -> impl Iterator<Item = &PersistencePair> + '_ {
        self.pairs.iter().filter(move |p| p.dim == dim)
    }

    pub fn essentials(&self) -> impl Iterator<Item = &PersistencePair> + '_ {
        self.pairs.iter().filter(|p| p.is_essential())
    }

    /// No cell id occurs in two pairs.
    pub fn is_partial_matching(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.pairs
            .iter()
            .all(|p| seen.insert(p.birth_cell) && p.death_cell.is_none_or(|d| seen.insert(d)))
    }
}

/// A diagram plus what was dropped or counted on the way.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub diagram: Diagram,
    /// Pairs with equal birth and death, left out of the diagram.
    pub diagonal: usize,
    /// All pairs found, diagonal ones included.
    pub finite: usize,
}

/// Reads the pairing off a globally reduced coboundary matrix given as
/// `(column owner, low)` pairs of its nonzero columns.
///
/// Fails if two columns share a low or a low still has a nonzero column of
/// its own.
pub fn extract_pairs(
    grid: &Grid,
    max_dim: usize,
    columns: impl IntoIterator<Item = (CellKey, CellKey)>,
) -> Result<Extraction> {
    let shape = grid.shape();
    let n = shape.n_cells() as usize;
    // 0 = untouched, 1 = owner of a nonzero column, 2 = low of some column
    let mut role = vec![0u8; n];
    let mut found = Vec::new();
    for (owner, low) in columns {
        let (o, l) = (owner.uid as usize, low.uid as usize);
        if o >= n || l >= n {
            return Err(Error::Internal(format!(
                "pair ({owner}, {low}) outside the complex"
            )));
        }
        if role[o] == 1 {
            return Err(Error::Internal(format!("column {owner} reported twice")));
        }
        if role[o] == 2 {
            return Err(Error::Internal(format!(
                "positive cell {owner} has a nonzero column"
            )));
        }
        if role[l] == 2 {
            return Err(Error::Internal(format!(
                "two columns share low {low}: matrix not reduced"
            )));
        }
        if role[l] == 1 {
            return Err(Error::Internal(format!(
                "positive cell {low} has a nonzero column"
            )));
        }
        let dim = shape.dim_of_uid(owner.uid);
        if shape.dim_of_uid(low.uid) != dim + 1 || low.value < owner.value {
            return Err(Error::Internal(format!("invalid pair ({owner}, {low})")));
        }
        role[o] = 1;
        role[l] = 2;
        found.push((dim, owner, low));
    }
    let finite = found.len();
    let mut pairs = Vec::with_capacity(finite);
    let mut diagonal = 0;
    for (dim, owner, low) in found {
        if owner.value == low.value {
            diagonal += 1;
        } else {
            pairs.push(PersistencePair {
                dim,
                birth: owner.value,
                death: low.value,
                birth_cell: owner.uid,
                death_cell: Some(low.uid),
            });
        }
    }
    for (uid, r) in role.iter().enumerate() {
        let uid = uid as u64;
        let dim = shape.dim_of_uid(uid);
        if *r == 0 && dim <= max_dim {
            pairs.push(PersistencePair {
                dim,
                birth: grid.key_of_uid(uid).value,
                death: f64::INFINITY,
                birth_cell: uid,
                death_cell: None,
            });
        }
    }
    Ok(Extraction {
        diagram: Diagram::new(pairs),
        diagonal,
        finite,
    })
}

/// Full coboundary matrix of the complex, one store per dimension.
pub fn coboundary_matrix(grid: &Grid, max_dim: usize) -> Result<ReducedChunk> {
    if max_dim > 3 {
        return Err(Error::Config(format!(
            "max_dim must be at most 3, got {max_dim}"
        )));
    }
    let shape = grid.shape();
    let mut chunk = ReducedChunk::with_dims(max_dim + 1);
    for cell in shape.all_cells().filter(|c| c.dim() <= max_dim) {
        let entries = shape
            .cofacets(&cell, max_dim)
            .iter()
            .map(|t| grid.key(t))
            .collect();
        chunk.columns[cell.dim()].insert(Column::new(grid.key(&cell), entries));
    }
    Ok(chunk)
}

/// Sequential cohomology: standard reduction with clearing over the whole
/// coboundary matrix.
pub fn oracle_cohomology_diagram(grid: &Grid, max_dim: usize) -> Result<Diagram> {
    let mut chunk = coboundary_matrix(grid, max_dim)?;
    chunk.reduce(true);
    let pairs = chunk
        .columns
        .iter()
        .flat_map(|s| s.iter())
        .map(|c| (c.owner, c.low().unwrap()));
    Ok(extract_pairs(grid, max_dim, pairs)?.diagram)
}

/// Sequential homology: left-to-right reduction of the boundary matrix in
/// filtration order, on plain integer indices.
pub fn oracle_homology_diagram(grid: &Grid, max_dim: usize) -> Result<Diagram> {
    if max_dim > 3 {
        return Err(Error::Config(format!(
            "max_dim must be at most 3, got {max_dim}"
        )));
    }
    let shape = grid.shape();
    let mut cells: Vec<_> = shape
        .all_cells()
        .filter(|c| c.dim() <= max_dim)
        .map(|c| (grid.key(&c), c))
        .collect();
    // filtration order: increasing (value, uid)
    cells.sort_by_key(|c| std::cmp::Reverse(c.0));
    let mut position = vec![usize::MAX; shape.n_cells() as usize];
    for (i, (k, _)) in cells.iter().enumerate() {
        position[k.uid as usize] = i;
    }

    let n = cells.len();
    let mut reduced: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut pivot_of_row = vec![usize::MAX; n];
    let mut paired = vec![false; n];
    let mut pairs = Vec::new();
    for (j, (key, cell)) in cells.iter().enumerate() {
        let mut col: Vec<usize> = cell
            .facets()
            .iter()
            .map(|f| position[shape.uid(f) as usize])
            .collect();
        col.sort_unstable();
        while let Some(&low) = col.last() {
            let other = pivot_of_row[low];
            if other == usize::MAX {
                break;
            }
            col = xor_sorted(&col, &reduced[other]);
        }
        if let Some(&low) = col.last() {
            pivot_of_row[low] = j;
            paired[low] = true;
            paired[j] = true;
            let birth = cells[low].0;
            if birth.value != key.value {
                pairs.push(PersistencePair {
                    dim: cell.dim() - 1,
                    birth: birth.value,
                    death: key.value,
                    birth_cell: birth.uid,
                    death_cell: Some(key.uid),
                });
            }
        }
        reduced.push(col);
    }
    for (i, (key, cell)) in cells.iter().enumerate() {
        if !paired[i] {
            pairs.push(PersistencePair {
                dim: cell.dim(),
                birth: key.value,
                death: f64::INFINITY,
                birth_cell: key.uid,
                death_cell: None,
            });
        }
    }
    Ok(Diagram::new(pairs))
}

fn xor_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else if a[i] > b[j] {
            out.push(b[j]);
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Outcome of [`diagrams_equal`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub equal: bool,
    pub first_difference: Option<String>,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.first_difference {
            None => write!(f, "diagrams equal"),
            Some(d) => write!(f, "{d}"),
        }
    }
}

/// Multiset equality of (birth, death) points per dimension, exact values.
pub fn diagrams_equal(a: &Diagram, b: &Diagram) -> Comparison {
    let points = |d: &Diagram| {
        let mut v: Vec<(usize, f64, f64)> =
            d.pairs.iter().map(|p| (p.dim, p.birth, p.death)).collect();
        v.sort_by(|x, y| {
            x.0.cmp(&y.0)
                .then(x.1.total_cmp(&y.1))
                .then(x.2.total_cmp(&y.2))
        });
        v
    };
    let (pa, pb) = (points(a), points(b));
    let same = |x: &(usize, f64, f64), y: &(usize, f64, f64)| {
        x.0 == y.0 && x.1.total_cmp(&y.1).is_eq() && x.2.total_cmp(&y.2).is_eq()
    };
    for (i, (x, y)) in pa.iter().zip(&pb).enumerate() {
        if !same(x, y) {
            return Comparison {
                equal: false,
                first_difference: Some(format!(
                    "point #{i} differs: dim {} ({}, {}) vs dim {} ({}, {})",
                    x.0, x.1, x.2, y.0, y.1, y.2
                )),
            };
        }
    }
    if pa.len() != pb.len() {
        let (longer, which) = if pa.len() > pb.len() {
            (&pa, "left")
        } else {
            (&pb, "right")
        };
        let extra = longer[pa.len().min(pb.len())];
        return Comparison {
            equal: false,
            first_difference: Some(format!(
                "{} points vs {}; {which} has extra dim {} ({}, {})",
                pa.len(),
                pb.len(),
                extra.0,
                extra.1,
                extra.2
            )),
        };
    }
    Comparison {
        equal: true,
        first_difference: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(dim: usize, birth: f64, death: f64, uid: u64) -> PersistencePair {
        PersistencePair {
            dim,
            birth,
            death,
            birth_cell: uid,
            death_cell: if death.is_finite() {
                Some(uid + 1000)
            } else {
                None
            },
        }
    }

    #[test]
    fn constant_grid_has_one_essential() {
        let g = Grid::new([3, 3, 2], vec![4.0; 18]).unwrap();
        for d in [
            oracle_cohomology_diagram(&g, 3).unwrap(),
            oracle_homology_diagram(&g, 3).unwrap(),
        ] {
            assert_eq!(d.len(), 1);
            let p = d.pairs()[0];
            assert_eq!((p.dim, p.birth, p.death), (0, 4.0, f64::INFINITY));
        }
    }

    #[test]
    fn two_vertex_grid() {
        let g = Grid::new([2, 1, 1], vec![0.0, 1.0]).unwrap();
        let d = oracle_cohomology_diagram(&g, 3).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(
            (d.pairs()[0].birth, d.pairs()[0].death),
            (0.0, f64::INFINITY)
        );
        let chunk = {
            let mut c = coboundary_matrix(&g, 3).unwrap();
            c.reduce(false);
            c
        };
        let cols = chunk
            .columns
            .iter()
            .flat_map(|s| s.iter())
            .map(|c| (c.owner, c.low().unwrap()));
        let ex = extract_pairs(&g, 3, cols).unwrap();
        assert_eq!(ex.diagonal, 1);
        assert_eq!(ex.finite, 1);
    }

    #[test]
    fn path_of_three_vertices() {
        let g = Grid::new([3, 1, 1], vec![0.0, 1.0, 2.0]).unwrap();
        let h = oracle_homology_diagram(&g, 3).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h.pairs()[0].is_essential() && h.pairs()[0].birth == 0.0);
        assert!(diagrams_equal(&h, &oracle_cohomology_diagram(&g, 3).unwrap()).equal);
    }

    #[test]
    fn single_vertex() {
        let g = Grid::new([1, 1, 1], vec![2.5]).unwrap();
        let d = oracle_cohomology_diagram(&g, 3).unwrap();
        assert_eq!(d.len(), 1);
        assert!(d.pairs()[0].is_essential());
    }

    #[test]
    fn ring_has_essential_loop_in_truncated_complex() {
        // 3x3 grid, edges only: the outer ring and inner cross make 4 loops
        let g = Grid::new([3, 3, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = oracle_cohomology_diagram(&g, 1).unwrap();
        let h = oracle_homology_diagram(&g, 1).unwrap();
        assert!(diagrams_equal(&c, &h).equal);
        assert_eq!(c.in_dim(1).filter(|p| p.is_essential()).count(), 4);
    }

    #[test]
    fn extraction_rejects_collisions() {
        let g = Grid::new([3, 1, 1], vec![0.0, 1.0, 2.0]).unwrap();
        let s = g.shape();
        let v0 = g.key_of_uid(0);
        let v1 = g.key_of_uid(1);
        let e = g.key(&s.cell(s.n_cells() - 1));
        assert!(extract_pairs(&g, 3, [(v0, e), (v1, e)]).is_err());
        assert!(extract_pairs(&g, 3, [(v0, e), (e, v1)]).is_err());
    }

    #[test]
    fn comparison_semantics() {
        let a = Diagram::new(vec![pair(0, 0.0, f64::INFINITY, 1), pair(1, 2.0, 3.0, 2)]);
        assert!(diagrams_equal(&a, &a).equal);
        let b = Diagram::new(vec![pair(1, 2.0, 3.0, 9), pair(0, 0.0, f64::INFINITY, 5)]);
        assert!(diagrams_equal(&a, &b).equal);
        let c = Diagram::new(vec![
            pair(0, 0.0, f64::INFINITY, 1),
            pair(1, 2.0, 3.0, 2),
            pair(1, 2.0, 3.0, 3),
        ]);
        let cmp = diagrams_equal(&a, &c);
        assert!(!cmp.equal);
        assert!(cmp.first_difference.is_some());
        assert!(a.is_partial_matching());
    }

    #[test]
    fn duality_on_small_random_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let dims = [4, 4, 4];
            let values = (0..64).map(|_| f64::from(rng.gen_range(0u8..12))).collect();
            let g = Grid::new(dims, values).unwrap();
            let c = oracle_cohomology_diagram(&g, 3).unwrap();
            let h = oracle_homology_diagram(&g, 3).unwrap();
            let cmp = diagrams_equal(&c, &h);
            assert!(cmp.equal, "{cmp}");
            // a solid box: one component, no loops or voids that survive
            assert_eq!(c.essentials().count(), 1);
            let min = g.values().iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(c.essentials().next().unwrap().birth, min);
            assert!(c.is_partial_matching());
        }
    }
}
