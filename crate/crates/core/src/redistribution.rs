//! Splitters by sample sort and the move from block-local matrices to a
//! matrix partitioned by column key.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cover::Cover;
use crate::error::{Error, Result};
use crate::filtration::{CellKey, Grid};
use crate::reduction::{Column, ReduceStats, ReducedChunk};
use crate::runtime::{Comm, Outbox, Payload};

pub const DEFAULT_OVERSAMPLE: usize = 32;

/// `p - 1` keys, strictly increasing in matrix order. Rank `i` owns the keys
/// from `boundaries[i - 1]` (inclusive) up to `boundaries[i]` (exclusive), so
/// rank 0 holds the largest values.
#[derive(Clone, Debug, PartialEq)]
pub struct Splitters {
    boundaries: Vec<CellKey>,
}

impl Splitters {
    pub fn single() -> Self {
        Self {
            boundaries: Vec::new(),
        }
    }

    pub fn from_boundaries(boundaries: Vec<CellKey>) -> Result<Self> {
        if !boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "splitters must be strictly increasing in matrix order".into(),
            ));
        }
        Ok(Self { boundaries })
    }

    /// Evenly spaced quantiles of a sorted, duplicate-free sample.
    pub fn from_samples(samples: &[CellKey], p: usize) -> Result<Self> {
        let m = samples.len();
        if p == 0 || m < p {
            return Err(Error::Config(format!(
                "cannot split {m} distinct keys among {p} ranks"
            )));
        }
        Self::from_boundaries((1..p).map(|i| samples[i * m / p]).collect())
    }

    pub fn boundaries(&self) -> &[CellKey] {
        &self.boundaries
    }

    pub fn n_ranks(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn rank_by_value(&self, k: &CellKey) -> usize {
        self.boundaries.partition_point(|b| b <= k)
    }
}

fn gather_sorted(comm: &mut Comm, keys: &[CellKey]) -> Result<Vec<CellKey>> {
    let mut all = comm.all_gather_keys(keys)?;
    all.sort_unstable();
    all.dedup();
    Ok(all)
}

/// Collective. Each rank contributes `oversample` random keys of its own
/// (all of them if it has fewer); if the pooled sample is too small to cut
/// into `p` segments, every key is pooled instead.
pub fn compute_splitters(
    comm: &mut Comm,
    local_keys: &[CellKey],
    oversample: usize,
    seed: u64,
) -> Result<Splitters> {
    let p = comm.n_ranks();
    if p == 1 {
        return Ok(Splitters::single());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(comm.rank() as u64);
    let picked: Vec<CellKey> = if local_keys.len() <= oversample {
        local_keys.to_vec()
    } else {
        let mut idx = sample(&mut rng, local_keys.len(), oversample).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| local_keys[i]).collect()
    };
    let mut samples = gather_sorted(comm, &picked)?;
    if samples.len() < p {
        samples = gather_sorted(comm, local_keys)?;
    }
    Splitters::from_samples(&samples, p)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RedistributionStats {
    pub columns_sent: u64,
    pub columns_sent_remote: u64,
    pub fragments_merged: u64,
    pub columns_received: u64,
    pub chunk_reduction: ReduceStats,
}

/// Set union of the fragments of each owner, in matrix order of owners.
///
/// Fragments of one owner may repeat a shared row (every block containing a
/// shared cell keeps the same untouched shared-shared part); a repeated
/// interior row means the local phase broke the block contract.
pub fn merge_fragments(
    columns: impl IntoIterator<Item = Column>,
    grid: &Grid,
    cover: &Cover,
) -> Result<Vec<Column>> {
    let shape = grid.shape();
    let mut merged: BTreeMap<CellKey, Vec<CellKey>> = BTreeMap::new();
    let mut scratch = Vec::new();
    for col in columns {
        let Some(existing) = merged.get_mut(&col.owner) else {
            merged.insert(col.owner, col.entries);
            continue;
        };
        if cover.is_interior(&shape.cell(col.owner.uid)) {
            return Err(Error::Corruption(format!(
                "interior column {} arrived twice",
                col.owner
            )));
        }
        scratch.clear();
        let (a, b) = (&existing[..], &col.entries[..]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            if a[i] == b[j] {
                if cover.is_interior(&shape.cell(a[i].uid)) {
                    return Err(Error::Corruption(format!(
                        "fragments of column {} both contain interior row {}",
                        col.owner, a[i]
                    )));
                }
                scratch.push(a[i]);
                i += 1;
                j += 1;
            } else if a[i] < b[j] {
                scratch.push(a[i]);
                i += 1;
            } else {
                scratch.push(b[j]);
                j += 1;
            }
        }
        scratch.extend_from_slice(&a[i..]);
        scratch.extend_from_slice(&b[j..]);
        std::mem::swap(existing, &mut scratch);
    }
    Ok(merged
        .into_iter()
        .map(|(owner, entries)| Column::from_sorted(owner, entries))
        .collect())
}

/// Collective. Ships every column to the rank owning its key, merges the
/// fragments of shared columns and reduces the resulting chunk.
pub fn redistribute_columns(
    comm: &mut Comm,
    columns: impl IntoIterator<Item = Column>,
    splitters: &Splitters,
    grid: &Grid,
    cover: &Cover,
    max_dim: usize,
    use_clearing: bool,
) -> Result<(ReducedChunk, RedistributionStats)> {
    let me = comm.rank();
    let mut stats = RedistributionStats::default();
    let mut outbox = Outbox::new(comm.n_ranks());
    for col in columns {
        if col.is_zero() {
            continue;
        }
        let dest = splitters.rank_by_value(&col.owner);
        stats.columns_sent += 1;
        if dest != me {
            stats.columns_sent_remote += 1;
        }
        outbox.push(dest, Payload::Column(col))?;
    }
    let inbox = comm.exchange(outbox)?;

    let shape = grid.shape();
    let mut incoming = Vec::with_capacity(inbox.len());
    for msg in inbox {
        let Payload::Column(col) = msg.payload else {
            return Err(Error::Protocol(format!(
                "rank {me}: non-column message during redistribution"
            )));
        };
        if col.owner.uid >= shape.n_cells() || shape.dim_of_uid(col.owner.uid) >= max_dim {
            return Err(Error::Protocol(format!(
                "rank {me}: column {} outside the matrix",
                col.owner
            )));
        }
        if splitters.rank_by_value(&col.owner) != me {
            return Err(Error::Protocol(format!(
                "rank {me}: column {} belongs elsewhere",
                col.owner
            )));
        }
        incoming.push(col);
    }
    stats.columns_received = incoming.len() as u64;
    let merged = merge_fragments(incoming, grid, cover)?;
    stats.fragments_merged = stats.columns_received - merged.len() as u64;

    let mut chunk = ReducedChunk::with_dims(max_dim + 1);
    for col in merged {
        chunk.columns[shape.dim_of_uid(col.owner.uid)].insert(col);
    }
    stats.chunk_reduction = chunk.reduce(use_clearing);
    Ok((chunk, stats))
}
