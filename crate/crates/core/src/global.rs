//! The distributed reduction loop, one dimension at a time.
//!
//! Round 1 moves every column to the rank whose segment holds its low. In
//! later rounds a rank only ships columns whose low left its segment during
//! reduction; since lows only move up the matrix, those travel to lower
//! ranks. A dimension is finished once no rank has anything left to ship.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::filtration::CellKey;
use crate::redistribution::Splitters;
use crate::reduction::{Column, ColumnStore, PivotTable, ReducedChunk};
use crate::runtime::{Comm, Message, Outbox, Payload};

/// One rank's share of the dimension currently being reduced.
#[derive(Clone, Debug)]
pub struct GlobalState {
    pub rank: usize,
    pub splitters: Splitters,
    pub dim: usize,
    pub round: u64,
    pub store: ColumnStore,
    pub pivots: PivotTable,
    /// Owners of finished columns whose low lies outside this rank's segment.
    pub updated: BTreeSet<CellKey>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReceiveStats {
    pub additions: u64,
    pub swaps: u64,
    pub erased: u64,
}

impl GlobalState {
    /// `columns` are this rank's columns of dimension `dim`, wherever their
    /// lows live; they are rearranged by the first send.
    pub fn new(rank: usize, splitters: Splitters, dim: usize, columns: ColumnStore) -> Self {
        Self {
            rank,
            splitters,
            dim,
            round: 1,
            store: columns,
            pivots: PivotTable::new(),
            updated: BTreeSet::new(),
        }
    }

    fn owns(&self, row: &CellKey) -> bool {
        self.splitters.rank_by_value(row) == self.rank
    }

    /// Columns the next send would ship.
    pub fn pending(&self) -> usize {
        self.updated
            .iter()
            .filter(|o| {
                self.store
                    .get(o)
                    .and_then(Column::low)
                    .is_some_and(|l| !self.owns(&l))
            })
            .count()
    }

    /// Round 1 addresses every column by its low (self-addressed ones stay
    /// local but still go through the exchange); later rounds ship only the
    /// columns in `updated`. Shipped columns leave the store.
    pub fn send_columns(&mut self, n_ranks: usize) -> Result<Outbox> {
        let mut outbox = Outbox::new(n_ranks);
        if self.round == 1 {
            self.pivots.clear();
            for col in self.store.drain() {
                let low = col.low().expect("stores hold nonzero columns");
                outbox.push(self.splitters.rank_by_value(&low), Payload::Column(col))?;
            }
        } else {
            for owner in std::mem::take(&mut self.updated) {
                let Some(col) = self.store.remove(&owner) else {
                    continue;
                };
                let low = col.low().expect("stores hold nonzero columns");
                let dest = self.splitters.rank_by_value(&low);
                if dest == self.rank {
                    self.store.insert(col);
                    continue;
                }
                self.pivots.release(&low, &owner);
                outbox.push(dest, Payload::Column(col))?;
            }
        }
        self.updated.clear();
        Ok(outbox)
    }

    /// Inserts the incoming columns and sweeps the store from the earliest of
    /// them to its end. A collision with a pivot to the left is a standard
    /// column addition; with a pivot to the right the current column takes
    /// over the pivot and the former pivot column is reduced further.
    pub fn receive_columns(&mut self, incoming: Vec<Column>) -> Result<ReceiveStats> {
        let mut stats = ReceiveStats::default();
        let Some(first) = incoming.iter().map(|c| c.owner).min() else {
            return Ok(stats);
        };
        for col in incoming {
            let Some(low) = col.low() else {
                return Err(Error::Protocol(format!(
                    "zero column {} received",
                    col.owner
                )));
            };
            if !self.owns(&low) {
                return Err(Error::Protocol(format!(
                    "rank {} received column {} whose low {low} it does not own",
                    self.rank, col.owner
                )));
            }
            if self.store.contains(&col.owner) {
                return Err(Error::Protocol(format!(
                    "rank {} already holds column {}",
                    self.rank, col.owner
                )));
            }
            self.store.insert(col);
        }

        let mut scratch = Vec::new();
        let mut cursor = Some(first);
        while let Some(sigma) = cursor {
            if let Some(mut col) = self.store.remove(&sigma) {
                let mut cur = sigma;
                loop {
                    let Some(low) = col.low() else {
                        self.updated.remove(&cur);
                        stats.erased += 1;
                        break;
                    };
                    match self.pivots.get(&low) {
                        Some(p) if p < cur => {
                            let pivot = self.store.get(&p).ok_or_else(|| {
                                Error::Internal(format!("pivot column {p} missing from store"))
                            })?;
                            col.add_assign(&pivot.entries, &mut scratch);
                            stats.additions += 1;
                        }
                        Some(p) if p > cur => {
                            self.pivots.set(low, cur);
                            self.finish(cur, low);
                            self.store.insert(col);
                            let mut right = self.store.remove(&p).ok_or_else(|| {
                                Error::Internal(format!("pivot column {p} missing from store"))
                            })?;
                            right.add_assign(&self.store.get(&cur).unwrap().entries, &mut scratch);
                            stats.swaps += 1;
                            cur = p;
                            col = right;
                        }
                        _ => {
                            self.pivots.set(low, cur);
                            self.finish(cur, low);
                            self.store.insert(col);
                            break;
                        }
                    }
                }
            }
            cursor = self.store.next_after(&sigma);
        }
        Ok(stats)
    }

    fn finish(&mut self, owner: CellKey, low: CellKey) {
        if self.owns(&low) {
            self.updated.remove(&owner);
        } else {
            self.updated.insert(owner);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GlobalStats {
    /// Rounds used per dimension.
    pub rounds: Vec<u64>,
    /// Column messages that crossed ranks, all rounds.
    pub columns_sent_remote: u64,
    /// Column messages after round 1 that went to a higher rank.
    pub routing_violations: u64,
    pub additions: u64,
    pub swaps: u64,
    pub cleared_globally: u64,
}

/// Per-dimension result of the loop on one rank.
#[derive(Clone, Debug, Default)]
pub struct GlobalOutcome {
    /// Final columns by dimension; every low lies in this rank's segment.
    pub columns: Vec<ColumnStore>,
    pub stats: GlobalStats,
}

fn column_payloads(me: usize, inbox: Vec<Message>) -> Result<Vec<(usize, Column)>> {
    inbox
        .into_iter()
        .map(|m| match m.payload {
            Payload::Column(c) => Ok((m.source, c)),
            other => Err(Error::Protocol(format!(
                "rank {me}: expected a column, got {other:?}"
            ))),
        })
        .collect()
}

/// Collective. Tells the holder of each low's own column that it is
/// positive; the holder drops it unreduced. Returns how many columns this
/// rank dropped.
pub fn clear_columns(
    comm: &mut Comm,
    finished: &ColumnStore,
    next: &mut ColumnStore,
    splitters: &Splitters,
) -> Result<u64> {
    let me = comm.rank();
    let mut outbox = Outbox::new(comm.n_ranks());
    for col in finished.iter() {
        let low = col.low().expect("stores hold nonzero columns");
        outbox.push(splitters.rank_by_value(&low), Payload::Clear(low))?;
    }
    let mut cleared = 0;
    for msg in comm.exchange(outbox)? {
        let Payload::Clear(key) = msg.payload else {
            return Err(Error::Protocol(format!(
                "rank {me}: expected a clear request"
            )));
        };
        if splitters.rank_by_value(&key) != me {
            return Err(Error::Protocol(format!(
                "rank {me}: clear for {key} outside its segment"
            )));
        }
        // an absent column was already zeroed by local clearing
        if next.remove(&key).is_some() {
            cleared += 1;
        }
    }
    Ok(cleared)
}

/// Collective. Reduces dimensions `0..max_dim` of the redistributed chunk.
pub fn run_global_loop(
    comm: &mut Comm,
    mut chunk: ReducedChunk,
    splitters: &Splitters,
    max_dim: usize,
    use_clearing: bool,
) -> Result<GlobalOutcome> {
    let (me, n) = (comm.rank(), comm.n_ranks());
    if chunk.columns.len() < max_dim {
        chunk.columns.resize(max_dim, ColumnStore::new());
    }
    let mut out = GlobalOutcome::default();
    for dim in 0..max_dim {
        let columns = std::mem::take(&mut chunk.columns[dim]);
        let total = comm.all_reduce_sum(columns.len() as u64)?;
        let limit = (n as u64).saturating_mul(total).max(1);
        let mut st = GlobalState::new(me, splitters.clone(), dim, columns);
        loop {
            if st.round > limit {
                return Err(Error::Internal(format!(
                    "dimension {dim}: no convergence after {limit} rounds"
                )));
            }
            let outbox = st.send_columns(n)?;
            let inbox = comm.exchange(outbox)?;
            let mut incoming = Vec::with_capacity(inbox.len());
            for (source, col) in column_payloads(me, inbox)? {
                if source != me {
                    out.stats.columns_sent_remote += 1;
                    if st.round > 1 && me > source {
                        out.stats.routing_violations += 1;
                    }
                }
                incoming.push(col);
            }
            let rs = st.receive_columns(incoming)?;
            out.stats.additions += rs.additions;
            out.stats.swaps += rs.swaps;
            if comm.all_reduce_sum(st.pending() as u64)? == 0 {
                break;
            }
            st.round += 1;
        }
        out.stats.rounds.push(st.round);
        if use_clearing && dim + 1 < max_dim {
            out.stats.cleared_globally +=
                clear_columns(comm, &st.store, &mut chunk.columns[dim + 1], splitters)?;
        }
        out.columns.push(st.store);
    }
    Ok(out)
}
