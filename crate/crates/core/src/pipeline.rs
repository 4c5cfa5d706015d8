//! The per-rank program: local reduction of one block, redistribution by
//! column key, the global loop, and the gather of the pairing on rank 0.

use std::time::{Duration, Instant};

use crate::cover::{
    blocks_for_ranks, build_local_matrices, partition_grid, reduce_local, sparsify,
};
use crate::diagram::{extract_pairs, Diagram};
use crate::error::{Error, Result};
use crate::filtration::{CellKey, Grid};
use crate::global::run_global_loop;
use crate::redistribution::{compute_splitters, redistribute_columns, DEFAULT_OVERSAMPLE};
use crate::reduction::Column;
use crate::runtime::{run_in_process, Comm, Outbox, Payload, DEFAULT_TIMEOUT};

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub ranks: usize,
    /// Blocks per axis; derived from `ranks` when absent.
    pub blocks: Option<[usize; 3]>,
    pub max_dim: usize,
    pub clearing: bool,
    pub sparsify: bool,
    pub seed: u64,
    pub oversample: usize,
    pub timeout: Duration,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ranks: 1,
            blocks: None,
            max_dim: 3,
            clearing: true,
            sparsify: true,
            seed: 0,
            oversample: DEFAULT_OVERSAMPLE,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

impl PipelineConfig {
    pub fn with_ranks(ranks: usize) -> Self {
        Self {
            ranks,
            ..Self::default()
        }
    }

    pub fn resolve_blocks(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let blocks = match self.blocks {
            Some(b) => b,
            None => blocks_for_ranks(self.ranks, dims)?,
        };
        if blocks.iter().product::<usize>() != self.ranks {
            return Err(Error::Config(format!(
                "blocks {blocks:?} do not give one block per rank for {} ranks",
                self.ranks
            )));
        }
        Ok(blocks)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranks == 0 {
            return Err(Error::Config("need at least one rank".into()));
        }
        if self.max_dim > 3 {
            return Err(Error::Config(format!(
                "max_dim must be at most 3, got {}",
                self.max_dim
            )));
        }
        if self.oversample == 0 {
            return Err(Error::Config("oversample must be positive".into()));
        }
        Ok(())
    }
}

/// Seconds spent per phase, measured on rank 0 between barriers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimes {
    pub local_reduce: f64,
    pub sparsify: f64,
    pub redistribution: f64,
    pub global_loop: f64,
}

impl PhaseTimes {
    pub fn reduction_total(&self) -> f64 {
        self.local_reduce + self.sparsify + self.redistribution + self.global_loop
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub ranks: usize,
    pub blocks: [usize; 3],
    pub max_dim: usize,
    pub clearing: bool,
    pub sparsify: bool,
    pub seed: u64,
    /// Nonzero columns of the block after local reduction, by rank.
    pub local_columns: Vec<u64>,
    /// Columns received during redistribution, by rank (fragments counted).
    pub redistributed_columns: Vec<u64>,
    /// Nonzero columns after the global loop, by rank.
    pub final_columns: Vec<u64>,
    pub rounds_per_dim: Vec<u64>,
    pub cleared_locally: u64,
    pub cleared_globally: u64,
    pub columns_sent_remote: u64,
    pub routing_violations: u64,
    pub ultrasparse_violations: u64,
    pub local_additions: u64,
    pub global_additions: u64,
    pub swaps: u64,
    pub finite_pairs: u64,
    pub diagonal_pairs: u64,
    pub essential_pairs: u64,
    pub times: PhaseTimes,
}

impl RunStats {
    /// Largest per-rank final column count over the mean.
    pub fn imbalance(&self) -> f64 {
        let n = self.final_columns.len();
        let total: u64 = self.final_columns.iter().sum();
        if n == 0 || total == 0 {
            return 1.0;
        }
        let max = *self.final_columns.iter().max().unwrap() as f64;
        max / (total as f64 / n as f64)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub diagram: Diagram,
    pub stats: RunStats,
    /// `(owner, low)` of every nonzero final column, gathered from all ranks.
    pub final_columns: Vec<(CellKey, CellKey)>,
}

struct Clock {
    last: Instant,
}

impl Clock {
    fn start(comm: &mut Comm) -> Result<Self> {
        comm.barrier()?;
        Ok(Self {
            last: Instant::now(),
        })
    }

    fn lap(&mut self, comm: &mut Comm) -> Result<f64> {
        comm.barrier()?;
        let now = Instant::now();
        let dt = (now - self.last).as_secs_f64();
        self.last = now;
        Ok(dt)
    }
}

/// Everything one rank does. Rank 0 returns the gathered result.
pub fn run_rank(comm: &mut Comm, grid: &Grid, cfg: &PipelineConfig) -> Result<Option<RunOutput>> {
    cfg.validate()?;
    let (me, n) = (comm.rank(), comm.n_ranks());
    if n != cfg.ranks {
        return Err(Error::Config(format!(
            "configured for {} ranks, running on {n}",
            cfg.ranks
        )));
    }
    let blocks = cfg.resolve_blocks(grid.dims())?;
    let cover = partition_grid(grid.shape(), blocks)?;
    let block = cover.blocks()[me];
    let max_dim = cfg.max_dim;
    let mut times = PhaseTimes::default();
    let mut clock = Clock::start(comm)?;

    let mut bm = build_local_matrices(&block, grid, &cover, max_dim);
    let local = reduce_local(&mut bm, cfg.clearing);
    times.local_reduce = clock.lap(comm)?;

    let mut ultrasparse_violations = 0;
    if cfg.sparsify {
        sparsify(&mut bm);
        ultrasparse_violations = bm.ultrasparse_violations() as u64;
    }
    times.sparsify = clock.lap(comm)?;

    let columns: Vec<Column> = bm.outgoing_columns().collect();
    let owners: Vec<CellKey> = columns.iter().map(|c| c.owner).collect();
    let splitters = match compute_splitters(comm, &owners, cfg.oversample, cfg.seed) {
        Err(Error::Config(_)) => {
            // too few nonzero columns to cut: split the cell keys instead
            let (lo, hi) = block.cell_box();
            let keys: Vec<CellKey> = grid
                .shape()
                .cells_in_box(lo, hi)
                .filter(|c| c.dim() <= max_dim)
                .map(|c| grid.key(&c))
                .collect();
            compute_splitters(comm, &keys, cfg.oversample, cfg.seed)?
        }
        other => other?,
    };
    let (chunk, rd) = redistribute_columns(
        comm,
        columns,
        &splitters,
        grid,
        &cover,
        max_dim,
        cfg.clearing,
    )?;
    times.redistribution = clock.lap(comm)?;

    let outcome = run_global_loop(comm, chunk, &splitters, max_dim, cfg.clearing)?;
    times.global_loop = clock.lap(comm)?;

    let mut outbox = Outbox::new(n);
    let mut final_here = 0u64;
    for store in &outcome.columns {
        for col in store.iter() {
            let low = col.low().expect("stores hold nonzero columns");
            outbox.push(
                0,
                Payload::Column(Column::from_sorted(col.owner, vec![low])),
            )?;
            final_here += 1;
        }
    }
    let inbox = comm.exchange(outbox)?;

    let local_columns = comm.all_gather(bm.outgoing_columns().count() as u64)?;
    let redistributed_columns = comm.all_gather(rd.columns_received)?;
    let final_columns = comm.all_gather(final_here)?;
    let g = &outcome.stats;
    let mut sum = |v: u64| comm.all_reduce_sum(v);
    let cleared_locally = sum(local.cleared + rd.chunk_reduction.cleared)?;
    let cleared_globally = sum(g.cleared_globally)?;
    let columns_sent_remote = sum(rd.columns_sent_remote + g.columns_sent_remote)?;
    let routing_violations = sum(g.routing_violations)?;
    let ultrasparse_violations = sum(ultrasparse_violations)?;
    let local_additions = sum(local.additions + rd.chunk_reduction.additions)?;
    let global_additions = sum(g.additions)?;
    let swaps = sum(g.swaps)?;

    if me != 0 {
        return Ok(None);
    }
    let mut pairs = Vec::with_capacity(inbox.len());
    for msg in inbox {
        match msg.payload {
            Payload::Column(c) if c.entries.len() == 1 => pairs.push((c.owner, c.entries[0])),
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected gather message {other:?}"
                )))
            }
        }
    }
    let extraction = extract_pairs(grid, max_dim, pairs.iter().copied())?;
    let essential_pairs = extraction.diagram.essentials().count() as u64;
    let stats = RunStats {
        ranks: n,
        blocks,
        max_dim,
        clearing: cfg.clearing,
        sparsify: cfg.sparsify,
        seed: cfg.seed,
        local_columns,
        redistributed_columns,
        final_columns,
        rounds_per_dim: g.rounds.clone(),
        cleared_locally,
        cleared_globally,
        columns_sent_remote,
        routing_violations,
        ultrasparse_violations,
        local_additions,
        global_additions,
        swaps,
        finite_pairs: extraction.finite as u64,
        diagonal_pairs: extraction.diagonal as u64,
        essential_pairs,
        times,
    };
    Ok(Some(RunOutput {
        diagram: extraction.diagram,
        stats,
        final_columns: pairs,
    }))
}

/// Runs all ranks as threads of this process.
pub fn run_pipeline(grid: &Grid, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    cfg.resolve_blocks(grid.dims())?;
    let outs = run_in_process(cfg.ranks, cfg.timeout, |mut comm| {
        run_rank(&mut comm, grid, cfg)
    })?;
    outs.into_iter()
        .next()
        .flatten()
        .ok_or_else(|| Error::Internal("rank 0 produced no result".into()))
}
