use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use clap::{Parser, ValueEnum};

use distpers::io::{format_diagram, read_grid, write_diagram, write_stats, Dtype};
use distpers::pipeline::{run_pipeline, run_rank, PipelineConfig, RunOutput};
use distpers::runtime::{connect_mesh, Comm};
use distpers::{Error, Grid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TransportKind {
    /// All ranks as threads of this process.
    Inproc,
    /// One process per rank over Unix domain sockets.
    Proc,
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

/// Persistence diagrams of the lower-star filtration of a 3D scalar volume,
/// computed by distributed cohomology reduction.
#[derive(Debug, Parser)]
#[command(name = "distpers", version)]
struct Cli {
    /// Raw little-endian volume, x fastest.
    #[arg(long)]
    input: PathBuf,
    /// Grid size in vertices.
    #[arg(long, value_parser = parse_triple)]
    dims: [usize; 3],
    /// Sample type: u8, u16, f32 or f64.
    #[arg(long)]
    dtype: Dtype,
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    /// Blocks per axis; their product must equal --ranks.
    #[arg(long, value_parser = parse_triple)]
    blocks: Option<[usize; 3]>,
    /// Highest homology dimension reported.
    #[arg(long, default_value_t = 3)]
    max_dim: usize,
    #[arg(long, value_enum, default_value_t = TransportKind::Inproc)]
    transport: TransportKind,
    #[arg(long)]
    no_clearing: bool,
    #[arg(long)]
    no_sparsify: bool,
    /// Seed for splitter sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Diagram file; standard output if absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Seconds to wait for a peer before giving up.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    #[arg(long, hide = true, requires = "socket_dir")]
    worker_rank: Option<usize>,
    #[arg(long, hide = true)]
    socket_dir: Option<PathBuf>,
}

impl Cli {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            ranks: self.ranks,
            blocks: self.blocks,
            max_dim: self.max_dim,
            clearing: !self.no_clearing,
            sparsify: !self.no_sparsify,
            seed: self.seed,
            timeout: Duration::from_secs(self.timeout),
            ..PipelineConfig::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match cli.worker_rank {
                Some(r) => eprintln!("distpers: rank {r}: {e}"),
                None => eprintln!("distpers: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.config();
    cfg.validate()?;
    let grid = read_grid(&cli.input, cli.dims, cli.dtype)?;
    cfg.resolve_blocks(grid.dims())?;

    if let (Some(rank), Some(dir)) = (cli.worker_rank, &cli.socket_dir) {
        let transport = connect_mesh(dir, rank, cfg.ranks, cfg.timeout)?;
        let mut comm = Comm::with_timeout(Box::new(transport), cfg.timeout);
        run_rank(&mut comm, &grid, &cfg)?;
        return Ok(());
    }

    let out = match cli.transport {
        TransportKind::Inproc => run_pipeline(&grid, &cfg)?,
        TransportKind::Proc => run_multi_process(&grid, &cfg)?,
    };
    emit(cli, &out)
}

fn emit(cli: &Cli, out: &RunOutput) -> Result<()> {
    match &cli.output {
        Some(path) => write_diagram(&out.diagram, path)?,
        None => print!("{}", format_diagram(&out.diagram)),
    }
    if let Some(path) = &cli.stats {
        write_stats(&out.stats, path)?;
    }
    Ok(())
}

struct Workers(Vec<Child>);

impl Workers {
    fn spawn(dir: &Path, ranks: usize) -> Result<Self> {
        let exe = std::env::current_exe()
            .map_err(|e| Error::Internal(format!("cannot locate executable: {e}")))?;
        let args: Vec<String> = std::env::args().skip(1).collect();
        let mut children = Workers(Vec::new());
        for rank in 1..ranks {
            let child = Command::new(&exe)
                .args(&args)
                .arg("--worker-rank")
                .arg(rank.to_string())
                .arg("--socket-dir")
                .arg(dir)
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .spawn()
                .map_err(|e| Error::Internal(format!("cannot start rank {rank}: {e}")))?;
            children.0.push(child);
        }
        Ok(children)
    }

    /// Exit codes of all workers, killing whoever is still running at the
    /// deadline.
    fn reap(&mut self, grace: Duration) -> Vec<Option<i32>> {
        let deadline = Instant::now() + grace;
        let mut codes = vec![None; self.0.len()];
        loop {
            let mut running = false;
            for (c, code) in self.0.iter_mut().zip(codes.iter_mut()) {
                if code.is_none() {
                    match c.try_wait() {
                        Ok(Some(status)) => *code = Some(status.code().unwrap_or(3)),
                        Ok(None) => running = true,
                        Err(_) => *code = Some(3),
                    }
                }
            }
            if !running || Instant::now() >= deadline {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
        codes
    }
}

impl Drop for Workers {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn run_multi_process(grid: &Grid, cfg: &PipelineConfig) -> Result<RunOutput> {
    let dir = tempfile::tempdir()
        .map_err(|e| Error::Internal(format!("cannot create socket dir: {e}")))?;
    let mut workers = Workers::spawn(dir.path(), cfg.ranks)?;
    let result = connect_mesh(dir.path(), 0, cfg.ranks, cfg.timeout).and_then(|t| {
        let mut comm = Comm::with_timeout(Box::new(t), cfg.timeout);
        run_rank(&mut comm, grid, cfg)
    });
    let grace = if result.is_ok() {
        cfg.timeout
    } else {
        Duration::from_secs(2)
    };
    let codes = workers.reap(grace);
    let out = match result {
        Ok(out) => out.ok_or_else(|| Error::Internal("rank 0 produced no result".into()))?,
        // a worker's own failure is usually the root cause of ours
        Err(Error::Transport(msg)) => {
            return Err(match codes.iter().flatten().find(|&&c| c != 0) {
                Some(2) => Error::Config(format!("a worker rank rejected the run ({msg})")),
                _ => Error::Transport(msg),
            })
        }
        Err(e) => return Err(e),
    };
    for (i, code) in codes.iter().enumerate() {
        if *code != Some(0) {
            return Err(Error::Transport(format!(
                "rank {} exited with {code:?}",
                i + 1
            )));
        }
    }
    Ok(out)
}
