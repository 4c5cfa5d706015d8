//! Raw volume input, diagram and stats output.
//!
//! Volumes are headerless little-endian sample arrays, x fastest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::diagram::Diagram;
use crate::error::{Error, Result};
use crate::filtration::Grid;
use crate::pipeline::RunStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    U8,
    U16,
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::U16 => "u16",
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Dtype::U8 => f64::from(b[0]),
            Dtype::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Dtype::F32 => f64::from(f32::from_le_bytes(b.try_into().unwrap())),
            Dtype::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) -> Result<()> {
        let exact = match self {
            Dtype::U8 => {
                out.push(v as u8);
                v == f64::from(v as u8)
            }
            Dtype::U16 => {
                out.extend_from_slice(&(v as u16).to_le_bytes());
                v == f64::from(v as u16)
            }
            Dtype::F32 => {
                out.extend_from_slice(&(v as f32).to_le_bytes());
                v == f64::from(v as f32)
            }
            Dtype::F64 => {
                out.extend_from_slice(&v.to_le_bytes());
                true
            }
        };
        if exact {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "value {v} is not representable as {}",
                self.name()
            )))
        }
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "u16" => Ok(Dtype::U16),
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Config(format!(
                "unknown dtype {other:?} (expected u8, u16, f32 or f64)"
            ))),
        }
    }
}

pub fn decode_grid(bytes: &[u8], dims: [usize; 3], dtype: Dtype) -> Result<Grid> {
    let n: usize = dims.iter().product();
    let expected = n * dtype.width();
    if bytes.len() != expected {
        return Err(Error::Config(format!(
            "grid {}x{}x{} of {} needs {expected} bytes, got {}",
            dims[0],
            dims[1],
            dims[2],
            dtype.name(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(dtype.width())
        .map(|b| dtype.decode(b))
        .collect();
    Grid::new(dims, values)
}

pub fn read_grid(path: &Path, dims: [usize; 3], dtype: Dtype) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes, dims, dtype)
}

pub fn write_grid(path: &Path, grid: &Grid, dtype: Dtype) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.values().len() * dtype.width());
    for &v in grid.values() {
        dtype.encode(v, &mut bytes)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

/// One `dim birth death` line per pair, in the diagram's canonical order.
pub fn format_diagram(d: &Diagram) -> String {
    let mut s = String::new();
    for p in d.pairs() {
        let _ = writeln!(s, "{} {} {}", p.dim, fmt_value(p.birth), fmt_value(p.death));
    }
    s
}

pub fn write_diagram(d: &Diagram, path: &Path) -> Result<()> {
    fs::write(path, format_diagram(d)).map_err(|e| Error::io(path, e))
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

/// `key = value` lines, then a whitespace-separated per-rank table. Lines
/// starting with `time_` depend on the machine; everything else is a
/// function of the input and configuration.
pub fn format_stats(s: &RunStats) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("ranks", s.ranks.to_string());
    kv("blocks", join(&s.blocks, ","));
    kv("max_dim", s.max_dim.to_string());
    kv("clearing", s.clearing.to_string());
    kv("sparsify", s.sparsify.to_string());
    kv("seed", s.seed.to_string());
    kv("rounds_per_dim", join(&s.rounds_per_dim, ","));
    kv("cleared_locally", s.cleared_locally.to_string());
    kv("cleared_globally", s.cleared_globally.to_string());
    kv("columns_sent_remote", s.columns_sent_remote.to_string());
    kv("routing_violations", s.routing_violations.to_string());
    kv(
        "ultrasparse_violations",
        s.ultrasparse_violations.to_string(),
    );
    kv("local_additions", s.local_additions.to_string());
    kv("global_additions", s.global_additions.to_string());
    kv("pivot_swaps", s.swaps.to_string());
    kv("finite_pairs", s.finite_pairs.to_string());
    kv("diagonal_pairs", s.diagonal_pairs.to_string());
    kv("essential_pairs", s.essential_pairs.to_string());
    kv("final_column_imbalance", format!("{:.4}", s.imbalance()));
    kv("time_local_reduce", format!("{:.6}", s.times.local_reduce));
    kv("time_sparsify", format!("{:.6}", s.times.sparsify));
    kv(
        "time_redistribution",
        format!("{:.6}", s.times.redistribution),
    );
    kv("time_global_loop", format!("{:.6}", s.times.global_loop));
    kv(
        "time_reduction_total",
        format!("{:.6}", s.times.reduction_total()),
    );
    out.push('\n');
    out.push_str("rank local_columns redistributed_columns final_columns\n");
    for r in 0..s.ranks {
        let get = |v: &Vec<u64>| v.get(r).copied().unwrap_or(0);
        let _ = writeln!(
            out,
            "{r} {} {} {}",
            get(&s.local_columns),
            get(&s.redistributed_columns),
            get(&s.final_columns)
        );
    }
    out
}

pub fn write_stats(s: &RunStats, path: &Path) -> Result<()> {
    fs::write(path, format_stats(s)).map_err(|e| Error::io(path, e))
}
