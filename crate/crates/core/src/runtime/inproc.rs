//! Threads in one process, one channel per ordered rank pair.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{Comm, Frame, Transport};
use crate::error::{Error, Result};

pub struct InProcTransport {
    rank: usize,
    n: usize,
    // senders[d] delivers to rank d, receivers[s] holds frames from rank s
    senders: Vec<Option<Sender<Frame>>>,
    receivers: Vec<Option<Receiver<Frame>>>,
}

/// One connected transport per rank.
pub fn in_process_mesh(n: usize) -> Vec<InProcTransport> {
    let mut ts: Vec<InProcTransport> = (0..n)
        .map(|rank| InProcTransport {
            rank,
            n,
            senders: (0..n).map(|_| None).collect(),
            receivers: (0..n).map(|_| None).collect(),
        })
        .collect();
    for s in 0..n {
        for d in 0..n {
            if s != d {
                let (tx, rx) = channel();
                ts[s].senders[d] = Some(tx);
                ts[d].receivers[s] = Some(rx);
            }
        }
    }
    ts
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn n_ranks(&self) -> usize {
        self.n
    }

    fn send(&mut self, frame: Frame) -> Result<()> {
        let d = frame.destination();
        let tx = self
            .senders
            .get(d)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Config(format!("rank {} cannot send to {d}", self.rank)))?;
        tx.send(frame)
            .map_err(|_| Error::Transport(format!("rank {d} has gone away")))
    }

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }

    fn recv(&mut self, source: usize, timeout: Duration) -> Result<Frame> {
        let rx = self
            .receivers
            .get(source)
            .and_then(Option::as_ref)
            .ok_or_else(|| {
                Error::Config(format!("rank {} cannot receive from {source}", self.rank))
            })?;
        rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => Error::Transport(format!(
                "rank {}: no frame from {source} within {timeout:?}",
                self.rank
            )),
            RecvTimeoutError::Disconnected => {
                Error::Transport(format!("rank {}: rank {source} has gone away", self.rank))
            }
        })
    }
}

/// Runs `f` on `n` ranks, one thread each, and returns the per-rank results
/// in rank order. On failure the root cause is preferred over the transport
/// errors it triggers in the other ranks.
pub fn run_in_process<T, F>(n: usize, timeout: Duration, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Comm) -> Result<T> + Sync,
{
    if n == 0 {
        return Err(Error::Config("at least one rank is required".into()));
    }
    let results: Vec<Result<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = in_process_mesh(n)
            .into_iter()
            .map(|t| {
                let f = &f;
                scope.spawn(move || f(Comm::with_timeout(Box::new(t), timeout)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Internal("rank thread panicked".into())))
            })
            .collect()
    });
    let mut first_transport = None;
    let mut out = Vec::with_capacity(n);
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e @ Error::Transport(_)) => {
                first_transport.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    match first_transport {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
