//! Ranks, messages and the bulk-synchronous collectives they use.
//!
//! A [`Transport`] moves [`Frame`]s between ranks with per-pair FIFO order.
//! [`Comm`] builds the collectives on top of it: every collective ends with a
//! round-end frame from each peer, which doubles as the barrier.

mod inproc;
mod socket;
pub mod wire;

use std::time::Duration;

use crate::error::{Error, Result};
use crate::filtration::CellKey;
use crate::reduction::Column;

pub use inproc::{in_process_mesh, run_in_process, InProcTransport};
pub use socket::{connect_mesh, socket_path, SocketTransport};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// A whole column (or a fragment of one during redistribution).
    Column(Column),
    /// Ask the receiver to erase the column of this owner.
    Clear(CellKey),
    /// One key of the splitter sample.
    Sample(CellKey),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub source: usize,
    pub destination: usize,
    pub payload: Payload,
}

/// Unit of transport: a message or the end-of-round marker carrying the
/// sender's contribution to a reduction.
#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Message(Message),
    RoundEnd {
        source: usize,
        destination: usize,
        value: u64,
    },
}

impl Frame {
    pub fn destination(&self) -> usize {
        match self {
            Frame::Message(m) => m.destination,
            Frame::RoundEnd { destination, .. } => *destination,
        }
    }
}

/// Reliable point-to-point delivery, FIFO per (source, destination) pair.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn n_ranks(&self) -> usize;
    fn send(&mut self, frame: Frame) -> Result<()>;
    /// Push buffered frames out; called at the end of every round.
    fn flush(&mut self) -> Result<()>;
    /// Next frame from `source`, failing after `timeout`.
    fn recv(&mut self, source: usize, timeout: Duration) -> Result<Frame>;
}

/// Per-destination message lists for one exchange round.
#[derive(Clone, Debug)]
pub struct Outbox {
    lists: Vec<Vec<Payload>>,
}

impl Outbox {
    pub fn new(n_ranks: usize) -> Self {
        Self {
            lists: vec![Vec::new(); n_ranks],
        }
    }

    pub fn push(&mut self, destination: usize, payload: Payload) -> Result<()> {
        let n = self.lists.len();
        self.lists
            .get_mut(destination)
            .ok_or_else(|| {
                Error::Config(format!(
                    "destination rank {destination} out of range (n = {n})"
                ))
            })?
            .push(payload);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.iter().all(Vec::is_empty)
    }

    pub fn to(&self, destination: usize) -> &[Payload] {
        &self.lists[destination]
    }
}

/// Counters of what a rank pushed through the transport.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    pub messages_sent: u64,
    pub frames_sent: u64,
    pub rounds: u64,
}

/// A rank's handle on the collective operations.
pub struct Comm {
    transport: Box<dyn Transport>,
    timeout: Duration,
    traffic: Traffic,
}

impl Comm {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self::with_timeout(transport, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(transport: Box<dyn Transport>, timeout: Duration) -> Self {
        Self {
            transport,
            timeout,
            traffic: Traffic::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn n_ranks(&self) -> usize {
        self.transport.n_ranks()
    }

    pub fn traffic(&self) -> Traffic {
        self.traffic
    }

    fn end_round(&mut self, value: u64) -> Result<()> {
        let (me, n) = (self.rank(), self.n_ranks());
        for dest in (0..n).filter(|&d| d != me) {
            self.transport.send(Frame::RoundEnd {
                source: me,
                destination: dest,
                value,
            })?;
            self.traffic.frames_sent += 1;
        }
        self.transport.flush()?;
        self.traffic.rounds += 1;
        Ok(())
    }

    /// Delivers every rank's outbox. The result holds the messages addressed
    /// to this rank, grouped by source in ascending rank order, FIFO within a
    /// source. Self-addressed messages never touch the transport.
    pub fn exchange(&mut self, outbox: Outbox) -> Result<Vec<Message>> {
        let (me, n) = (self.rank(), self.n_ranks());
        if outbox.lists.len() != n {
            return Err(Error::Config(format!(
                "outbox sized for {} ranks, communicator has {n}",
                outbox.lists.len()
            )));
        }
        let mut own = Vec::new();
        for (dest, list) in outbox.lists.into_iter().enumerate() {
            for payload in list {
                if let Payload::Column(c) = &payload {
                    validate_column(c)?;
                }
                let msg = Message {
                    source: me,
                    destination: dest,
                    payload,
                };
                if dest == me {
                    own.push(msg);
                } else {
                    self.transport.send(Frame::Message(msg))?;
                    self.traffic.messages_sent += 1;
                    self.traffic.frames_sent += 1;
                }
            }
        }
        self.end_round(0)?;

        let mut inbox = Vec::new();
        for src in 0..n {
            if src == me {
                inbox.append(&mut own);
                continue;
            }
            while let Frame::Message(m) = self.transport.recv(src, self.timeout)? {
                if m.source != src || m.destination != me {
                    return Err(Error::Protocol(format!(
                        "rank {me} got a frame {}->{} on the channel from {src}",
                        m.source, m.destination
                    )));
                }
                inbox.push(m);
            }
        }
        Ok(inbox)
    }

    /// Every rank's `local`, indexed by rank, seen by every rank.
    pub fn all_gather(&mut self, local: u64) -> Result<Vec<u64>> {
        let (me, n) = (self.rank(), self.n_ranks());
        self.end_round(local)?;
        let mut values = vec![0; n];
        values[me] = local;
        for src in (0..n).filter(|&s| s != me) {
            match self.transport.recv(src, self.timeout)? {
                Frame::RoundEnd { value, .. } => values[src] = value,
                Frame::Message(_) => {
                    return Err(Error::Protocol(format!(
                        "rank {me}: message from {src} where a collective value was expected"
                    )))
                }
            }
        }
        Ok(values)
    }

    /// Sum of `local` over all ranks, seen by every rank.
    pub fn all_reduce_sum(&mut self, local: u64) -> Result<u64> {
        Ok(self.all_gather(local)?.iter().sum())
    }

    pub fn barrier(&mut self) -> Result<()> {
        self.all_reduce_sum(0).map(|_| ())
    }

    /// Every rank's keys, concatenated in rank order, on every rank.
    pub fn all_gather_keys(&mut self, keys: &[CellKey]) -> Result<Vec<CellKey>> {
        let mut outbox = Outbox::new(self.n_ranks());
        for dest in 0..self.n_ranks() {
            for k in keys {
                outbox.push(dest, Payload::Sample(*k))?;
            }
        }
        self.exchange(outbox)?
            .into_iter()
            .map(|m| match m.payload {
                Payload::Sample(k) => Ok(k),
                other => Err(Error::Protocol(format!(
                    "expected a sample key, got {other:?}"
                ))),
            })
            .collect()
    }
}

fn validate_column(c: &Column) -> Result<()> {
    if c.entries.is_empty() {
        return Err(Error::Protocol(format!(
            "zero column {} cannot be shipped",
            c.owner
        )));
    }
    if !c.entries.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Protocol(format!(
            "column {} entries not sorted",
            c.owner
        )));
    }
    Ok(())
}
