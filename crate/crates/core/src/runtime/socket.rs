//! Unix-domain-socket mesh between processes.
//!
//! Rank r listens on `rank-{r}.sock`, dials every lower rank and announces
//! itself with a u32 hello, then accepts the higher ranks. One reader thread
//! per peer decodes frames into a channel so that writes never block on a
//! peer that is itself busy writing.

use std::io::{BufWriter, Read, Write};
use std::net::Shutdown;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use super::{wire, Frame, Transport};
use crate::error::{Error, Result};

const POLL: Duration = Duration::from_millis(5);

pub fn socket_path(dir: &Path, rank: usize) -> PathBuf {
    dir.join(format!("rank-{rank}.sock"))
}

struct Peer {
    writer: BufWriter<UnixStream>,
    inbox: Receiver<Result<Frame>>,
}

pub struct SocketTransport {
    rank: usize,
    n: usize,
    peers: Vec<Option<Peer>>,
    buf: Vec<u8>,
}

fn transport_err(what: &str, e: std::io::Error) -> Error {
    Error::Transport(format!("{what}: {e}"))
}

/// Joins the mesh as `rank` of `n`. Every rank must call this with the same
/// directory; it returns once all `n - 1` peers are connected.
pub fn connect_mesh(
    dir: &Path,
    rank: usize,
    n: usize,
    timeout: Duration,
) -> Result<SocketTransport> {
    if rank >= n {
        return Err(Error::Config(format!(
            "rank {rank} out of range for {n} ranks"
        )));
    }
    let deadline = Instant::now() + timeout;
    let listener = UnixListener::bind(socket_path(dir, rank))
        .map_err(|e| transport_err(&format!("rank {rank}: bind"), e))?;
    let mut streams: Vec<Option<UnixStream>> = (0..n).map(|_| None).collect();

    for (peer, slot) in streams.iter_mut().enumerate().take(rank) {
        let path = socket_path(dir, peer);
        let mut stream = loop {
            match UnixStream::connect(&path) {
                Ok(s) => break s,
                Err(e) if Instant::now() >= deadline => {
                    return Err(transport_err(&format!("rank {rank}: connect to {peer}"), e))
                }
                Err(_) => std::thread::sleep(POLL),
            }
        };
        stream
            .write_all(&(rank as u32).to_le_bytes())
            .map_err(|e| transport_err("hello", e))?;
        *slot = Some(stream);
    }

    listener
        .set_nonblocking(true)
        .map_err(|e| transport_err("listener", e))?;
    let mut pending = n - 1 - rank;
    while pending > 0 {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream
                    .set_nonblocking(false)
                    .map_err(|e| transport_err("accept", e))?;
                stream
                    .set_read_timeout(Some(timeout))
                    .map_err(|e| transport_err("accept", e))?;
                let mut hello = [0u8; 4];
                stream
                    .read_exact(&mut hello)
                    .map_err(|e| transport_err("hello", e))?;
                stream
                    .set_read_timeout(None)
                    .map_err(|e| transport_err("accept", e))?;
                let peer = u32::from_le_bytes(hello) as usize;
                if peer <= rank || peer >= n || streams[peer].is_some() {
                    return Err(Error::Protocol(format!(
                        "rank {rank}: unexpected hello from {peer}"
                    )));
                }
                streams[peer] = Some(stream);
                pending -= 1;
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(Error::Transport(format!(
                        "rank {rank}: {pending} peers never connected"
                    )));
                }
                std::thread::sleep(POLL);
            }
            Err(e) => return Err(transport_err("accept", e)),
        }
    }

    let mut peers = Vec::with_capacity(n);
    for stream in streams {
        let Some(stream) = stream else {
            peers.push(None);
            continue;
        };
        let mut reader = stream.try_clone().map_err(|e| transport_err("clone", e))?;
        let (tx, rx) = channel();
        std::thread::spawn(move || {
            let mut r = std::io::BufReader::new(&mut reader);
            loop {
                match wire::read_frame(&mut r) {
                    Ok(Some(f)) => {
                        if tx.send(Ok(f)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        peers.push(Some(Peer {
            writer: BufWriter::with_capacity(1 << 16, stream),
            inbox: rx,
        }));
    }
    Ok(SocketTransport {
        rank,
        n,
        peers,
        buf: Vec::new(),
    })
}

impl SocketTransport {
    fn peer(&mut self, r: usize) -> Result<&mut Peer> {
        let me = self.rank;
        self.peers
            .get_mut(r)
            .and_then(Option::as_mut)
            .ok_or_else(|| Error::Config(format!("rank {me} has no channel to {r}")))
    }
}

impl Transport for SocketTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn n_ranks(&self) -> usize {
        self.n
    }

    fn send(&mut self, frame: Frame) -> Result<()> {
        let mut buf = std::mem::take(&mut self.buf);
        let d = frame.destination();
        let res = self.peer(d).and_then(|p| {
            wire::write_frame(&mut p.writer, &frame, &mut buf).map_err(|e| transport_err("send", e))
        });
        self.buf = buf;
        res
    }

    fn flush(&mut self) -> Result<()> {
        for p in self.peers.iter_mut().flatten() {
            p.writer.flush().map_err(|e| transport_err("flush", e))?;
        }
        Ok(())
    }

    fn recv(&mut self, source: usize, timeout: Duration) -> Result<Frame> {
        let me = self.rank;
        let p = self.peer(source)?;
        match p.inbox.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(Error::Transport(format!(
                "rank {me}: no frame from {source} within {timeout:?}"
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport(format!(
                "rank {me}: connection to {source} closed"
            ))),
        }
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        for p in self.peers.iter_mut().flatten() {
            let _ = p.writer.flush();
            let _ = p.writer.get_ref().shutdown(Shutdown::Write);
        }
    }
}
